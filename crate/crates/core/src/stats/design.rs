//! Model formulas and the design matrices they induce.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::table::{TrialRow, TrialTable};
use super::StatsError;
use crate::corpus::Condition;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseTransform {
    Log,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedTerm {
    /// Treatment-coded condition factor with an explicit reference level.
    Condition { reference: Condition },
    Covariate { name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grouping {
    Subject,
    Item,
}

impl Grouping {
    pub fn label(self) -> &'static str {
        match self {
            Grouping::Subject => "subject",
            Grouping::Item => "item",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomTerm {
    pub grouping: Grouping,
    pub intercept: bool,
    /// Names of fixed terms (`"condition"` or a covariate name) with random slopes.
    pub slopes: Vec<String>,
}

impl RandomTerm {
    pub fn intercept(grouping: Grouping) -> Self {
        RandomTerm { grouping, intercept: true, slopes: vec![] }
    }

    pub fn with_slopes(grouping: Grouping, slopes: &[&str]) -> Self {
        RandomTerm { grouping, intercept: true, slopes: slopes.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response_transform: ResponseTransform,
    pub fixed_terms: Vec<FixedTerm>,
    pub random_terms: Vec<RandomTerm>,
}

impl ModelSpec {
    /// `log(response) ~ condition` with the given reference level and no random terms.
    pub fn condition(reference: Condition) -> Self {
        ModelSpec {
            response_transform: ResponseTransform::Log,
            fixed_terms: vec![FixedTerm::Condition { reference }],
            random_terms: vec![],
        }
    }

    /// `log(response) ~ condition + (1|item)`.
    pub fn by_item_intercepts(reference: Condition) -> Self {
        Self::condition(reference).with_random(RandomTerm::intercept(Grouping::Item))
    }

    /// By-subject and by-item intercepts plus by-item condition slopes.
    pub fn maximal(reference: Condition) -> Self {
        Self::condition(reference)
            .with_random(RandomTerm::intercept(Grouping::Subject))
            .with_random(RandomTerm::with_slopes(Grouping::Item, &["condition"]))
    }

    pub fn with_random(mut self, term: RandomTerm) -> Self {
        self.random_terms.push(term);
        self
    }

    pub fn with_transform(mut self, t: ResponseTransform) -> Self {
        self.response_transform = t;
        self
    }

    pub fn condition_reference(&self) -> Option<Condition> {
        self.fixed_terms.iter().find_map(|t| match t {
            FixedTerm::Condition { reference } => Some(*reference),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.fixed_terms.is_empty() {
            return Err(StatsError::InvalidSpec("at least one fixed term required".into()));
        }
        let mut seen = Vec::new();
        for t in &self.random_terms {
            if seen.contains(&t.grouping) {
                return Err(StatsError::InvalidSpec(format!("grouping {} used twice", t.grouping.label())));
            }
            seen.push(t.grouping);
            if !t.intercept && t.slopes.is_empty() {
                return Err(StatsError::InvalidSpec("random term without coefficients".into()));
            }
            for s in &t.slopes {
                let known = self.fixed_terms.iter().any(|f| match f {
                    FixedTerm::Condition { .. } => s == "condition",
                    FixedTerm::Covariate { name } => s == name,
                });
                if !known {
                    return Err(StatsError::InvalidSpec(format!("random slope {s:?} is not a fixed term")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.response_transform {
            ResponseTransform::Log => write!(f, "log(response) ~ ")?,
            ResponseTransform::Identity => write!(f, "response ~ ")?,
        }
        let fixed: Vec<String> = self
            .fixed_terms
            .iter()
            .map(|t| match t {
                FixedTerm::Condition { reference } => format!("condition[ref={}]", reference.label()),
                FixedTerm::Covariate { name } => name.clone(),
            })
            .collect();
        write!(f, "{}", fixed.join(" + "))?;
        for r in &self.random_terms {
            let mut parts = vec![if r.intercept { "1".to_string() } else { "0".to_string() }];
            parts.extend(r.slopes.iter().cloned());
            write!(f, " + ({}|{})", parts.join(" + "), r.grouping.label())?;
        }
        Ok(())
    }
}

/// One random-effects term laid out in `Z`: `levels.len()` blocks of width `coef_names.len()`.
#[derive(Clone, Debug)]
pub(crate) struct TermLayout {
    pub grouping: Grouping,
    pub levels: Vec<String>,
    pub coef_names: Vec<String>,
    pub offset: usize,
}

impl TermLayout {
    pub fn width(&self) -> usize {
        self.coef_names.len()
    }

    pub fn n_theta(&self) -> usize {
        let k = self.width();
        k * (k + 1) / 2
    }
}

/// Sparse row of `Z`: (column, value) pairs.
pub(crate) type SparseRow<T> = Vec<(usize, T)>;

pub(crate) struct Design<T> {
    pub y: Vec<T>,
    pub x: Matrix<T>,
    pub fixed_names: Vec<String>,
    pub z_rows: Vec<SparseRow<T>>,
    pub q: usize,
    pub terms: Vec<TermLayout>,
}

/// Canonical row order so estimates do not depend on input order.
pub(crate) fn canonical_rows(table: &TrialTable) -> Vec<&TrialRow> {
    let mut rows: Vec<&TrialRow> = table.rows().iter().collect();
    rows.sort_by(|a, b| {
        a.item_id
            .cmp(&b.item_id)
            .then_with(|| a.subject_id.cmp(&b.subject_id))
            .then_with(|| a.condition.cmp(&b.condition))
            .then_with(|| a.response.total_cmp(&b.response))
            .then_with(|| {
                let ka: Vec<_> = a.covariates.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect();
                let kb: Vec<_> = b.covariates.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect();
                ka.cmp(&kb)
            })
    });
    rows
}

/// Name of the treatment-coded coefficient for `c`, e.g. `condition[notA->B]`.
pub fn condition_dummy_name(c: Condition) -> String {
    format!("condition[{}]", c.label())
}

/// Fixed-effect columns (without intercept) for `terms` over `rows`.
pub(crate) fn fixed_columns(
    terms: &[FixedTerm],
    rows: &[&TrialRow],
) -> Result<(Vec<String>, Vec<Vec<f64>>, BTreeMap<String, Vec<usize>>), StatsError> {
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut by_term: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for term in terms {
        match term {
            FixedTerm::Condition { reference } => {
                if !rows.iter().any(|r| r.condition == *reference) {
                    return Err(StatsError::MissingCondition(*reference));
                }
                let present: Vec<Condition> =
                    Condition::ALL.into_iter().filter(|c| c != reference && rows.iter().any(|r| r.condition == *c)).collect();
                let mut idx = Vec::new();
                for c in present {
                    idx.push(names.len());
                    names.push(condition_dummy_name(c));
                    cols.push(rows.iter().map(|r| if r.condition == c { 1.0 } else { 0.0 }).collect());
                }
                by_term.insert("condition".into(), idx);
            }
            FixedTerm::Covariate { name } => {
                let col = rows
                    .iter()
                    .map(|r| {
                        r.covariates
                            .get(name)
                            .copied()
                            .ok_or_else(|| StatsError::InvalidTable(format!("row lacks covariate {name}")))
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                by_term.insert(name.clone(), vec![names.len()]);
                names.push(name.clone());
                cols.push(col);
            }
        }
    }
    Ok((names, cols, by_term))
}

pub(crate) fn transform_response<T: Scalar>(t: ResponseTransform, v: f64) -> Result<T, StatsError> {
    match t {
        ResponseTransform::Identity => Ok(T::of(v)),
        ResponseTransform::Log if v > 0.0 => Ok(T::of(v.ln())),
        ResponseTransform::Log => Err(StatsError::NonPositiveResponse(v)),
    }
}

pub(crate) fn build<T: Scalar>(table: &TrialTable, spec: &ModelSpec) -> Result<Design<T>, StatsError> {
    spec.validate()?;
    let rows = canonical_rows(table);
    if rows.is_empty() {
        return Err(StatsError::InvalidTable("empty table".into()));
    }
    let n = rows.len();
    let y = rows.iter().map(|r| transform_response(spec.response_transform, r.response)).collect::<Result<Vec<T>, _>>()?;
    let (names, cols, by_term) = fixed_columns(&spec.fixed_terms, &rows)?;
    let p = names.len() + 1;
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = T::one();
        for (j, c) in cols.iter().enumerate() {
            x[(i, j + 1)] = T::of(c[i]);
        }
    }
    let mut fixed_names = vec!["(Intercept)".to_string()];
    fixed_names.extend(names.iter().cloned());

    let mut terms = Vec::new();
    let mut z_rows: Vec<SparseRow<T>> = vec![Vec::new(); n];
    let mut offset = 0;
    for term in &spec.random_terms {
        let key = |r: &TrialRow| -> Option<String> {
            match term.grouping {
                Grouping::Subject => r.subject_id.clone(),
                Grouping::Item => Some(r.item_id.clone()),
            }
        };
        let mut levels: Vec<String> = rows.iter().filter_map(|r| key(r)).collect();
        levels.sort();
        levels.dedup();
        if levels.len() < 2 || rows.iter().any(|r| key(r).is_none()) {
            return Err(StatsError::TooFewGroups { grouping: term.grouping, groups: levels.len() });
        }
        let mut coef_names = Vec::new();
        let mut coef_cols: Vec<Option<usize>> = Vec::new();
        if term.intercept {
            coef_names.push("(Intercept)".to_string());
            coef_cols.push(None);
        }
        for s in &term.slopes {
            for &c in by_term.get(s).map(Vec::as_slice).unwrap_or(&[]) {
                coef_names.push(names[c].clone());
                coef_cols.push(Some(c));
            }
        }
        let k = coef_names.len();
        for (i, r) in rows.iter().enumerate() {
            let g = levels.binary_search(&key(r).expect("checked")).expect("level present");
            for (j, cc) in coef_cols.iter().enumerate() {
                let v = match cc {
                    None => 1.0,
                    Some(c) => cols[*c][i],
                };
                if v != 0.0 {
                    z_rows[i].push((offset + g * k + j, T::of(v)));
                }
            }
        }
        let layout = TermLayout { grouping: term.grouping, levels, coef_names, offset };
        offset += layout.levels.len() * k;
        terms.push(layout);
    }
    Ok(Design { y, x, fixed_names, z_rows, q: offset, terms })
}
