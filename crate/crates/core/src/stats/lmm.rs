//! Linear mixed-effects models fitted by REML.
//!
//! The random-effects covariance of each term is `σ² T Tᵀ` with `T` a
//! lower-triangular relative Cholesky factor whose entries form `θ`. For a
//! given `θ` the fixed effects and `σ²` are profiled out through the
//! penalized least-squares system
//!
//! ```text
//! [ΛᵀZᵀZΛ + I   ΛᵀZᵀX] [u]   [ΛᵀZᵀy]
//! [XᵀZΛ         XᵀX  ] [β] = [Xᵀy  ]
//! ```
//!
//! and the profiled REML deviance
//! `log|L|² + log|R_X|² + (n-p)(1 + log(2π r²/(n-p)))` is minimized over `θ`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::design::{build, Design, Grouping, ModelSpec, ResponseTransform, TermLayout};
use super::linalg::{
    back_solve_transposed, cholesky, cholesky_inverse, dot, forward_solve, forward_solve_matrix, Matrix,
};
use super::optim::{minimize, Bounds, NelderMeadOptions};
use super::table::{TrialRow, TrialTable};
use super::{PMethod, StatsError};
use crate::corpus::Condition;
use crate::report::significance_code;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct FitOptions<T> {
    pub optimizer: NelderMeadOptions<T>,
    pub p_method: PMethod,
    /// Evaluate at this `θ` instead of optimizing (e.g. all zeros for OLS).
    pub fixed_theta: Option<Vec<T>>,
    /// Diagonal `θ` entries below this mark a singular (boundary) fit.
    pub singular_tol: T,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions {
            optimizer: NelderMeadOptions::default(),
            p_method: PMethod::Normal,
            fixed_theta: None,
            singular_tol: T::of(1e-4),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedEffectEstimate<T> {
    pub name: String,
    pub b: T,
    pub se: T,
    pub t: T,
    pub p: T,
    pub sign_code: String,
}

impl<T: Scalar> FixedEffectEstimate<T> {
    pub fn new(name: impl Into<String>, b: T, se: T, p_method: PMethod) -> Self {
        let t = b / se;
        let p = T::of(p_method.two_sided(t.f64()));
        let sign_code = significance_code(p.f64()).unwrap_or("n.s.").to_string();
        FixedEffectEstimate { name: name.into(), b, se, t, p, sign_code }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceComponent<T> {
    pub grouping: Grouping,
    pub levels: usize,
    pub coef_names: Vec<String>,
    pub sd: Vec<T>,
    /// Row-major strict lower triangle of the correlation matrix.
    pub correlations: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub formula: String,
    pub spec: ModelSpec,
    pub outcome: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixedModelFit<T> {
    pub spec: ModelSpec,
    pub formula: String,
    pub fixed_names: Vec<String>,
    pub beta: Vec<T>,
    pub sigma2: T,
    pub theta: Vec<T>,
    pub reml_criterion: T,
    pub reml_at_start: T,
    pub converged: bool,
    pub singular: bool,
    pub evaluations: usize,
    pub n_obs: usize,
    pub n_groups: Vec<(Grouping, usize)>,
    pub estimates: Vec<FixedEffectEstimate<T>>,
    pub variance_components: Vec<VarianceComponent<T>>,
    pub p_method: PMethod,
    pub simplification_trace: Vec<TraceStep>,
}

impl<T: Scalar> MixedModelFit<T> {
    pub fn estimate(&self, name: &str) -> Option<&FixedEffectEstimate<T>> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// Estimate of `comparison` against the reference level of the condition factor.
    pub fn condition_effect(&self, comparison: Condition) -> Option<&FixedEffectEstimate<T>> {
        self.estimate(&super::design::condition_dummy_name(comparison))
    }

    /// Draws a new response vector from the fitted model over the rows of `table`.
    pub fn simulate<R: Rng + ?Sized>(&self, table: &TrialTable, rng: &mut R) -> Result<TrialTable, StatsError> {
        let design: Design<T> = build(table, &self.spec)?;
        let reml = Reml::new(&design);
        let sigma = self.sigma2.sqrt();
        let u: Vec<T> = (0..design.q).map(|_| T::of(StandardNormal.sample(rng))).collect();
        let lambda_u = reml.lambda_mul(&self.theta, &u);
        let rows = super::design::canonical_rows(table);
        let mut out = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            let zb: T = design.z_rows[i].iter().map(|&(c, v)| v * lambda_u[c]).sum();
            let eta = dot(design.x.row(i), &self.beta) + sigma * (zb + T::of(eps));
            let response = match self.spec.response_transform {
                ResponseTransform::Log => eta.f64().exp(),
                ResponseTransform::Identity => eta.f64(),
            };
            out.push(TrialRow { response, ..(*r).clone() });
        }
        TrialTable::new(table.response_kind(), out)
    }
}

/// Cross-products of the design, computed once per fit.
struct Reml<'a, T> {
    design: &'a Design<T>,
    n: usize,
    p: usize,
    xtx: Matrix<T>,
    xty: Vec<T>,
    ztz: Matrix<T>,
    ztx: Matrix<T>,
    zty: Vec<T>,
}

struct Pls<T> {
    beta: Vec<T>,
    rx: Matrix<T>,
    r2: T,
    deviance: T,
}

impl<'a, T: Scalar> Reml<'a, T> {
    fn new(design: &'a Design<T>) -> Self {
        let n = design.y.len();
        let p = design.x.cols();
        let q = design.q;
        let mut ztz = Matrix::zeros(q, q);
        let mut ztx = Matrix::zeros(q, p);
        let mut zty = vec![T::zero(); q];
        for (i, row) in design.z_rows.iter().enumerate() {
            let xi = design.x.row(i);
            for &(a, va) in row {
                for &(b, vb) in row {
                    ztz[(a, b)] += va * vb;
                }
                for (j, &xij) in xi.iter().enumerate() {
                    ztx[(a, j)] += va * xij;
                }
                zty[a] += va * design.y[i];
            }
        }
        Reml {
            design,
            n,
            p,
            xtx: design.x.gram(),
            xty: design.x.transpose_vec(&design.y),
            ztz,
            ztx,
            zty,
        }
    }

    fn theta_len(&self) -> usize {
        self.design.terms.iter().map(TermLayout::n_theta).sum()
    }

    fn theta_start(&self) -> Vec<T> {
        let mut th = Vec::new();
        for t in &self.design.terms {
            let k = t.width();
            for j in 0..k {
                for i in j..k {
                    th.push(if i == j { T::one() } else { T::zero() });
                }
            }
        }
        th
    }

    fn bounds(&self) -> Bounds<T> {
        let mut lower = Vec::new();
        for t in &self.design.terms {
            let k = t.width();
            for j in 0..k {
                for i in j..k {
                    lower.push((i == j).then_some(T::zero()));
                }
            }
        }
        let n = lower.len();
        Bounds { lower, upper: vec![None; n] }
    }

    /// Lower-triangular templates, one per term.
    fn templates(&self, theta: &[T]) -> Vec<Matrix<T>> {
        let mut pos = 0;
        self.design
            .terms
            .iter()
            .map(|t| {
                let k = t.width();
                let mut m = Matrix::zeros(k, k);
                for j in 0..k {
                    for i in j..k {
                        m[(i, j)] = theta[pos];
                        pos += 1;
                    }
                }
                m
            })
            .collect()
    }

    /// Iterates `(first column, template index, width)` over the blocks of Λ.
    fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.design.terms.iter().enumerate().flat_map(|(ti, t)| {
            let k = t.width();
            (0..t.levels.len()).map(move |g| (t.offset + g * k, ti, k))
        })
    }

    fn lambda_mul(&self, theta: &[T], v: &[T]) -> Vec<T> {
        let tmpl = self.templates(theta);
        let mut out = vec![T::zero(); v.len()];
        for (c0, ti, k) in self.blocks() {
            let t = &tmpl[ti];
            for i in 0..k {
                out[c0 + i] = (0..=i).map(|j| t[(i, j)] * v[c0 + j]).sum();
            }
        }
        out
    }

    /// `Λᵀ M` for a matrix with `q` rows.
    fn lambda_t_left(&self, tmpl: &[Matrix<T>], m: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for (c0, ti, k) in self.blocks() {
            let t = &tmpl[ti];
            for j in 0..k {
                for l in j..k {
                    let w = t[(l, j)];
                    if w == T::zero() {
                        continue;
                    }
                    for c in 0..m.cols() {
                        out[(c0 + j, c)] += w * m[(c0 + l, c)];
                    }
                }
            }
        }
        out
    }

    /// `M Λ` for a matrix with `q` columns.
    fn right_lambda(&self, tmpl: &[Matrix<T>], m: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for (c0, ti, k) in self.blocks() {
            let t = &tmpl[ti];
            for j in 0..k {
                for l in j..k {
                    let w = t[(l, j)];
                    if w == T::zero() {
                        continue;
                    }
                    for r in 0..m.rows() {
                        out[(r, c0 + j)] += m[(r, c0 + l)] * w;
                    }
                }
            }
        }
        out
    }

    fn solve(&self, theta: &[T]) -> Option<Pls<T>> {
        let q = self.design.q;
        let (n, p) = (self.n, self.p);
        let tmpl = self.templates(theta);

        let mut a = self.lambda_t_left(&tmpl, &self.right_lambda(&tmpl, &self.ztz));
        for i in 0..q {
            a[(i, i)] += T::one();
        }
        let l = cholesky(&a, T::zero())?;
        let lzty = self.lambda_t_left(&tmpl, &Matrix::from_rows(q, 1, self.zty.clone()));
        let cu = forward_solve(&l, &(0..q).map(|i| lzty[(i, 0)]).collect::<Vec<_>>());
        let rzx = forward_solve_matrix(&l, &self.lambda_t_left(&tmpl, &self.ztx));

        let mut xtx_adj = self.xtx.clone();
        let rtr = rzx.gram();
        for i in 0..p {
            for j in 0..p {
                xtx_adj[(i, j)] -= rtr[(i, j)];
            }
        }
        let rx = cholesky(&xtx_adj, T::of(T::EPS.sqrt()))?;
        let rzx_cu = rzx.transpose_vec(&cu);
        let rhs: Vec<T> = self.xty.iter().zip(&rzx_cu).map(|(&a, &b)| a - b).collect();
        let beta = back_solve_transposed(&rx, &forward_solve(&rx, &rhs));

        let rzx_beta = rzx.matvec(&beta);
        let u = back_solve_transposed(&l, &cu.iter().zip(&rzx_beta).map(|(&a, &b)| a - b).collect::<Vec<_>>());
        let lambda_u = self.lambda_mul(theta, &u);
        let mut r2: T = u.iter().map(|&v| v * v).sum();
        for i in 0..n {
            let zb: T = self.design.z_rows[i].iter().map(|&(c, v)| v * lambda_u[c]).sum();
            let res = self.design.y[i] - dot(self.design.x.row(i), &beta) - zb;
            r2 += res * res;
        }
        let two = T::of(2.0);
        let logdet_l: T = (0..q).map(|i| l[(i, i)].ln()).sum::<T>() * two;
        let logdet_rx: T = (0..p).map(|i| rx[(i, i)].ln()).sum::<T>() * two;
        let df = T::of_usize(n - p);
        let deviance = logdet_l
            + logdet_rx
            + df * (T::one() + (T::of(2.0 * std::f64::consts::PI) * r2 / df).ln());
        Some(Pls { beta, rx, r2, deviance })
    }
}

/// Fits `spec` to `table` by REML.
pub fn fit_lmm<T: Scalar>(
    table: &TrialTable,
    spec: &ModelSpec,
    opts: &FitOptions<T>,
) -> Result<MixedModelFit<T>, StatsError> {
    let design: Design<T> = build(table, spec)?;
    let n = design.y.len();
    let p = design.x.cols();
    if n <= p || cholesky(&design.x.gram(), T::of(T::EPS.sqrt())).is_none() {
        return Err(StatsError::RankDeficient);
    }
    let reml = Reml::new(&design);
    let start = reml.theta_start();
    let deviance = |th: &[T]| reml.solve(th).map_or(T::infinity(), |s| s.deviance);

    let (theta, evaluations, converged, reml_at_start) = match &opts.fixed_theta {
        Some(th) => {
            if th.len() != reml.theta_len() {
                return Err(StatsError::InvalidSpec(format!(
                    "fixed theta has {} entries, model needs {}",
                    th.len(),
                    reml.theta_len()
                )));
            }
            (th.clone(), 1, true, deviance(&start))
        }
        None if start.is_empty() => (start.clone(), 1, true, deviance(&start)),
        None => {
            let m = minimize(deviance, &start, &reml.bounds(), &opts.optimizer);
            if !m.converged {
                return Err(StatsError::NonConvergence { formula: spec.to_string(), evaluations: m.evals });
            }
            (m.x, m.evals, true, m.f_start)
        }
    };

    let sol = reml.solve(&theta).ok_or(StatsError::RankDeficient)?;
    let sigma2 = sol.r2 / T::of_usize(n - p);
    let cov = cholesky_inverse(&sol.rx);
    let estimates = design
        .fixed_names
        .iter()
        .enumerate()
        .map(|(j, name)| FixedEffectEstimate::new(name.clone(), sol.beta[j], (sigma2 * cov[(j, j)]).sqrt(), opts.p_method))
        .collect();

    let templates = reml.templates(&theta);
    let mut singular = false;
    let variance_components = design
        .terms
        .iter()
        .zip(&templates)
        .map(|(term, t)| {
            let k = term.width();
            singular |= (0..k).any(|i| t[(i, i)] < opts.singular_tol);
            let cov = t.matmul(&t.transpose());
            let sd: Vec<T> = (0..k).map(|i| (sigma2 * cov[(i, i)]).sqrt()).collect();
            let mut correlations = Vec::new();
            for i in 0..k {
                for j in 0..i {
                    let denom = (cov[(i, i)] * cov[(j, j)]).sqrt();
                    correlations.push(if denom > T::zero() { cov[(i, j)] / denom } else { T::zero() });
                }
            }
            VarianceComponent {
                grouping: term.grouping,
                levels: term.levels.len(),
                coef_names: term.coef_names.clone(),
                sd,
                correlations,
            }
        })
        .collect();

    Ok(MixedModelFit {
        spec: spec.clone(),
        formula: spec.to_string(),
        fixed_names: design.fixed_names.clone(),
        beta: sol.beta,
        sigma2,
        theta,
        reml_criterion: sol.deviance,
        reml_at_start,
        converged,
        singular,
        evaluations,
        n_obs: n,
        n_groups: design.terms.iter().map(|t| (t.grouping, t.levels.len())).collect(),
        estimates,
        variance_components,
        p_method: opts.p_method,
        simplification_trace: vec![TraceStep { formula: spec.to_string(), spec: spec.clone(), outcome: "converged".into() }],
    })
}

/// The fixed ladder of fallbacks tried after `maximal`.
pub fn simplification_ladder(maximal: &ModelSpec) -> Vec<ModelSpec> {
    let mut ladder = vec![maximal.clone()];
    let mut no_slopes = maximal.clone();
    no_slopes.random_terms.iter_mut().for_each(|t| {
        t.slopes.clear();
        t.intercept = true;
    });
    let mut no_subject = no_slopes.clone();
    no_subject.random_terms.retain(|t| t.grouping != Grouping::Subject);
    let mut item_only = maximal.clone();
    item_only.random_terms = vec![super::design::RandomTerm::intercept(Grouping::Item)];
    for s in [no_slopes, no_subject, item_only] {
        if ladder.last() != Some(&s) && !s.random_terms.is_empty() {
            ladder.push(s);
        }
    }
    ladder
}

/// Fits the maximal spec, descending the ladder on non-convergence, singular
/// fits, or random terms with too few groups. The last rung accepts a singular fit.
pub fn fit_with_simplification<T: Scalar>(
    table: &TrialTable,
    maximal: &ModelSpec,
    opts: &FitOptions<T>,
) -> Result<MixedModelFit<T>, StatsError> {
    let ladder = simplification_ladder(maximal);
    let mut trace = Vec::new();
    let last = ladder.len() - 1;
    let mut last_err = None;
    for (i, spec) in ladder.iter().enumerate() {
        let step = |outcome: &str| TraceStep { formula: spec.to_string(), spec: spec.clone(), outcome: outcome.into() };
        match fit_lmm(table, spec, opts) {
            Ok(fit) if !fit.singular || i == last => {
                trace.push(step(if fit.singular { "converged (singular)" } else { "converged" }));
                return Ok(MixedModelFit { simplification_trace: trace, ..fit });
            }
            Ok(_) => trace.push(step("singular")),
            Err(e @ StatsError::NonConvergence { .. }) => {
                trace.push(step("non-convergence"));
                last_err = Some(e);
            }
            Err(e @ StatsError::TooFewGroups { .. }) => {
                trace.push(step("too few groups"));
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| StatsError::NonConvergence { formula: maximal.to_string(), evaluations: 0 }))
}

#[derive(Clone, Debug, Serialize)]
pub struct Contrast<T> {
    pub reference: Condition,
    pub comparison: Condition,
    pub estimate: FixedEffectEstimate<T>,
    pub fit: MixedModelFit<T>,
}

/// Fits `spec` on the rows of the two conditions with `reference` as the
/// baseline level; positive `b` means `comparison` has the larger response.
pub fn contrast<T: Scalar>(
    table: &TrialTable,
    reference: Condition,
    comparison: Condition,
    spec: &ModelSpec,
    simplify: bool,
    opts: &FitOptions<T>,
) -> Result<Contrast<T>, StatsError> {
    let present = table.conditions();
    for c in [reference, comparison] {
        if !present.contains(&c) {
            return Err(StatsError::MissingCondition(c));
        }
    }
    let sub = table.subset(&[reference, comparison]);
    let mut spec = spec.clone();
    spec.fixed_terms.retain(|t| !matches!(t, super::design::FixedTerm::Condition { .. }));
    spec.fixed_terms.insert(0, super::design::FixedTerm::Condition { reference });
    let fit = if simplify { fit_with_simplification(&sub, &spec, opts)? } else { fit_lmm(&sub, &spec, opts)? };
    let estimate = fit.condition_effect(comparison).cloned().ok_or(StatsError::MissingCondition(comparison))?;
    Ok(Contrast { reference, comparison, estimate, fit })
}
