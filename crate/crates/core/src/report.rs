//! Significance-coded contrast tables and condition-mean plot data.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Condition;
use crate::scalar::mean_sd;
use crate::stats::TrialTable;

pub const MULTIPLE_TESTING_CAVEAT: &str = "p-values are not corrected for multiple comparisons.";

/// Two-sided 97.5% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("p-value {0} outside [0, 1]")]
    DomainError(f64),
    #[error("no rows to render")]
    EmptyTable,
    #[error("condition {0} has no observations")]
    MissingCondition(Condition),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `***` below .001, `**` below .01, `*` below .05, `.` below .1, else `n.s.`.
pub fn significance_code(p: f64) -> Result<&'static str, ReportError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ReportError::DomainError(p));
    }
    Ok(if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        "n.s."
    })
}

/// Rank of a code, `n.s.` = 0 through `***` = 4.
pub fn code_strength(code: &str) -> usize {
    ["n.s.", ".", "*", "**", "***"].iter().position(|c| *c == code).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub dataset: String,
    pub model: String,
    pub contrast: String,
    pub b: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub sign_code: String,
    /// Set when the fit failed; `b`, `t`, `p` are then empty.
    pub failure: Option<String>,
}

impl ContrastRow {
    pub fn fitted(dataset: &str, model: &str, contrast: &str, b: f64, t: f64, p: f64) -> Result<Self, ReportError> {
        Ok(ContrastRow {
            dataset: dataset.into(),
            model: model.into(),
            contrast: contrast.into(),
            b: Some(b),
            t: Some(t),
            p: Some(p),
            sign_code: significance_code(p)?.into(),
            failure: None,
        })
    }

    pub fn failed(dataset: &str, model: &str, contrast: &str, reason: &str) -> Self {
        ContrastRow {
            dataset: dataset.into(),
            model: model.into(),
            contrast: contrast.into(),
            b: None,
            t: None,
            p: None,
            sign_code: "n.s.".into(),
            failure: Some(reason.into()),
        }
    }

    /// `0.21 & 2.76 & **`, or `— & — & n.s.` for a failed fit.
    pub fn cell(&self) -> String {
        match (self.b, self.t) {
            (Some(b), Some(t)) if self.failure.is_none() => format!("{} & {} & {}", fmt2(b), fmt2(t), self.sign_code),
            _ => "— & — & n.s.".to_string(),
        }
    }
}

/// Two decimals, without a negative sign on values that round to zero.
pub fn fmt2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
}

fn sorted(rows: &[ContrastRow]) -> Vec<&ContrastRow> {
    let mut v: Vec<&ContrastRow> = rows.iter().collect();
    v.sort_by(|a, b| a.dataset.cmp(&b.dataset).then_with(|| a.model.cmp(&b.model)));
    v
}

/// Markdown table with one row per (dataset, model) and one column per contrast.
pub fn render_contrast_table(rows: &[ContrastRow]) -> Result<RenderedTable, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let rows = sorted(rows);
    let mut contrasts: Vec<&str> = Vec::new();
    for r in &rows {
        if !contrasts.contains(&r.contrast.as_str()) {
            contrasts.push(&r.contrast);
        }
    }
    let mut text = String::new();
    text.push_str("| Dataset | Model |");
    for c in &contrasts {
        text.push_str(&format!(" {c}: b & t & sign |"));
    }
    text.push_str("\n|---|---|");
    text.push_str(&"---|".repeat(contrasts.len()));
    text.push('\n');
    let mut keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.dataset.as_str(), r.model.as_str())).collect();
    keys.dedup();
    for (d, m) in keys {
        text.push_str(&format!("| {d} | {m} |"));
        for c in &contrasts {
            let cell = rows.iter().find(|r| r.dataset == d && r.model == m && r.contrast == *c).map(|r| r.cell()).unwrap_or_default();
            text.push_str(&format!(" {cell} |"));
        }
        text.push('\n');
    }
    let failures: Vec<&&ContrastRow> = rows.iter().filter(|r| r.failure.is_some()).collect();
    if !failures.is_empty() {
        text.push('\n');
        for (i, r) in failures.iter().enumerate() {
            text.push_str(&format!(
                "[{}] {} / {} / {}: fit failed: {}\n",
                i + 1,
                r.dataset,
                r.model,
                r.contrast,
                r.failure.as_deref().unwrap_or("")
            ));
        }
    }
    text.push_str("\nSignificance: *** p < .001, ** p < .01, * p < .05, . p < .1, n.s. otherwise. ");
    text.push_str(MULTIPLE_TESTING_CAVEAT);
    text.push('\n');

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        wtr.serialize(r)?;
    }
    let csv = String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("utf-8");
    Ok(RenderedTable { text, csv })
}

pub fn read_contrast_csv<R: Read>(r: R) -> Result<Vec<ContrastRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(ReportError::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMean {
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Single observation: sd is 0 and the interval collapses to the mean.
    pub degenerate: bool,
}

/// Mean, sd, and 95% normal interval of the (optionally log-transformed) response per condition.
pub fn condition_means(table: &TrialTable, conditions: &[Condition], log: bool) -> Result<Vec<ConditionMean>, ReportError> {
    conditions
        .iter()
        .map(|&c| {
            let xs: Vec<f64> = table
                .rows()
                .iter()
                .filter(|r| r.condition == c)
                .map(|r| if log { r.response.ln() } else { r.response })
                .collect();
            let (mean, sd) = mean_sd(&xs).ok_or(ReportError::MissingCondition(c))?;
            let half = Z_975 * sd / (xs.len() as f64).sqrt();
            Ok(ConditionMean { condition: c, n: xs.len(), mean, sd, ci_low: mean - half, ci_high: mean + half, degenerate: xs.len() < 2 })
        })
        .collect()
}

/// Plot-data CSV: `condition,n,mean,sd,ci_low,ci_high,degenerate`.
pub fn emit_condition_means<W: Write>(table: &TrialTable, conditions: &[Condition], log: bool, w: W) -> Result<(), ReportError> {
    let means = condition_means(table, conditions, log)?;
    let mut wtr = csv::Writer::from_writer(w);
    for m in &means {
        wtr.serialize(m)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ResponseKind, TrialRow};

    #[test]
    fn codes_and_boundaries() {
        assert_eq!(significance_code(0.0005).unwrap(), "***");
        assert_eq!(significance_code(0.03).unwrap(), "*");
        assert_eq!(significance_code(0.10).unwrap(), "n.s.");
        assert_eq!(significance_code(0.001).unwrap(), "**");
        assert_eq!(significance_code(0.01).unwrap(), "*");
        assert_eq!(significance_code(0.05).unwrap(), ".");
        assert!(significance_code(1.2).is_err());
        assert!(significance_code(f64::NAN).is_err());
    }

    #[test]
    fn row_formatting() {
        let r = ContrastRow::fitted("CSK", "ref", "notA vs A", 0.21, 2.76, 0.009).unwrap();
        assert_eq!(r.cell(), "0.21 & 2.76 & **");
        assert_eq!(ContrastRow::fitted("d", "m", "c", -0.001, -0.2, 0.8).unwrap().cell(), "0.00 & -0.20 & n.s.");
        assert_eq!(ContrastRow::failed("d", "m", "c", "non-convergence").cell(), "— & — & n.s.");
    }

    #[test]
    fn table_is_sorted_and_roundtrips() {
        let rows = vec![
            ContrastRow::fitted("TRIP", "b-model", "nil vs notA", 0.5, 3.1, 0.002).unwrap(),
            ContrastRow::failed("CSK", "z-model", "nil vs notA", "did not converge"),
            ContrastRow::fitted("CSK", "a-model", "nil vs notA", 0.123456789, 1.0, 0.3173105).unwrap(),
            ContrastRow::fitted("CSK", "a-model", "nil vs A", -0.4, -2.2, 0.0278).unwrap(),
        ];
        let out = render_contrast_table(&rows).unwrap();
        let lines: Vec<&str> = out.text.lines().collect();
        assert_eq!(lines[0], "| Dataset | Model | nil vs notA: b & t & sign | nil vs A: b & t & sign |");
        assert_eq!(lines[2], "| CSK | a-model | 0.12 & 1.00 & n.s. | -0.40 & -2.20 & * |");
        assert_eq!(lines[3], "| CSK | z-model | — & — & n.s. |  |");
        assert_eq!(lines[4], "| TRIP | b-model | 0.50 & 3.10 & ** |  |");
        assert!(out.text.contains("[1] CSK / z-model / nil vs notA: fit failed: did not converge"));
        assert!(out.text.contains(MULTIPLE_TESTING_CAVEAT));
        assert!(out.csv.contains("0.123456789"));
        let back = read_contrast_csv(out.csv.as_bytes()).unwrap();
        assert_eq!(render_contrast_table(&back).unwrap(), out);
        assert!(matches!(render_contrast_table(&[]), Err(ReportError::EmptyTable)));
    }

    #[test]
    fn means_and_degenerate_intervals() {
        let rows = vec![
            TrialRow::new(Some("s"), "i1", Condition::AffirmedAB, 50.0),
            TrialRow::new(Some("s"), "i2", Condition::AffirmedAB, 60.0),
            TrialRow::new(Some("s"), "i3", Condition::NegatedAB, 70.0),
        ];
        let t = TrialTable::new(ResponseKind::RtMsPerChar, rows).unwrap();
        let m = condition_means(&t, &[Condition::AffirmedAB, Condition::NegatedAB], false).unwrap();
        assert_eq!(m[0].mean, 55.0);
        assert!((m[0].sd - 7.0711).abs() < 1e-4);
        assert!(!m[0].degenerate);
        assert!(m[1].degenerate && m[1].sd == 0.0 && m[1].ci_low == m[1].ci_high);
        assert!(matches!(condition_means(&t, &[Condition::OmittedNilB], false), Err(ReportError::MissingCondition(_))));
        let mut buf = Vec::new();
        emit_condition_means(&t, &[Condition::AffirmedAB], false, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("condition,n,mean,sd,ci_low,ci_high,degenerate\nA->B,2,55.0,"));
    }
}
