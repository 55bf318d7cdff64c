use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::corpus::Condition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseKind {
    RtMsPerChar,
    SurprisalNats,
    Likert0to7,
}

impl ResponseKind {
    pub fn label(self) -> &'static str {
        match self {
            ResponseKind::RtMsPerChar => "RtMsPerChar",
            ResponseKind::SurprisalNats => "SurprisalNats",
            ResponseKind::Likert0to7 => "Likert0to7",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "RtMsPerChar" => Some(ResponseKind::RtMsPerChar),
            "SurprisalNats" => Some(ResponseKind::SurprisalNats),
            "Likert0to7" => Some(ResponseKind::Likert0to7),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub subject_id: Option<String>,
    pub item_id: String,
    pub condition: Condition,
    pub response: f64,
    pub covariates: BTreeMap<String, f64>,
}

impl TrialRow {
    pub fn new(subject_id: Option<&str>, item_id: &str, condition: Condition, response: f64) -> Self {
        TrialRow {
            subject_id: subject_id.map(str::to_string),
            item_id: item_id.to_string(),
            condition,
            response,
            covariates: BTreeMap::new(),
        }
    }
}

/// Long-format observations, one row per trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialTable {
    response_kind: ResponseKind,
    rows: Vec<TrialRow>,
}

impl TrialTable {
    pub fn new(response_kind: ResponseKind, rows: Vec<TrialRow>) -> Result<Self, StatsError> {
        for (i, r) in rows.iter().enumerate() {
            let bad = |msg: &str| Err(StatsError::InvalidTable(format!("row {i}: {msg}")));
            if r.item_id.trim().is_empty() {
                return bad("missing item_id");
            }
            if !r.response.is_finite() {
                return bad("non-finite response");
            }
            match response_kind {
                ResponseKind::Likert0to7 => {
                    if r.response.fract() != 0.0 || !(0.0..=7.0).contains(&r.response) {
                        return bad("Likert response must be an integer in [0, 7]");
                    }
                }
                ResponseKind::RtMsPerChar if r.response <= 0.0 => return bad("reading time must be positive"),
                _ => {}
            }
        }
        Ok(TrialTable { response_kind, rows })
    }

    pub fn response_kind(&self) -> ResponseKind {
        self.response_kind
    }

    pub fn rows(&self) -> &[TrialRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn conditions(&self) -> BTreeSet<Condition> {
        self.rows.iter().map(|r| r.condition).collect()
    }

    /// Rows whose condition is one of `keep`.
    pub fn subset(&self, keep: &[Condition]) -> TrialTable {
        TrialTable {
            response_kind: self.response_kind,
            rows: self.rows.iter().filter(|r| keep.contains(&r.condition)).cloned().collect(),
        }
    }

    pub fn map_responses(&self, f: impl Fn(f64) -> f64) -> Result<TrialTable, StatsError> {
        let rows = self.rows.iter().map(|r| TrialRow { response: f(r.response), ..r.clone() }).collect();
        TrialTable::new(self.response_kind, rows)
    }

    fn covariate_names(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.covariates.keys()).collect();
        names.into_iter().cloned().collect()
    }

    /// CSV with columns `subject_id,item_id,condition,response,response_kind` plus covariates.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StatsError> {
        let covs = self.covariate_names();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["subject_id", "item_id", "condition", "response", "response_kind"];
        header.extend(covs.iter().map(String::as_str));
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.clone().unwrap_or_default(),
                r.item_id.clone(),
                r.condition.label().to_string(),
                r.response.to_string(),
                self.response_kind.label().to_string(),
            ];
            rec.extend(covs.iter().map(|c| r.covariates.get(c).map(|v| v.to_string()).unwrap_or_default()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<TrialTable, StatsError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| StatsError::InvalidTable(format!("missing column {name}")))
        };
        let (si, ii, ci, ri, ki) =
            (col("subject_id")?, col("item_id")?, col("condition")?, col("response")?, col("response_kind")?);
        let cov_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![si, ii, ci, ri, ki].contains(i))
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect();
        let mut kind = None;
        let mut rows = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: String| StatsError::InvalidTable(format!("line {}: {msg}", n + 2));
            let k = ResponseKind::parse(&rec[ki]).ok_or_else(|| bad(format!("unknown response_kind {:?}", &rec[ki])))?;
            if *kind.get_or_insert(k) != k {
                return Err(bad("mixed response kinds".into()));
            }
            let condition: Condition = rec[ci].parse().map_err(|e| bad(format!("{e}")))?;
            let response: f64 = rec[ri].trim().parse().map_err(|_| bad(format!("bad response {:?}", &rec[ri])))?;
            let subject = rec[si].trim();
            let mut covariates = BTreeMap::new();
            for (i, name) in &cov_cols {
                let v = rec[*i].trim();
                if !v.is_empty() {
                    let x: f64 = v.parse().map_err(|_| bad(format!("bad covariate {name}={v:?}")))?;
                    covariates.insert(name.clone(), x);
                }
            }
            rows.push(TrialRow {
                subject_id: (!subject.is_empty()).then(|| subject.to_string()),
                item_id: rec[ii].trim().to_string(),
                condition,
                response,
                covariates,
            });
        }
        TrialTable::new(kind.unwrap_or(ResponseKind::RtMsPerChar), rows)
    }
}
