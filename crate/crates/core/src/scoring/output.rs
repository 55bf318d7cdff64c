use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Mode, RegionScore, ScoringError};
use crate::corpus::Condition;

pub const TOKEN_CSV_HEADER: &str = "story_id,condition,mode,backend,token_index,token_text,start,end,logprob,surprisal,clamped";

/// One row of the per-region summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub story_id: String,
    pub condition: Condition,
    pub mode: Mode,
    pub backend: String,
    pub n_tokens: usize,
    pub n_words: usize,
    pub mean_per_word_surprisal: f64,
    pub mean_per_token_surprisal: f64,
    pub total_nll: f64,
}

#[derive(Serialize)]
struct TokenRow<'a> {
    story_id: &'a str,
    condition: Condition,
    mode: Mode,
    backend: &'a str,
    token_index: usize,
    token_text: &'a str,
    start: usize,
    end: usize,
    logprob: f64,
    surprisal: f64,
    clamped: bool,
}

pub fn write_token_csv<W: Write>(scores: &[RegionScore], w: W) -> Result<(), ScoringError> {
    let mut wtr = csv::Writer::from_writer(w);
    if scores.iter().all(|s| s.token_scores.is_empty()) {
        wtr.write_record(TOKEN_CSV_HEADER.split(','))?;
    }
    for s in scores {
        for (i, t) in s.token_scores.iter().enumerate() {
            wtr.serialize(TokenRow {
                story_id: &s.story_id,
                condition: s.condition,
                mode: s.mode,
                backend: &s.backend_name,
                token_index: i,
                token_text: &t.token_text,
                start: t.char_span.0,
                end: t.char_span.1,
                logprob: t.logprob,
                surprisal: t.surprisal_nats,
                clamped: t.clamped,
            })?;
        }
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[RegionSummary], w: W) -> Result<(), ScoringError> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record([
            "story_id",
            "condition",
            "mode",
            "backend",
            "n_tokens",
            "n_words",
            "mean_per_word_surprisal",
            "mean_per_token_surprisal",
            "total_nll",
        ])?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<RegionSummary>, ScoringError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(ScoringError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::TokenScore;

    #[test]
    fn csv_roundtrip_and_headers() {
        let tokens = vec![
            TokenScore::from_logprob("added,".into(), (4, 10), -2.5).unwrap(),
            TokenScore::from_logprob("x".into(), (11, 12), f64::NEG_INFINITY).unwrap(),
        ];
        let s = RegionScore::new("s1", Condition::NegatedAB, Mode::Clm, "ref", tokens, vec![vec![0], vec![1]], 12);
        let mut buf = Vec::new();
        write_token_csv(std::slice::from_ref(&s), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&format!("{TOKEN_CSV_HEADER}\n")));
        assert!(text.contains("s1,notA->B,clm,ref,0,\"added,\",4,10,-2.5,2.5,false"));
        let mut buf = Vec::new();
        write_summary_csv(&[s.summary()], &mut buf).unwrap();
        let back = read_summary_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![s.summary()]);
        let mut empty = Vec::new();
        write_summary_csv(&[], &mut empty).unwrap();
        assert!(String::from_utf8(empty).unwrap().starts_with("story_id,condition,mode,backend,"));
    }
}
