use super::{ScoringError, WireToken};
use crate::text::{char_slice, word_spans};

/// Tokens assigned to a region and their grouping into whitespace words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aligned {
    /// Indices into the backend token list, ascending.
    pub indices: Vec<usize>,
    /// Positions into `indices`, one group per region word that received a token.
    pub word_groups: Vec<Vec<usize>>,
}

/// Checks that `tokens` tile `text` and selects those whose span midpoint lies in `region`.
pub fn align_region(text: &str, tokens: &[WireToken], region: (usize, usize)) -> Result<Aligned, ScoringError> {
    let chars: Vec<char> = text.chars().collect();
    let err = |m: String| Err(ScoringError::AlignmentError(m));
    let mut cursor = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.start >= t.end || t.end > chars.len() {
            return err(format!("token {i} has span [{}, {}) in a text of {} chars", t.start, t.end, chars.len()));
        }
        if t.start < cursor {
            return err(format!("token {i} overlaps its predecessor"));
        }
        if chars[cursor..t.start].iter().any(|c| !c.is_whitespace()) {
            return err(format!("characters {cursor}..{} are not covered by any token", t.start));
        }
        if char_slice(text, t.start, t.end) != Some(t.text.as_str()) {
            return err(format!("token {i} text {:?} does not match the text at [{}, {})", t.text, t.start, t.end));
        }
        cursor = t.end;
    }
    if chars[cursor..].iter().any(|c| !c.is_whitespace()) {
        return err(format!("characters after {cursor} are not covered by any token"));
    }

    let (rs, re) = region;
    let indices: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| 2 * rs <= t.start + t.end && t.start + t.end < 2 * re)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return err(format!("no token falls inside region [{rs}, {re})"));
    }

    let region_text = char_slice(text, rs, re).unwrap_or("");
    let words: Vec<(usize, usize)> = word_spans(region_text).into_iter().map(|(s, e)| (s + rs, e + rs)).collect();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); words.len().max(1)];
    for (pos, &ti) in indices.iter().enumerate() {
        let t = &tokens[ti];
        let first = (t.start..t.end).find(|&c| !chars[c].is_whitespace());
        let w = first
            .and_then(|c| words.iter().position(|&(s, e)| s <= c && c < e))
            .or_else(|| words.iter().position(|&(s, e)| s < t.end && t.start < e))
            .unwrap_or_else(|| {
                // Nearest word by distance to the token.
                (0..words.len())
                    .min_by_key(|&k| {
                        let (s, e) = words[k];
                        if t.end <= s {
                            s - t.end
                        } else {
                            t.start.saturating_sub(e)
                        }
                    })
                    .unwrap_or(0)
            });
        groups[w].push(pos);
    }
    groups.retain(|g| !g.is_empty());
    Ok(Aligned { indices, word_groups: groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, start: usize) -> WireToken {
        WireToken { text: text.into(), start, end: start + text.chars().count(), logprob: None }
    }

    #[test]
    fn subword_tokens_group_into_words() {
        let text = "He tied two-metre canes.";
        let tokens = vec![
            tok("He", 0),
            tok(" tied", 2),
            tok(" two", 7),
            tok("-metre", 11),
            tok(" can", 17),
            tok("es", 21),
            tok(".", 23),
        ];
        let a = align_region(text, &tokens, (3, 23)).unwrap();
        assert_eq!(a.indices, vec![1, 2, 3, 4, 5]);
        assert_eq!(a.word_groups, vec![vec![0], vec![1, 2], vec![3, 4]]);
    }

    #[test]
    fn midpoint_rule_at_boundaries() {
        let text = "abcdef";
        let tokens = vec![tok("abc", 0), tok("def", 3)];
        // Midpoints 1.5 and 4.5: region [2, 6) keeps only the second.
        assert_eq!(align_region(text, &tokens, (2, 6)).unwrap().indices, vec![1]);
        // Region [1, 6) keeps both.
        assert_eq!(align_region(text, &tokens, (1, 6)).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_tilings() {
        let text = "ab cd";
        assert!(align_region(text, &[tok("ab", 0)], (0, 5)).is_err());
        assert!(align_region(text, &[tok("ab", 0), tok("xd", 3)], (0, 5)).is_err());
        assert!(align_region(text, &[tok("ab", 0), tok("b cd", 1)], (0, 5)).is_err());
        assert!(align_region(text, &[tok("ab", 0), tok("cd", 3)], (0, 5)).is_ok());
    }

    #[test]
    fn multibyte_offsets_are_characters() {
        let text = "café au lait";
        let tokens = vec![tok("café", 0), tok(" au", 4), tok(" lait", 7)];
        let a = align_region(text, &tokens, (5, 12)).unwrap();
        assert_eq!(a.indices, vec![1, 2]);
    }
}
