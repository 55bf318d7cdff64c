//! Character-offset helpers. All offsets in this crate count Unicode scalar values.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of the `char_idx`-th scalar value, or `s.len()` at the end.
pub fn byte_offset(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == char_idx {
            return Some(b);
        }
        count += 1;
    }
    (count == char_idx).then_some(s.len())
}

/// Slice `s` by scalar-value offsets `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = byte_offset(s, end)?;
    Some(&s[b0..b1])
}

/// Scalar-value spans of maximal non-whitespace runs.
pub fn word_spans(s: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut i = 0;
    for c in s.chars() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(st)) => {
                spans.push((st, i));
                start = None;
            }
            _ => {}
        }
        i += 1;
    }
    if let Some(st) = start {
        spans.push((st, i));
    }
    spans
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slicing_is_by_scalar_value() {
        let s = "café au lait";
        assert_eq!(char_len(s), 12);
        assert_eq!(char_slice(s, 0, 4), Some("café"));
        assert_eq!(char_slice(s, 5, 7), Some("au"));
        assert_eq!(char_slice(s, 8, 12), Some("lait"));
        assert_eq!(char_slice(s, 8, 13), None);
        assert_eq!(char_slice(s, 3, 2), None);
    }

    #[test]
    fn word_spans_skip_runs_of_whitespace() {
        assert_eq!(word_spans("  tied two-metre\tcanes "), vec![(2, 6), (7, 16), (17, 22)]);
        assert!(word_spans("   ").is_empty());
        assert_eq!(word_count("tied two-metre canes"), 3);
    }
}
