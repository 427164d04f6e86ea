use super::records::PairRecord;
use super::tokenizer::words;

pub const OVERLAP_FRACTION: f64 = 0.8;
pub const OVERLAP_FLOOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// `(n, c)`: word count of the shorter text and how many of its words occur,
/// case-insensitively, as substrings of the longer text.
///
/// The shorter text has fewer words; ties fall back to fewer characters and
/// then to the lexicographically smaller text, so the result does not depend
/// on argument order.
pub fn overlap_counts(a: &str, b: &str) -> (usize, usize) {
    let wa: Vec<String> = words(a).collect();
    let wb: Vec<String> = words(b).collect();
    let a_shorter = (wa.len(), a.chars().count(), a) <= (wb.len(), b.chars().count(), b);
    let (short, long) = if a_shorter { (&wa, b) } else { (&wb, a) };
    let long = long.to_lowercase();
    let c = short.iter().filter(|w| long.contains(w.as_str())).count();
    (short.len(), c)
}

/// Drops a pair when `c ≥ max(⌈0.8·n⌉, 4)`.
pub fn overlap_filter(pair: &PairRecord) -> FilterDecision {
    let (n, c) = overlap_counts(&pair.q, &pair.p);
    let threshold = ((OVERLAP_FRACTION * n as f64).ceil() as usize).max(OVERLAP_FLOOR);
    if c >= threshold {
        FilterDecision::Drop
    } else {
        FilterDecision::Keep
    }
}
