use std::collections::HashSet;

use super::{DataError, PairExample};

/// Distinct shared words divided by the mean sentence length.
pub fn overlap_rate(q1: &[String], q2: &[String]) -> Result<f64, DataError> {
    if q1.is_empty() || q2.is_empty() {
        return Err(DataError::EmptySentence);
    }
    let a: HashSet<&str> = q1.iter().map(String::as_str).collect();
    let common = q2.iter().map(String::as_str).collect::<HashSet<_>>().intersection(&a).count();
    Ok(common as f64 / ((q1.len() + q2.len()) as f64 / 2.0))
}

/// Mean overlap rate over positive pairs, negative pairs, and all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapStats {
    pub positives: usize,
    pub negatives: usize,
    pub pos: Option<f64>,
    pub neg: Option<f64>,
    pub avg: Option<f64>,
}

impl OverlapStats {
    pub fn compute(pairs: &[PairExample]) -> Result<Self, DataError> {
        let (mut pos_sum, mut neg_sum) = (0.0, 0.0);
        let (mut positives, mut negatives) = (0usize, 0usize);
        for p in pairs {
            let r = overlap_rate(&p.q1, &p.q2)?;
            if p.is_positive() {
                pos_sum += r;
                positives += 1;
            } else {
                neg_sum += r;
                negatives += 1;
            }
        }
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        Ok(Self {
            positives,
            negatives,
            pos: mean(pos_sum, positives),
            neg: mean(neg_sum, negatives),
            avg: mean(pos_sum + neg_sum, positives + negatives),
        })
    }
}
