//! Accuracy and corpus-level token error rate.

use crate::error::{Error, Result};

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<A: PartialEq>(reference: &[A], hypothesis: &[A]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Σ edit_distance(ref, hyp) / Σ |ref| over the corpus.
pub fn token_error_rate<A: PartialEq>(refs: &[Vec<A>], hyps: &[Vec<A>]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::Data(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let total: usize = refs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Data("token error rate needs a nonempty reference".into()));
    }
    let errors: usize = refs.iter().zip(hyps).map(|(r, h)| edit_distance(r, h)).sum();
    Ok(errors as f64 / total as f64)
}

pub fn accuracy<A: PartialEq>(refs: &[A], hyps: &[A]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::Data("label count mismatch".into()));
    }
    if refs.is_empty() {
        return Err(Error::Data("accuracy of an empty dataset".into()));
    }
    let hits = refs.iter().zip(hyps).filter(|(r, h)| r == h).count();
    Ok(hits as f64 / refs.len() as f64)
}
