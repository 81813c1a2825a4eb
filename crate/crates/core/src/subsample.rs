//! Weighted random subselection without replacement.
//!
//! Each point draws a uniform `u` keyed by `(seed, id)` and scores
//! `u^(1/w)`; the `n` best scores survive (ties to the smaller id). The
//! survivors' weights are then rescaled by one common factor so the total
//! weight of the set is unchanged. Keying `u` on the id alone makes the same
//! particle win consistently across intervals and tree levels.

use std::cmp::Ordering;

use crate::hash::uniform;

/// Uniform deviate in (0, 1) for a point.
pub fn point_deviate(seed: u64, id: u64) -> f64 {
    uniform(&[seed, id])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    /// Indices into the input, ascending.
    pub selected: Vec<usize>,
    /// Corrected weight of each selected point.
    pub weights: Vec<f64>,
}

/// Picks at most `n` indices with inclusion odds increasing in
/// `sampling_weight`. Returns all indices when `ids.len() <= n`.
pub fn select_weighted(ids: &[u64], sampling_weight: &[f64], n: usize, seed: u64) -> Vec<usize> {
    assert_eq!(ids.len(), sampling_weight.len());
    let m = ids.len();
    if m <= n {
        return (0..m).collect();
    }
    // ln(u^(1/w)) = ln(u)/w preserves the order of u^(1/w).
    let score: Vec<f64> = ids
        .iter()
        .zip(sampling_weight)
        .map(|(&id, &w)| point_deviate(seed, id).ln() / w)
        .collect();
    let better = |a: &usize, b: &usize| -> Ordering {
        score[*b]
            .total_cmp(&score[*a])
            .then_with(|| ids[*a].cmp(&ids[*b]))
    };
    let mut order: Vec<usize> = (0..m).collect();
    if n > 0 {
        order.select_nth_unstable_by(n - 1, better);
    }
    order.truncate(n);
    order.sort_unstable();
    order
}

/// Weights of `selected` scaled so they sum to the total of `weights`.
pub fn conserve_total(weights: &[f64], selected: &[usize]) -> Vec<f64> {
    if selected.len() == weights.len() {
        return weights.to_vec();
    }
    let total: f64 = weights.iter().sum();
    let kept: f64 = selected.iter().map(|&i| weights[i]).sum();
    let scale = if kept > 0.0 { total / kept } else { 0.0 };
    selected.iter().map(|&i| weights[i] * scale).collect()
}

/// [`select_weighted`] followed by [`conserve_total`] on the same weights.
pub fn subsample(ids: &[u64], weights: &[f64], n: usize, node_seed: u64) -> Subsample {
    let selected = select_weighted(ids, weights, n, node_seed);
    let weights = conserve_total(weights, &selected);
    Subsample { selected, weights }
}
