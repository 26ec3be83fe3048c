//! Sampling without replacement: uniform (array and streaming reservoir) and
//! probability-weighted.
//!
//! The weighted sampler uses exponential-race keys. Each item `i` gets
//! `key_i = ln(w_i) - ln(-ln u_i)` with `u_i ~ U(0, 1)` (a Gumbel perturbation
//! of its log-weight); the `quota` largest keys win. The winning set has the
//! same distribution as drawing one item at a time with probability
//! proportional to its weight, removing it, and renormalizing.

use std::cmp::Ordering;

use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("cannot draw {requested} items from {available}")]
    NotEnoughItems { requested: usize, available: usize },
    #[error("item {id:?} has invalid probability {prob} (must be finite and > 0)")]
    InvalidProbability { id: String, prob: f64 },
    #[error("probabilities sum to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),
    #[error("log-weight at position {index} is not finite ({value})")]
    InvalidLogWeight { index: usize, value: f64 },
}

/// Tolerance on the sum of probabilities passed to [`weighted_sample_without_replacement`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedItem {
    pub id: String,
    pub prob: f64,
}

impl WeightedItem {
    pub fn new(id: impl Into<String>, prob: f64) -> Self {
        Self { id: id.into(), prob }
    }
}

/// Draws `n` distinct positions out of `0..len`, returned ascending.
pub fn uniform_sample_indices(len: usize, n: usize, rng: &mut RngStream) -> Result<Vec<usize>, SamplingError> {
    if n > len {
        return Err(SamplingError::NotEnoughItems { requested: n, available: len });
    }
    if n == len {
        return Ok((0..len).collect());
    }
    // Partial Fisher-Yates over a position table.
    let mut positions: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.below(len - i);
        positions.swap(i, j);
    }
    positions.truncate(n);
    positions.sort_unstable();
    Ok(positions)
}

/// Uniformly draws `n` of `ids`. The result is sorted by id.
pub fn uniform_sample<S: AsRef<str>>(ids: &[S], n: usize, rng: &mut RngStream) -> Result<Vec<String>, SamplingError> {
    let picked = uniform_sample_indices(ids.len(), n, rng)?;
    let mut out: Vec<String> = picked.into_iter().map(|i| ids[i].as_ref().to_string()).collect();
    out.sort_unstable();
    Ok(out)
}

/// Single-pass uniform sample of `n` items from a stream of unknown length
/// (Algorithm R). Uses `O(n)` memory. The result is sorted.
pub fn reservoir_sample<T, I>(items: I, n: usize, rng: &mut RngStream) -> Result<Vec<T>, SamplingError>
where
    T: Ord,
    I: IntoIterator<Item = T>,
{
    let mut reservoir: Vec<T> = Vec::with_capacity(n);
    let mut seen = 0usize;
    for item in items {
        if seen < n {
            reservoir.push(item);
        } else {
            let j = rng.below(seen + 1);
            if j < n {
                reservoir[j] = item;
            }
        }
        seen += 1;
    }
    if seen < n {
        return Err(SamplingError::NotEnoughItems { requested: n, available: seen });
    }
    reservoir.sort_unstable();
    Ok(reservoir)
}

/// Draws `quota` distinct items with successive-draw semantics under the given
/// probabilities. Returns ids sorted ascending.
pub fn weighted_sample_without_replacement(
    items: &[WeightedItem],
    quota: usize,
    rng: &mut RngStream,
) -> Result<Vec<String>, SamplingError> {
    if quota > items.len() {
        return Err(SamplingError::NotEnoughItems { requested: quota, available: items.len() });
    }
    for item in items {
        if !(item.prob > 0.0 && item.prob.is_finite()) {
            return Err(SamplingError::InvalidProbability { id: item.id.clone(), prob: item.prob });
        }
    }
    if !items.is_empty() {
        let total: f64 = items.iter().map(|i| i.prob).sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(SamplingError::NotNormalized(total));
        }
    }
    let log_weights: Vec<f64> = items.iter().map(|i| i.prob.ln()).collect();
    let picked = weighted_sample_log(&log_weights, quota, rng)?;
    let mut out: Vec<String> = picked.into_iter().map(|i| items[i].id.clone()).collect();
    out.sort_unstable();
    Ok(out)
}

/// Weighted sampling without replacement over unnormalized log-weights.
///
/// Working in log space means weights whose linear value would underflow to
/// zero still compete (and lose to larger ones) instead of being dropped.
/// Returns ascending positions.
pub fn weighted_sample_log(log_weights: &[f64], quota: usize, rng: &mut RngStream) -> Result<Vec<usize>, SamplingError> {
    let len = log_weights.len();
    if quota > len {
        return Err(SamplingError::NotEnoughItems { requested: quota, available: len });
    }
    if let Some((index, &value)) = log_weights.iter().enumerate().find(|(_, w)| !w.is_finite()) {
        return Err(SamplingError::InvalidLogWeight { index, value });
    }
    if quota == len {
        return Ok((0..len).collect());
    }
    if quota == 0 {
        return Ok(Vec::new());
    }
    let mut keyed: Vec<(f64, usize)> = log_weights
        .iter()
        .enumerate()
        .map(|(i, &lw)| (lw - (-rng.next_open01().ln()).ln(), i))
        .collect();
    // Descending key; equal keys resolve to the earlier position.
    let by_key = |a: &(f64, usize), b: &(f64, usize)| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    keyed.select_nth_unstable_by(quota - 1, by_key);
    let mut picked: Vec<usize> = keyed[..quota].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use std::collections::{BTreeMap, BTreeSet};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{}", (b'a' + i as u8) as char)).collect()
    }

    #[test]
    fn uniform_edge_sizes() {
        let pool = ids(5);
        let mut rng = derive_stream(1, "t", 0);
        assert!(uniform_sample(&pool, 0, &mut rng).unwrap().is_empty());
        assert_eq!(uniform_sample(&pool, 5, &mut rng).unwrap(), pool);
        assert_eq!(
            uniform_sample(&pool, 6, &mut rng).unwrap_err(),
            SamplingError::NotEnoughItems { requested: 6, available: 5 }
        );
    }

    #[test]
    fn uniform_output_sorted_and_distinct() {
        let pool: Vec<String> = (0..200).rev().map(|i| format!("id{i:03}")).collect();
        let mut rng = derive_stream(9, "t", 0);
        let out = uniform_sample(&pool, 50, &mut rng).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn uniform_deterministic_per_stream() {
        let pool = ids(10);
        let a = uniform_sample(&pool, 4, &mut derive_stream(3, "seed", 0)).unwrap();
        let b = uniform_sample(&pool, 4, &mut derive_stream(3, "seed", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reservoir_exact_length_stream() {
        let mut rng = derive_stream(1, "r", 0);
        assert_eq!(reservoir_sample(vec![3, 1, 2], 3, &mut rng).unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            reservoir_sample(vec![1, 2], 3, &mut rng),
            Err(SamplingError::NotEnoughItems { requested: 3, available: 2 })
        ));
    }

    #[test]
    fn reservoir_deterministic() {
        let run = || reservoir_sample(0..1000, 10, &mut derive_stream(5, "r", 2)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn reservoir_inclusion_frequencies() {
        let trials = 100_000u64;
        let mut counts = [0u64; 5];
        for t in 0..trials {
            let mut rng = derive_stream(17, "reservoir", t);
            for i in reservoir_sample(0..5usize, 2, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.4).abs() < 0.01, "inclusion frequency {f}");
        }
    }

    #[test]
    fn weighted_full_quota_returns_everything() {
        let items = vec![WeightedItem::new("b", 0.9), WeightedItem::new("a", 0.1)];
        let mut rng = derive_stream(1, "w", 0);
        assert_eq!(weighted_sample_without_replacement(&items, 2, &mut rng).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn weighted_single_item() {
        let items = vec![WeightedItem::new("only", 1.0)];
        let mut rng = derive_stream(1, "w", 0);
        assert_eq!(weighted_sample_without_replacement(&items, 1, &mut rng).unwrap(), vec!["only"]);
    }

    #[test]
    fn weighted_rejects_bad_input() {
        let mut rng = derive_stream(1, "w", 0);
        let zero = vec![WeightedItem::new("a", 1.0), WeightedItem::new("b", 0.0)];
        assert!(matches!(
            weighted_sample_without_replacement(&zero, 1, &mut rng),
            Err(SamplingError::InvalidProbability { .. })
        ));
        let unnormalized = vec![WeightedItem::new("a", 0.5), WeightedItem::new("b", 0.6)];
        assert!(matches!(
            weighted_sample_without_replacement(&unnormalized, 1, &mut rng),
            Err(SamplingError::NotNormalized(_))
        ));
        let one = vec![WeightedItem::new("a", 1.0)];
        assert!(matches!(
            weighted_sample_without_replacement(&one, 2, &mut rng),
            Err(SamplingError::NotEnoughItems { .. })
        ));
        assert!(matches!(
            weighted_sample_log(&[0.0, f64::NEG_INFINITY], 1, &mut rng),
            Err(SamplingError::InvalidLogWeight { index: 1, .. })
        ));
    }

    #[test]
    fn weighted_three_item_outcome_probabilities() {
        // Successive-draw tree for {a: .5, b: .3, c: .2}, quota 2:
        // P{a,b} = .5*.3/.5 + .3*.5/.7, P{a,c} = .5*.2/.5 + .2*.5/.8, P{b,c} = .3*.2/.7 + .2*.3/.8
        let expected: BTreeMap<&str, f64> = [("ab", 0.5142857142857142), ("ac", 0.325), ("bc", 0.16071428571428573)].into();
        let items = vec![WeightedItem::new("a", 0.5), WeightedItem::new("b", 0.3), WeightedItem::new("c", 0.2)];
        let trials = 200_000u64;
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for t in 0..trials {
            let mut rng = derive_stream(2024, "weighted", t);
            let out = weighted_sample_without_replacement(&items, 2, &mut rng).unwrap();
            *counts.entry(out.concat()).or_default() += 1;
        }
        for (set, p) in expected {
            let f = counts.get(set).copied().unwrap_or(0) as f64 / trials as f64;
            assert!((f - p).abs() < 0.005, "{set}: empirical {f} vs {p}");
        }
    }

    #[test]
    fn weighted_log_handles_underflowing_weights() {
        // Linear weights exp(-1e6) underflow to zero; the top two log-weights always win.
        let lw = [0.0, -1e6, -2e6, -3e6];
        for t in 0..100 {
            let mut rng = derive_stream(5, "lw", t);
            assert_eq!(weighted_sample_log(&lw, 2, &mut rng).unwrap(), vec![0, 1]);
        }
    }

    #[test]
    fn weighted_output_distinct_and_sized() {
        let items: Vec<WeightedItem> = (0..20).map(|i| WeightedItem::new(format!("x{i:02}"), 1.0 / 20.0)).collect();
        for q in 0..=20 {
            let out = weighted_sample_without_replacement(&items, q, &mut derive_stream(8, "q", q as u64)).unwrap();
            assert_eq!(out.len(), q);
            assert_eq!(out.iter().collect::<BTreeSet<_>>().len(), q);
        }
    }
}
