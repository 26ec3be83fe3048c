//! Necessity-based grouped sampling and the baseline strategies.
//!
//! NBGS sorts candidates by score (descending, ties by ascending id), cuts the
//! ranking into consecutive groups of `k`, turns scores into per-group softmax
//! probabilities at temperature `tau`, and draws a per-group quota without
//! replacement. The union of the draws is the selection.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SelectionConfig, Strategy};
use crate::rng::derive_stream;
use crate::sample::ScoredSample;
use crate::sampling::{uniform_sample, weighted_sample_log, SamplingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NbgsError {
    #[error("cannot select {requested} samples from {available} candidates")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("candidate {id:?} has a non-finite score")]
    NonFiniteScore { id: String },
    #[error("candidate id {0:?} appears more than once")]
    DuplicateCandidate(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// One rank group. `probs` is aligned with `members`.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub index: usize,
    pub members: Vec<ScoredSample>,
    pub probs: Vec<f64>,
    pub quota: usize,
}

/// Record of what one group contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDraw {
    pub index: usize,
    pub size: usize,
    pub quota: usize,
    pub drawn: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub config: SelectionConfig,
    pub candidates: usize,
    /// Sorted ascending.
    pub selected_ids: Vec<String>,
    pub per_group: Vec<GroupDraw>,
}

impl SelectionResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("selection serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn by_score_desc(a: &ScoredSample, b: &ScoredSample) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

fn by_score_asc(a: &ScoredSample, b: &ScoredSample) -> Ordering {
    a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id))
}

/// Sorts descending by score; equal scores order by ascending id.
pub fn sort_scored(scored: &[ScoredSample]) -> Vec<ScoredSample> {
    let mut out = scored.to_vec();
    out.sort_by(by_score_desc);
    out
}

/// Cuts a ranking into consecutive groups of `k`; the last group holds the remainder.
pub fn partition_groups(sorted: &[ScoredSample], k: usize) -> Result<Vec<Group>, NbgsError> {
    if k == 0 {
        return Err(ConfigError::ZeroGroupSize.into());
    }
    Ok(sorted
        .chunks(k)
        .enumerate()
        .map(|(index, chunk)| Group { index, members: chunk.to_vec(), probs: Vec::new(), quota: 0 })
        .collect())
}

/// Temperature softmax, stabilized by subtracting the maximum score.
///
/// Scores far below the maximum may underflow to probability zero; use
/// [`group_log_softmax`] when those members must stay drawable.
pub fn group_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| ((s - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log of [`group_softmax`], finite for every member.
pub fn group_log_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = scores.iter().map(|&s| (s - max) / tau).collect();
    let log_total = z.iter().map(|v| v.exp()).sum::<f64>().ln();
    z.into_iter().map(|v| v - log_total).collect()
}

/// Splits `n2` across groups of the given sizes.
///
/// Every group starts at `n2 / N`; the first `n2 % N` groups get one more.
/// Quotas above a group's size are capped, and the freed units are handed out
/// one at a time to groups with spare room, in ascending index order, until
/// none remain.
pub fn assign_quotas(sizes: &[usize], n2: usize) -> Result<Vec<usize>, NbgsError> {
    let capacity: usize = sizes.iter().sum();
    if n2 > capacity {
        return Err(NbgsError::NotEnoughCandidates { requested: n2, available: capacity });
    }
    if sizes.is_empty() {
        return Ok(Vec::new());
    }
    let n = sizes.len();
    let (base, rem) = (n2 / n, n2 % n);
    let mut quotas: Vec<usize> = (0..n).map(|j| base + usize::from(j < rem)).collect();
    let mut deficit = 0;
    for (q, &size) in quotas.iter_mut().zip(sizes) {
        if *q > size {
            deficit += *q - size;
            *q = size;
        }
    }
    while deficit > 0 {
        for (q, &size) in quotas.iter_mut().zip(sizes) {
            if deficit == 0 {
                break;
            }
            if *q < size {
                *q += 1;
                deficit -= 1;
            }
        }
    }
    Ok(quotas)
}

fn check_candidates(candidates: &[ScoredSample]) -> Result<(), NbgsError> {
    let mut seen = HashSet::with_capacity(candidates.len());
    for c in candidates {
        if !c.score.is_finite() {
            return Err(NbgsError::NonFiniteScore { id: c.id.clone() });
        }
        if !seen.insert(c.id.as_str()) {
            return Err(NbgsError::DuplicateCandidate(c.id.clone()));
        }
    }
    Ok(())
}

/// Builds the NBGS groups (members, probabilities, quotas) for a candidate set.
pub fn build_groups(candidates: &[ScoredSample], k: usize, tau: f64, n2: usize) -> Result<Vec<Group>, NbgsError> {
    let sorted = sort_scored(candidates);
    let mut groups = partition_groups(&sorted, k)?;
    let sizes: Vec<usize> = groups.iter().map(|g| g.members.len()).collect();
    let quotas = assign_quotas(&sizes, n2)?;
    for (g, q) in groups.iter_mut().zip(quotas) {
        let scores: Vec<f64> = g.members.iter().map(|m| m.score).collect();
        g.probs = group_softmax(&scores, tau);
        g.quota = q;
    }
    Ok(groups)
}

/// Selects `cfg.n2` candidates under `cfg.strategy`.
///
/// Group draws run in parallel on the ambient rayon pool; each group draws
/// from its own stream `(rng_seed, "group", index)`, so the result does not
/// depend on the thread count.
pub fn select(candidates: &[ScoredSample], cfg: &SelectionConfig) -> Result<SelectionResult, NbgsError> {
    cfg.check()?;
    check_candidates(candidates)?;
    if cfg.n2 > candidates.len() {
        return Err(NbgsError::NotEnoughCandidates { requested: cfg.n2, available: candidates.len() });
    }
    let per_group = match cfg.strategy {
        Strategy::Nbgs => draw_nbgs(candidates, cfg)?,
        Strategy::Top | Strategy::Bottom => {
            let mut ranked = candidates.to_vec();
            ranked.sort_by(if cfg.strategy == Strategy::Top { by_score_desc } else { by_score_asc });
            let mut drawn: Vec<String> = ranked.into_iter().take(cfg.n2).map(|s| s.id).collect();
            drawn.sort_unstable();
            vec![GroupDraw { index: 0, size: candidates.len(), quota: cfg.n2, drawn }]
        }
        Strategy::Random => {
            let ids: Vec<&str> = candidates.iter().map(|c| c.id.as_str()).collect();
            let mut rng = derive_stream(cfg.rng_seed, "random", 0);
            let drawn = uniform_sample(&ids, cfg.n2, &mut rng)?;
            vec![GroupDraw { index: 0, size: candidates.len(), quota: cfg.n2, drawn }]
        }
    };
    let mut selected_ids: Vec<String> = per_group.iter().flat_map(|g| g.drawn.iter().cloned()).collect();
    selected_ids.sort_unstable();
    debug_assert_eq!(selected_ids.len(), cfg.n2);
    Ok(SelectionResult {
        strategy: cfg.strategy,
        config: cfg.clone(),
        candidates: candidates.len(),
        selected_ids,
        per_group,
    })
}

fn draw_nbgs(candidates: &[ScoredSample], cfg: &SelectionConfig) -> Result<Vec<GroupDraw>, NbgsError> {
    let groups = build_groups(candidates, cfg.k, cfg.tau, cfg.n2)?;
    groups
        .par_iter()
        .map(|g| {
            let drawn = if g.quota == 0 {
                Vec::new()
            } else {
                let scores: Vec<f64> = g.members.iter().map(|m| m.score).collect();
                let log_probs = group_log_softmax(&scores, cfg.tau);
                let mut rng = derive_stream(cfg.rng_seed, "group", g.index as u64);
                let picked = weighted_sample_log(&log_probs, g.quota, &mut rng)?;
                let mut ids: Vec<String> = picked.into_iter().map(|i| g.members[i].id.clone()).collect();
                ids.sort_unstable();
                ids
            };
            Ok(GroupDraw { index: g.index, size: g.members.len(), quota: g.quota, drawn })
        })
        .collect()
}
