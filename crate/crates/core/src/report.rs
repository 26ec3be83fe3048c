//! Diagnostics over scores and selections: source diversity, score
//! histograms, decile occupancy, exemplars, and strategy comparisons.
//!
//! Source entropy and decile occupancy are direct proxies for how spread out
//! a selection is; they are tool metrics, not training outcomes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SelectionConfig;
use crate::nbgs::{sort_scored, SelectionResult};
use crate::pipeline::{run_in_memory, GroupSummary, MemoryScores, SCORES_FILE, SELECTION_FILE};
use crate::sample::{Sample, ScoredSample};
use crate::scoring::read_score_file;
use crate::{Error, Result};

pub const HISTOGRAM_BINS: usize = 50;
pub const DECILES: usize = 10;
/// Source key for samples without a source tag.
pub const UNTAGGED: &str = "<untagged>";

/// Shannon entropy (nats) of a count distribution. Zero counts are ignored.
pub fn entropy_of_counts<'a>(counts: impl IntoIterator<Item = &'a usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().copied().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

/// Source tag of every pool sample; `None` when no sample carries a tag.
#[derive(Debug, Clone, Default)]
pub struct SourceIndex {
    by_id: HashMap<String, String>,
    sources: HashSet<String>,
    tagged: bool,
}

impl SourceIndex {
    pub fn new<'a>(pool: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut index = SourceIndex::default();
        for s in pool {
            index.insert(s);
        }
        index
    }

    pub fn insert(&mut self, s: &Sample) {
        let source = match &s.source {
            Some(src) => {
                self.tagged = true;
                src.clone()
            }
            None => UNTAGGED.to_string(),
        };
        self.sources.insert(source.clone());
        self.by_id.insert(s.id.clone(), source);
    }

    pub fn is_tagged(&self) -> bool {
        self.tagged
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source_of(&self, id: &str) -> Option<&str> {
        self.by_id.get(id).map(String::as_str)
    }

    /// Per-source counts of `ids`; ids not in the pool are skipped.
    pub fn counts<S: AsRef<str>>(&self, ids: &[S]) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for id in ids {
            if let Some(src) = self.source_of(id.as_ref()) {
                *counts.entry(src.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Entropy (nats) of the selection's source distribution, or `None` when the
/// pool has no source tags at all.
pub fn source_entropy<S: AsRef<str>>(selected: &[S], sources: &SourceIndex) -> Option<f64> {
    sources.is_tagged().then(|| entropy_of_counts(sources.counts(selected).values()))
}

/// Fraction of pool sources that appear in the selection.
pub fn source_coverage<S: AsRef<str>>(selected: &[S], sources: &SourceIndex) -> Option<f64> {
    if !sources.is_tagged() || sources.num_sources() == 0 {
        return None;
    }
    Some(sources.counts(selected).len() as f64 / sources.num_sources() as f64)
}

/// Fixed-width histogram over `[min, max]`; the top edge falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(min: f64, max: f64, bins: usize) -> Self {
        Self { min, max, counts: vec![0; bins.max(1)] }
    }

    /// Histogram with bounds taken from `bounds_from` and counts from `values`.
    pub fn spanning(bounds_from: &[f64], values: &[f64], bins: usize) -> Self {
        let (min, max) = bounds_from
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let (min, max) = if min.is_finite() { (min, max) } else { (0.0, 0.0) };
        let mut h = Self::new(min, max, bins);
        for &v in values {
            h.add(v);
        }
        h
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let bins = self.counts.len();
        let width = self.max - self.min;
        if width <= 0.0 || !width.is_finite() {
            return 0;
        }
        let pos = ((v - self.min) / width * bins as f64).floor();
        if pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        }
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Per-decile counts of `selected` among `candidates` ranked by score
/// (decile 0 holds the lowest scores).
pub fn decile_counts<S: AsRef<str>>(candidates: &[ScoredSample], selected: &[S]) -> [usize; DECILES] {
    let mut ranked = sort_scored(candidates);
    ranked.reverse();
    let n = ranked.len();
    let rank: HashMap<&str, usize> = ranked.iter().enumerate().map(|(r, s)| (s.id.as_str(), r)).collect();
    let mut counts = [0usize; DECILES];
    for id in selected {
        if let Some(&r) = rank.get(id.as_ref()) {
            counts[r * DECILES / n] += 1;
        }
    }
    counts
}

/// Number of score deciles with at least one selected sample.
pub fn decile_occupancy<S: AsRef<str>>(candidates: &[ScoredSample], selected: &[S]) -> usize {
    decile_counts(candidates, selected).iter().filter(|&&c| c > 0).count()
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

fn selected_scores<S: AsRef<str>>(candidates: &[ScoredSample], selected: &[S]) -> Vec<f64> {
    let by_id: HashMap<&str, f64> = candidates.iter().map(|s| (s.id.as_str(), s.score)).collect();
    selected.iter().filter_map(|id| by_id.get(id.as_ref()).copied()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub strategy: String,
    pub candidates: usize,
    pub selected: usize,
    pub per_source: BTreeMap<String, usize>,
    /// `null` when the pool has no source tags.
    pub source_entropy: Option<f64>,
    pub max_entropy: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_score: Option<f64>,
    pub median_score: Option<f64>,
    pub decile_counts: [usize; DECILES],
    pub decile_occupancy: usize,
    /// Selected scores binned over the full candidate score range.
    pub histogram: Histogram,
    pub per_group: Vec<GroupSummary>,
}

impl DiversityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }

    /// Per-group table as CSV.
    pub fn groups_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for g in &self.per_group {
            w.serialize(g).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

pub fn diversity_report(selection: &SelectionResult, candidates: &[ScoredSample], sources: &SourceIndex) -> DiversityReport {
    let ids = &selection.selected_ids;
    let all: Vec<f64> = candidates.iter().map(|s| s.score).collect();
    let picked = selected_scores(candidates, ids);
    let decile_counts = decile_counts(candidates, ids);
    DiversityReport {
        strategy: selection.strategy.to_string(),
        candidates: candidates.len(),
        selected: ids.len(),
        per_source: sources.counts(ids),
        source_entropy: source_entropy(ids, sources),
        max_entropy: sources.is_tagged().then(|| (sources.num_sources() as f64).ln()),
        coverage: source_coverage(ids, sources),
        mean_score: mean(&picked),
        median_score: median(&picked),
        decile_counts,
        decile_occupancy: decile_counts.iter().filter(|&&c| c > 0).count(),
        histogram: Histogram::spanning(&all, &picked, HISTOGRAM_BINS),
        per_group: selection
            .per_group
            .iter()
            .map(|g| GroupSummary { index: g.index, size: g.size, quota: g.quota, drawn: g.drawn.len() })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplars {
    /// Highest scores first.
    pub top: Vec<ScoredSample>,
    /// Lowest scores first.
    pub bottom: Vec<ScoredSample>,
    /// Set when fewer than `n_top + n_bottom` samples were available.
    pub truncated: bool,
}

/// The `n_top` highest and `n_bottom` lowest scored samples, ties by id.
/// The two lists never share a sample; a short input truncates `bottom`.
pub fn exemplars(scored: &[ScoredSample], n_top: usize, n_bottom: usize) -> Exemplars {
    let desc = sort_scored(scored);
    let truncated = n_top.saturating_add(n_bottom) > desc.len();
    if truncated {
        log::warn!("requested {n_top} top and {n_bottom} bottom exemplars from {} scored samples; truncating", desc.len());
    }
    let top: Vec<ScoredSample> = desc.iter().take(n_top).cloned().collect();
    let room = desc.len() - top.len();
    let mut asc = desc;
    asc.reverse();
    let bottom = asc.into_iter().take(n_bottom.min(room)).collect();
    Exemplars { top, bottom, truncated }
}

/// Renders exemplars as markdown with full conversation text.
pub fn exemplars_markdown(ex: &Exemplars, pool: &HashMap<&str, &Sample>) -> String {
    let mut out = String::from("# Exemplars\n");
    if ex.truncated {
        out.push_str("\n_Fewer samples than requested; lists truncated._\n");
    }
    for (title, list) in [("Highest necessity", &ex.top), ("Lowest necessity", &ex.bottom)] {
        let _ = write!(out, "\n## {title}\n");
        for (rank, s) in list.iter().enumerate() {
            let _ = write!(out, "\n### {}. `{}` (score {}, {} tokens)\n\n", rank + 1, s.id, s.score, s.num_tokens);
            let Some(sample) = pool.get(s.id.as_str()) else {
                out.push_str("_sample text unavailable_\n");
                continue;
            };
            if let Some(src) = &sample.source {
                let _ = writeln!(out, "- source: {src}");
            }
            if let Some(img) = &sample.image {
                let _ = writeln!(out, "- image: {img}");
            }
            for turn in &sample.conversations {
                let _ = write!(out, "\n**{}:**\n\n", turn.role);
                for line in turn.value.lines() {
                    let _ = writeln!(out, "> {line}");
                }
            }
        }
    }
    out
}

/// Reads the candidate scores and selection of a run directory.
pub fn load_run(dir: &Path) -> Result<(SelectionResult, Vec<ScoredSample>)> {
    let (_, scored) = read_score_file(dir.join(SCORES_FILE))?;
    let path = dir.join(SELECTION_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let selection = SelectionResult::from_json(&text).map_err(|e| Error::Corrupt { path, message: e.to_string() })?;
    Ok((selection, scored))
}

/// One line of a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub strategy: String,
    pub n1: usize,
    pub n2: usize,
    pub k: usize,
    pub tau: f64,
    pub rng_seed: u64,
    pub selected: Option<usize>,
    pub source_entropy: Option<f64>,
    pub coverage: Option<f64>,
    pub mean_score: Option<f64>,
    pub median_score: Option<f64>,
    pub decile_occupancy: Option<usize>,
    pub error: Option<String>,
}

/// Runs every configuration in memory and tabulates its diagnostics. A failing
/// configuration yields a row with `error` set; the others still run.
pub fn compare_strategies(
    pool: &[Sample],
    grid: &[(String, SelectionConfig)],
    scores: &MemoryScores<'_>,
    jobs: usize,
) -> Vec<ComparisonRow> {
    let sources = SourceIndex::new(pool);
    grid.iter()
        .map(|(label, cfg)| {
            let mut row = ComparisonRow {
                label: label.clone(),
                strategy: cfg.strategy.to_string(),
                n1: cfg.n1,
                n2: cfg.n2,
                k: cfg.k,
                tau: cfg.tau,
                rng_seed: cfg.rng_seed,
                selected: None,
                source_entropy: None,
                coverage: None,
                mean_score: None,
                median_score: None,
                decile_occupancy: None,
                error: None,
            };
            match run_in_memory(pool, cfg, scores, jobs) {
                Ok(out) => {
                    let r = diversity_report(&out.selection, &out.scored, &sources);
                    row.selected = Some(r.selected);
                    row.source_entropy = r.source_entropy;
                    row.coverage = r.coverage;
                    row.mean_score = r.mean_score;
                    row.median_score = r.median_score;
                    row.decile_occupancy = Some(r.decile_occupancy);
                }
                Err(e) => {
                    log::warn!("{label}: {e}");
                    row.error = Some(e.to_string());
                }
            }
            row
        })
        .collect()
}

pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn rows_to_json<T: Serialize>(rows: &[T]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}
