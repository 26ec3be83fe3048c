use std::collections::HashMap;

use vitsel_core::config::{Orientation, SelectionConfig, Strategy};
use vitsel_core::pipeline::MemoryScores;
use vitsel_core::report::{compare_strategies, rows_to_csv, rows_to_json, ComparisonRow};
use vitsel_core::{make_fixture, ScoredSample};

fn base(rng_seed: u64) -> SelectionConfig {
    SelectionConfig { n1: 200, n2: 400, k: 100, tau: 1.0, strategy: Strategy::Nbgs, orientation: Orientation::Nll, rng_seed, length_norm: false }
}

fn grid(seeds: std::ops::Range<u64>, strategies: &[Strategy]) -> Vec<(String, SelectionConfig)> {
    strategies
        .iter()
        .flat_map(|&strategy| seeds.clone().map(move |s| (format!("{strategy}/{s}"), SelectionConfig { strategy, ..base(s) })))
        .collect()
}

#[test]
fn top_has_the_highest_mean_score() {
    let pool = make_fixture(2000, 6, 8);
    let rows = compare_strategies(&pool, &grid(0..1, &Strategy::ALL), &MemoryScores::Builtin { order: 3 }, 0);
    let mean = |s: &str| rows.iter().find(|r| r.strategy == s).unwrap().mean_score.unwrap();
    for other in ["nbgs", "random", "bottom"] {
        assert!(mean("top") > mean(other), "top {} vs {other} {}", mean("top"), mean(other));
    }
    assert!(rows.iter().all(|r| r.error.is_none()));
}

#[test]
fn random_mean_tracks_the_pool_mean() {
    let pool = make_fixture(2000, 6, 9);
    let scores: HashMap<String, ScoredSample> = pool
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), ScoredSample { id: s.id.clone(), score: ((i * 7919) % 2003) as f64, num_tokens: 1 }))
        .collect();
    let all: Vec<f64> = scores.values().map(|s| s.score).collect();
    let pool_mean = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|v| (v - pool_mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();

    let rows = compare_strategies(&pool, &grid(0..50, &[Strategy::Random]), &MemoryScores::Provided(&scores), 0);
    let means: Vec<f64> = rows.iter().map(|r| r.mean_score.unwrap()).collect();
    let overall = means.iter().sum::<f64>() / means.len() as f64;
    // Each selection is 400 of ~1800 candidates; 50 seeds together.
    let se = sd / (400.0f64 * 50.0).sqrt();
    assert!((overall - pool_mean).abs() < 3.0 * se, "mean {overall} vs pool {pool_mean} (se {se})");
}

#[test]
fn failing_rows_do_not_stop_the_others() {
    let pool = make_fixture(1000, 4, 1);
    let mut g = grid(0..1, &[Strategy::Nbgs, Strategy::Top]);
    g.insert(1, ("too-big".into(), SelectionConfig { n2: 10_000, ..base(0) }));
    let rows: Vec<ComparisonRow> = compare_strategies(&pool, &g, &MemoryScores::Builtin { order: 3 }, 0);
    assert_eq!(rows.len(), 3);
    assert!(rows[0].error.is_none() && rows[2].error.is_none());
    assert!(rows[1].error.as_deref().unwrap().contains("exceeds the pool size"));

    let csv = rows_to_csv(&rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("label,strategy,n1,n2,k,tau,rng_seed,selected,source_entropy,coverage,mean_score,median_score,decile_occupancy,error\n"));
    let back: Vec<ComparisonRow> = serde_json::from_str(&rows_to_json(&rows)).unwrap();
    assert_eq!(back, rows);
}
