//! Synthetic multi-source pools.
//!
//! Sources are assigned round-robin. Each source has its own "difficulty":
//! source 0 writes almost entirely from a small shared vocabulary, and later
//! sources mix in progressively more random tokens and longer answers. Under
//! any reasonable scorer this makes necessity scores correlate with source,
//! which is what diversity diagnostics need to be meaningful.

use std::path::Path;

use crate::ingest::{write_pool, IngestError};
use crate::rng::{derive_stream, RngStream};
use crate::sample::{Sample, Turn};

const VOCAB: &[&str] = &[
    "the", "image", "shows", "a", "of", "in", "and", "is", "on", "with", "picture", "there", "person", "table",
    "red", "blue", "two", "left", "right", "small", "large", "near", "sign", "text", "chart", "value", "answer",
    "yes", "no", "color", "man", "woman", "dog", "street", "building", "car", "tree", "sky", "water", "three",
];

const QUESTIONS: &[&str] = &[
    "What is shown in the image?",
    "Describe the scene in detail.",
    "What color is the object on the left?",
    "How many people are visible?",
    "What does the sign say?",
    "Read the value in the chart.",
    "Answer the question using a single word.",
    "What is the person doing?",
];

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

fn source_name(s: usize) -> String {
    format!("src{s}")
}

fn random_token(rng: &mut RngStream) -> String {
    let len = 3 + rng.below(7);
    (0..len).map(|_| ALPHABET[rng.below(ALPHABET.len())] as char).collect()
}

fn response(rng: &mut RngStream, difficulty: f64) -> String {
    let words = 4 + rng.below(24 + (48.0 * difficulty) as usize);
    let noise = 0.03 + 0.6 * difficulty;
    let mut out = String::new();
    for w in 0..words {
        if w > 0 {
            out.push(' ');
        }
        if rng.next_f64() < noise {
            out.push_str(&random_token(rng));
        } else {
            out.push_str(VOCAB[rng.below(VOCAB.len())]);
        }
    }
    out.push('.');
    out
}

/// Deterministically generates `num_samples` records spread over `num_sources`.
pub fn make_fixture(num_samples: usize, num_sources: usize, rng_seed: u64) -> Vec<Sample> {
    assert!(num_sources >= 1, "fixture needs at least one source");
    let mut rng = derive_stream(rng_seed, "fixture", 0);
    let width = num_samples.saturating_sub(1).to_string().len().max(6);
    (0..num_samples)
        .map(|i| {
            let s = i % num_sources;
            let difficulty = if num_sources == 1 { 0.5 } else { s as f64 / (num_sources - 1) as f64 };
            let rounds = if rng.next_f64() < 0.25 { 2 } else { 1 };
            let with_image = i % 7 != 6;
            let mut conversations = Vec::with_capacity(rounds * 2);
            for r in 0..rounds {
                let q = QUESTIONS[rng.below(QUESTIONS.len())];
                let prompt = if r == 0 && with_image { format!("<image>\n{q}") } else { q.to_string() };
                conversations.push(Turn::human(prompt));
                conversations.push(Turn::gpt(response(&mut rng, difficulty)));
            }
            Sample {
                id: format!("fx-{i:0width$}"),
                image: with_image.then(|| format!("{}/{i:0width$}.jpg", source_name(s))),
                conversations,
                source: Some(source_name(s)),
            }
        })
        .collect()
}

/// Writes a fixture pool to `path` and returns its record count.
pub fn write_fixture(path: impl AsRef<Path>, num_samples: usize, num_sources: usize, rng_seed: u64) -> Result<usize, IngestError> {
    write_pool(&make_fixture(num_samples, num_sources, rng_seed), path)
}
