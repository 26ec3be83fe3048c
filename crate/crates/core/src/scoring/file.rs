//! Score-file JSONL: one header row, then one row per scored sample.
//!
//! ```text
//! {"orientation":"nll","scorer":"ngram-3","length_norm":false}
//! {"id":"fx-000001","score":1.2345678901234567e2,"num_tokens":42}
//! ```
//!
//! Scores are written with 17 significant digits so they read back bit-exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScoreError;
use crate::config::Orientation;
use crate::sample::ScoredSample;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreHeader {
    pub orientation: Orientation,
    pub scorer: String,
    pub length_norm: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    score: f64,
    num_tokens: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScoreError + '_ {
    move |source| ScoreError::Io { path: path.to_path_buf(), source }
}

pub fn format_score(score: f64) -> String {
    format!("{score:.16e}")
}

pub fn write_scores(path: impl AsRef<Path>, header: &ScoreHeader, scored: &[ScoredSample]) -> Result<(), ScoreError> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let head = serde_json::to_string(header).expect("header serialize");
    writeln!(out, "{head}").map_err(io_err(path))?;
    for s in scored {
        let id = serde_json::to_string(&s.id).expect("string serialize");
        writeln!(out, r#"{{"id":{id},"score":{},"num_tokens":{}}}"#, format_score(s.score), s.num_tokens)
            .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Parses a score file, checking the header, row validity, and id uniqueness.
pub fn read_score_file(path: impl AsRef<Path>) -> Result<(ScoreHeader, Vec<ScoredSample>), ScoreError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut header = None;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| ScoreError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: ScoreHeader = serde_json::from_str(&line).map_err(|_| ScoreError::MissingHeader)?;
            header = Some(h);
            continue;
        }
        let row: Row =
            serde_json::from_str(&line).map_err(|e| ScoreError::Malformed { line: line_no, message: e.to_string() })?;
        let scored = ScoredSample { id: row.id, score: row.score, num_tokens: row.num_tokens };
        scored.validate().map_err(|e| ScoreError::Malformed { line: line_no, message: e.to_string() })?;
        if !seen.insert(scored.id.clone()) {
            return Err(ScoreError::DuplicateId { line: line_no, id: scored.id });
        }
        rows.push(scored);
    }
    Ok((header.ok_or(ScoreError::MissingHeader)?, rows))
}

/// Reads a score file and checks it against the run: orientation and
/// length normalization must match, and with `known_ids` every row must name
/// a pool sample.
pub fn load_scores(
    path: impl AsRef<Path>,
    orientation: Orientation,
    length_norm: bool,
    known_ids: Option<&HashSet<String>>,
) -> Result<(ScoreHeader, Vec<ScoredSample>), ScoreError> {
    let (header, rows) = read_score_file(path)?;
    if header.orientation != orientation {
        return Err(ScoreError::OrientationMismatch { found: header.orientation, expected: orientation });
    }
    if header.length_norm != length_norm {
        return Err(ScoreError::LengthNormMismatch { found: header.length_norm, expected: length_norm });
    }
    if let Some(known) = known_ids {
        let mut orphans: Vec<String> = rows.iter().filter(|r| !known.contains(&r.id)).map(|r| r.id.clone()).collect();
        if !orphans.is_empty() {
            orphans.sort();
            return Err(ScoreError::Orphans(orphans));
        }
    }
    Ok((header, rows))
}
