//! Run state and the final manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SelectionConfig;
use crate::digest::sha256_hex;
use crate::{Error, Result};

pub const TOOL_NAME: &str = "vitsel";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Completed pipeline stages, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Seeded,
    Scored,
    Selected,
    Merged,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Seeded, Stage::Scored, Stage::Selected, Stage::Merged];

    pub fn previous(self) -> Option<Stage> {
        match self {
            Stage::Seeded => None,
            Stage::Scored => Some(Stage::Seeded),
            Stage::Selected => Some(Stage::Scored),
            Stage::Merged => Some(Stage::Selected),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Seeded => "seeded",
            Stage::Scored => "scored",
            Stage::Selected => "selected",
            Stage::Merged => "merged",
        })
    }
}

/// Identity of the scorer that produced a run's scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerDescriptor {
    /// Built-in byte n-gram model trained on the seed subset.
    Ngram { order: usize },
    /// Externally computed score file, identified by content.
    External { sha256: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub sha256: String,
    pub records: usize,
}

/// Manifest-in-progress persisted after every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub config: SelectionConfig,
    /// Binding from the `scored` stage on; provisional before it.
    pub scorer: ScorerDescriptor,
    /// Where an external score file was read from; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<PathBuf>,
    /// Pool location at the last stage; lets `resume` run without `--pool`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_path: Option<PathBuf>,
    pub pool: PoolRecord,
    pub strict: bool,
    /// Artifact file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl RunState {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("state serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pool: usize,
    pub seed: usize,
    pub candidates: usize,
    pub selected: usize,
    pub dataset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub index: usize,
    pub size: usize,
    pub quota: usize,
    pub drawn: usize,
}

/// Everything the manifest hash covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestBody {
    pub tool: String,
    pub version: String,
    pub config: SelectionConfig,
    pub scorer: ScorerDescriptor,
    /// Scorer name recorded in the score-file header.
    pub scorer_name: String,
    pub pool: PoolRecord,
    pub counts: Counts,
    pub seed_ids: Vec<String>,
    pub selected_ids: Vec<String>,
    pub per_group: Vec<GroupSummary>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub body: ManifestBody,
    pub manifest_sha256: String,
}

impl ManifestBody {
    /// Compact JSON in struct field order; the hash input.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("manifest serialize")
    }

    pub fn seal(self) -> Manifest {
        let manifest_sha256 = sha256_hex(&self.canonical_bytes());
        Manifest { body: self, manifest_sha256 }
    }
}

impl Manifest {
    pub fn recompute_hash(&self) -> String {
        sha256_hex(&self.body.canonical_bytes())
    }

    pub fn verify(&self) -> bool {
        self.recompute_hash() == self.manifest_sha256
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialize");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Corrupt { path: path.to_path_buf(), message: e.to_string() })?;
        if !m.verify() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("manifest hash {} does not match its contents ({})", m.manifest_sha256, m.recompute_hash()),
            });
        }
        Ok(m)
    }
}
