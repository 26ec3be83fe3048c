//! End-to-end selection runs.
//!
//! A run directory holds one artifact per stage plus `state.json`, the
//! manifest-in-progress:
//!
//! | stage      | artifact         |
//! |------------|------------------|
//! | `seeded`   | `seed.ids`       |
//! | `scored`   | `scores.jsonl`   |
//! | `selected` | `selection.json` |
//! | `merged`   | `dataset.jsonl`, `manifest.json` |
//!
//! Reopening a directory re-checks the pool hash, the configuration, the
//! scorer identity, and every recorded artifact hash before doing anything,
//! so an interrupted run resumes to byte-identical outputs or refuses.

mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::config::{validate_config, SelectionConfig};
use crate::digest::sha256_file;
use crate::ingest::{IngestError, PoolReader};
use crate::nbgs::{select, SelectionResult};
use crate::parallel::with_jobs;
use crate::rng::derive_stream;
use crate::sample::{Sample, ScoredSample};
use crate::sampling::uniform_sample;
use crate::scoring::{self, load_scores, read_score_file, score_pool, write_scores, NgramScorer, ScoreError, ScoreHeader, ScoreOptions, Scorer};
use crate::{Error, Result};

pub use manifest::{Counts, GroupSummary, Manifest, ManifestBody, PoolRecord, RunState, ScorerDescriptor, Stage, TOOL_NAME, TOOL_VERSION};

pub const LOCK_FILE: &str = ".lock";
pub const STATE_FILE: &str = "state.json";
pub const SEED_FILE: &str = "seed.ids";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const SELECTION_FILE: &str = "selection.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const SCORE_CHUNK: usize = 8192;

/// Where necessity scores come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    /// Train the byte n-gram scorer on the seed subset.
    Builtin { order: usize },
    /// Read precomputed scores from a score file.
    External { path: PathBuf },
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec::Builtin { order: scoring::DEFAULT_ORDER }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub pool: PathBuf,
    pub out: PathBuf,
    pub config: SelectionConfig,
    /// `None` reuses the scorer recorded in an existing run (builtin for a fresh one).
    pub scorer: Option<ScorerSpec>,
    pub strict: bool,
    /// Worker threads; 0 means all cores. Never changes outputs.
    pub jobs: usize,
}

impl RunOptions {
    pub fn new(pool: impl Into<PathBuf>, out: impl Into<PathBuf>, config: SelectionConfig) -> Self {
        Self { pool: pool.into(), out: out.into(), config, scorer: None, strict: true, jobs: 0 }
    }
}

/// Exclusive claim on a run directory, released on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked { dir: dir.to_path_buf() }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Draws the seed subset from the pool ids (in pool order).
pub fn draw_seed<S: AsRef<str>>(pool_ids: &[S], cfg: &SelectionConfig) -> Result<Vec<String>> {
    let cfg = validate_config(cfg.clone(), pool_ids.len())?;
    let mut rng = derive_stream(cfg.rng_seed, "seed", 0);
    Ok(uniform_sample(pool_ids, cfg.n1, &mut rng)?)
}

fn score_options(cfg: &SelectionConfig) -> ScoreOptions {
    ScoreOptions { orientation: cfg.orientation, length_norm: cfg.length_norm }
}

/// Checks seed/selection disjointness and builds the dataset id list.
fn merged_ids(seed_ids: &[String], selected_ids: &[String]) -> Result<Vec<String>> {
    let seed: HashSet<&str> = seed_ids.iter().map(String::as_str).collect();
    let overlap: Vec<&str> = selected_ids.iter().map(String::as_str).filter(|id| seed.contains(id)).collect();
    if !overlap.is_empty() {
        return Err(Error::Invariant(format!("selected ids overlap the seed set: {overlap:?}")));
    }
    let mut all: Vec<String> = seed_ids.iter().chain(selected_ids).cloned().collect();
    all.sort_unstable();
    Ok(all)
}

/// Result of an in-memory run, used for comparisons and sweeps.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed_ids: Vec<String>,
    /// Candidate scores in pool order.
    pub scored: Vec<ScoredSample>,
    pub selection: SelectionResult,
}

/// Score source for [`run_in_memory`].
pub enum MemoryScores<'a> {
    Builtin { order: usize },
    /// Precomputed scores; must cover every candidate.
    Provided(&'a HashMap<String, ScoredSample>),
}

/// Runs both stages over an in-memory pool without touching disk.
pub fn run_in_memory(pool: &[Sample], cfg: &SelectionConfig, scores: &MemoryScores<'_>, jobs: usize) -> Result<RunOutcome> {
    let ids: Vec<&str> = pool.iter().map(|s| s.id.as_str()).collect();
    let seed_ids = draw_seed(&ids, cfg)?;
    let seed: HashSet<&str> = seed_ids.iter().map(String::as_str).collect();
    let candidates: Vec<&Sample> = pool.iter().filter(|s| !seed.contains(s.id.as_str())).collect();
    let scored = match scores {
        MemoryScores::Builtin { order } => {
            let scorer = NgramScorer::train(*order, pool.iter().filter(|s| seed.contains(s.id.as_str())))?;
            let owned: Vec<Sample> = candidates.iter().map(|s| (*s).clone()).collect();
            score_pool(&scorer, &owned, score_options(cfg), jobs)?
        }
        MemoryScores::Provided(map) => {
            let mut missing = Vec::new();
            let mut out = Vec::with_capacity(candidates.len());
            for c in &candidates {
                match map.get(&c.id) {
                    Some(s) => out.push(s.clone()),
                    None => missing.push(c.id.clone()),
                }
            }
            if !missing.is_empty() {
                return Err(ScoreError::MissingIds(missing).into());
            }
            out
        }
    };
    let selection = with_jobs(jobs, || select(&scored, cfg))?;
    merged_ids(&seed_ids, &selection.selected_ids)?;
    Ok(RunOutcome { seed_ids, scored, selection })
}

/// A run directory opened for work.
pub struct Pipeline {
    opts: RunOptions,
    scorer: ScorerSpec,
    descriptor: ScorerDescriptor,
    pool: PoolRecord,
    state: Option<RunState>,
    _lock: DirLock,
}

/// Reads the run state of `dir`, if any, without locking or verifying it.
pub fn read_state(dir: &Path) -> Result<Option<RunState>> {
    let path = dir.join(STATE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    RunState::read(&path).map(Some)
}

impl Pipeline {
    /// Opens (creating if needed) the run directory and verifies any existing state.
    pub fn open(opts: RunOptions) -> Result<Self> {
        opts.config.check()?;
        fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
        let lock = DirLock::acquire(&opts.out)?;
        let state = read_state(&opts.out)?;

        let scorer = match (&opts.scorer, &state) {
            (Some(spec), _) => spec.clone(),
            (None, Some(st)) => match &st.scorer {
                ScorerDescriptor::Ngram { order } => ScorerSpec::Builtin { order: *order },
                ScorerDescriptor::External { .. } => match &st.external_scores {
                    Some(path) => ScorerSpec::External { path: path.clone() },
                    None => ScorerSpec::Builtin { order: scoring::DEFAULT_ORDER },
                },
            },
            (None, None) => ScorerSpec::default(),
        };
        let descriptor = match &scorer {
            ScorerSpec::Builtin { order } => {
                NgramScorer::new(*order)?;
                ScorerDescriptor::Ngram { order: *order }
            }
            ScorerSpec::External { path } => {
                // Once scores are in place the external file is no longer read.
                let recorded = state.as_ref().filter(|st| st.stage >= Stage::Scored && opts.scorer.is_none());
                match recorded {
                    Some(st) => st.scorer.clone(),
                    None => ScorerDescriptor::External { sha256: sha256_file(path).map_err(|e| Error::io(path, e))? },
                }
            }
        };
        let pool_sha = sha256_file(&opts.pool).map_err(|e| Error::io(&opts.pool, e))?;

        let mut pool = PoolRecord { sha256: pool_sha, records: 0 };
        if let Some(st) = &state {
            let dir = opts.out.clone();
            if st.pool.sha256 != pool.sha256 {
                return Err(Error::Mismatch {
                    what: "pool",
                    dir,
                    detail: format!("recorded sha256 {} but {} hashes to {}", st.pool.sha256, opts.pool.display(), pool.sha256),
                });
            }
            if st.config != opts.config {
                return Err(Error::Mismatch {
                    what: "configuration",
                    dir,
                    detail: format!("recorded:\n{}requested:\n{}", st.config.to_canonical_text(), opts.config.to_canonical_text()),
                });
            }
            if st.stage >= Stage::Scored && st.scorer != descriptor {
                return Err(Error::Mismatch { what: "scorer", dir, detail: format!("recorded {:?}, requested {:?}", st.scorer, descriptor) });
            }
            if st.strict != opts.strict {
                return Err(Error::Mismatch { what: "strictness", dir, detail: format!("recorded strict={}", st.strict) });
            }
            for (name, expected) in &st.artifacts {
                let path = opts.out.join(name);
                let found = sha256_file(&path).map_err(|e| Error::io(&path, e))?;
                if &found != expected {
                    return Err(Error::ArtifactHash { name: name.clone(), expected: expected.clone(), found });
                }
            }
            pool.records = st.pool.records;
        }
        Ok(Self { opts, scorer, descriptor, pool, state, _lock: lock })
    }

    pub fn stage(&self) -> Option<Stage> {
        self.state.as_ref().map(|s| s.stage)
    }

    pub fn dir(&self) -> &Path {
        &self.opts.out
    }

    pub fn state(&self) -> Option<&RunState> {
        self.state.as_ref()
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.opts.out.join(name)
    }

    fn pool_reader(&self) -> Result<PoolReader> {
        Ok(PoolReader::open(&self.opts.pool, self.opts.strict)?)
    }

    /// Streams the pool, handing every valid sample to `f`.
    fn for_each_sample(&self, mut f: impl FnMut(Sample) -> Result<()>) -> Result<()> {
        for sample in self.pool_reader()? {
            f(sample?)?;
        }
        Ok(())
    }

    fn commit(&mut self, stage: Stage, artifacts: &[&str]) -> Result<()> {
        let mut state = match self.state.take() {
            Some(s) => s,
            None => RunState {
                tool: TOOL_NAME.to_string(),
                version: TOOL_VERSION.to_string(),
                stage,
                config: self.opts.config.clone(),
                scorer: self.descriptor.clone(),
                external_scores: None,
                pool_path: None,
                pool: self.pool.clone(),
                strict: self.opts.strict,
                artifacts: BTreeMap::new(),
            },
        };
        if stage <= Stage::Scored {
            state.scorer = self.descriptor.clone();
            state.external_scores = match &self.scorer {
                ScorerSpec::External { path } => Some(path.clone()),
                ScorerSpec::Builtin { .. } => None,
            };
        }
        state.pool_path = Some(self.opts.pool.clone());
        state.stage = stage;
        for name in artifacts {
            let path = self.artifact(name);
            let sha = sha256_file(&path).map_err(|e| Error::io(&path, e))?;
            state.artifacts.insert(name.to_string(), sha);
        }
        write_atomic(&self.artifact(STATE_FILE), state.to_json().as_bytes())?;
        self.state = Some(state);
        Ok(())
    }

    fn require(&self, stage: Stage) -> Result<()> {
        if let Some(prev) = stage.previous() {
            if self.stage().is_none_or(|s| s < prev) {
                return Err(Error::StageMissing { required: prev, dir: self.opts.out.clone() });
            }
        }
        Ok(())
    }

    /// Runs exactly `stage`, which must be the next one. A stage that is
    /// already complete is left untouched.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        if self.stage().is_some_and(|s| s >= stage) {
            log::info!("stage {stage} already complete in {}", self.opts.out.display());
            return Ok(());
        }
        self.require(stage)?;
        log::info!("running stage {stage}");
        match stage {
            Stage::Seeded => self.run_seed(),
            Stage::Scored => self.run_score(),
            Stage::Selected => self.run_select(),
            Stage::Merged => self.run_merge().map(|_| ()),
        }
    }

    /// Runs every missing stage up to and including `target`.
    pub fn advance_to(&mut self, target: Stage) -> Result<()> {
        for stage in Stage::ALL {
            if stage > target {
                break;
            }
            self.run_stage(stage)?;
        }
        Ok(())
    }

    /// Runs all remaining stages and returns the verified manifest.
    pub fn finish(&mut self) -> Result<Manifest> {
        self.advance_to(Stage::Merged)?;
        Manifest::read(&self.artifact(MANIFEST_FILE))
    }

    fn run_seed(&mut self) -> Result<()> {
        let mut ids = Vec::new();
        self.for_each_sample(|s| {
            ids.push(s.id);
            Ok(())
        })?;
        self.pool.records = ids.len();
        let seed = draw_seed(&ids, &self.opts.config)?;
        let mut text = String::with_capacity(seed.iter().map(|s| s.len() + 1).sum());
        for id in &seed {
            text.push_str(id);
            text.push('\n');
        }
        write_atomic(&self.artifact(SEED_FILE), text.as_bytes())?;
        log::info!("seed: {} of {} pool samples", seed.len(), ids.len());
        self.commit(Stage::Seeded, &[SEED_FILE])
    }

    fn read_seed(&self) -> Result<Vec<String>> {
        let path = self.artifact(SEED_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text.lines().map(str::to_string).collect())
    }

    fn run_score(&mut self) -> Result<()> {
        let seed_ids = self.read_seed()?;
        let seed: HashSet<&str> = seed_ids.iter().map(String::as_str).collect();
        let cfg = self.opts.config.clone();
        let opts = score_options(&cfg);
        let (header, rows) = match self.scorer.clone() {
            ScorerSpec::Builtin { order } => {
                let mut scorer = NgramScorer::new(order)?;
                let mut seen = 0usize;
                self.for_each_sample(|s| {
                    if seed.contains(s.id.as_str()) {
                        scorer.add_sample(&s);
                        seen += 1;
                    }
                    Ok(())
                })?;
                if seen == 0 {
                    return Err(ScoreError::EmptySeedSet.into());
                }
                let mut rows = Vec::new();
                let mut chunk = Vec::with_capacity(SCORE_CHUNK);
                let jobs = self.opts.jobs;
                let flush = |chunk: &mut Vec<Sample>, rows: &mut Vec<ScoredSample>| -> Result<()> {
                    rows.extend(score_pool(&scorer, chunk, opts, jobs)?);
                    chunk.clear();
                    Ok(())
                };
                self.for_each_sample(|s| {
                    if !seed.contains(s.id.as_str()) {
                        chunk.push(s);
                        if chunk.len() == SCORE_CHUNK {
                            flush(&mut chunk, &mut rows)?;
                        }
                    }
                    Ok(())
                })?;
                flush(&mut chunk, &mut rows)?;
                let header = ScoreHeader { orientation: cfg.orientation, scorer: scorer.descriptor(), length_norm: cfg.length_norm };
                (header, rows)
            }
            ScorerSpec::External { path } => {
                let mut pool_ids = Vec::new();
                self.for_each_sample(|s| {
                    pool_ids.push(s.id);
                    Ok(())
                })?;
                let known: HashSet<String> = pool_ids.iter().cloned().collect();
                let (header, rows) = load_scores(&path, cfg.orientation, cfg.length_norm, Some(&known))?;
                let mut by_id: HashMap<String, ScoredSample> = rows.into_iter().map(|r| (r.id.clone(), r)).collect();
                let mut missing = Vec::new();
                let mut out = Vec::new();
                for id in pool_ids.iter().filter(|id| !seed.contains(id.as_str())) {
                    match by_id.remove(id) {
                        Some(row) => out.push(row),
                        None => missing.push(id.clone()),
                    }
                }
                if !missing.is_empty() {
                    return Err(ScoreError::MissingIds(missing).into());
                }
                (header, out)
            }
        };
        let path = self.artifact(SCORES_FILE);
        let tmp = tmp_path(&path);
        write_scores(&tmp, &header, &rows)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        log::info!("scored {} candidates with {}", rows.len(), header.scorer);
        self.commit(Stage::Scored, &[SCORES_FILE])
    }

    fn run_select(&mut self) -> Result<()> {
        let seed_ids = self.read_seed()?;
        let (_, scored) = read_score_file(self.artifact(SCORES_FILE))?;
        let seed: HashSet<&str> = seed_ids.iter().map(String::as_str).collect();
        if let Some(s) = scored.iter().find(|s| seed.contains(s.id.as_str())) {
            return Err(Error::Invariant(format!("seed id {:?} found among stage-2 candidates", s.id)));
        }
        let cfg = self.opts.config.clone();
        let selection = with_jobs(self.opts.jobs, || select(&scored, &cfg))?;
        write_atomic(&self.artifact(SELECTION_FILE), selection.to_json().as_bytes())?;
        log::info!("selected {} of {} candidates ({})", selection.selected_ids.len(), scored.len(), cfg.strategy);
        self.commit(Stage::Selected, &[SELECTION_FILE])
    }

    fn read_selection(&self) -> Result<SelectionResult> {
        let path = self.artifact(SELECTION_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        SelectionResult::from_json(&text).map_err(|e| Error::Corrupt { path, message: e.to_string() })
    }

    fn run_merge(&mut self) -> Result<Manifest> {
        let seed_ids = self.read_seed()?;
        let selection = self.read_selection()?;
        let ids = merged_ids(&seed_ids, &selection.selected_ids)?;
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let mut picked = Vec::with_capacity(ids.len());
        self.for_each_sample(|s| {
            if wanted.contains(s.id.as_str()) {
                picked.push(s);
            }
            Ok(())
        })?;
        picked.sort_unstable_by(|a, b| a.id.cmp(&b.id));
        if picked.len() != ids.len() {
            return Err(Error::Invariant(format!("dataset has {} records, expected {}", picked.len(), ids.len())));
        }
        let path = self.artifact(DATASET_FILE);
        let tmp = tmp_path(&path);
        {
            let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut out = BufWriter::new(file);
            for s in &picked {
                serde_json::to_writer(&mut out, s).map_err(|e| Error::io(&tmp, e.into()))?;
                out.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
            out.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;

        let (header, _) = read_score_file(self.artifact(SCORES_FILE))?;
        let mut artifacts = self.state.as_ref().map(|s| s.artifacts.clone()).unwrap_or_default();
        artifacts.insert(DATASET_FILE.to_string(), sha256_file(&path).map_err(|e| Error::io(&path, e))?);
        let body = ManifestBody {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config: self.opts.config.clone(),
            scorer: self.descriptor.clone(),
            scorer_name: header.scorer,
            pool: self.pool.clone(),
            counts: Counts {
                pool: self.pool.records,
                seed: seed_ids.len(),
                candidates: selection.candidates,
                selected: selection.selected_ids.len(),
                dataset: picked.len(),
            },
            seed_ids,
            selected_ids: selection.selected_ids.clone(),
            per_group: selection
                .per_group
                .iter()
                .map(|g| GroupSummary { index: g.index, size: g.size, quota: g.quota, drawn: g.drawn.len() })
                .collect(),
            artifacts,
        };
        let manifest = body.seal();
        write_atomic(&self.artifact(MANIFEST_FILE), manifest.to_json().as_bytes())?;
        log::info!("wrote {} records; manifest {}", picked.len(), manifest.manifest_sha256);
        self.commit(Stage::Merged, &[DATASET_FILE, MANIFEST_FILE])?;
        Ok(manifest)
    }
}

/// Runs every stage (continuing any compatible earlier progress).
pub fn run(opts: RunOptions) -> Result<Manifest> {
    Pipeline::open(opts)?.finish()
}

/// Continues an existing run from its last completed stage.
pub fn resume(opts: RunOptions) -> Result<Manifest> {
    let mut p = Pipeline::open(opts)?;
    if p.stage().is_none() {
        return Err(Error::NoState { dir: p.dir().to_path_buf() });
    }
    p.finish()
}

/// Reads a pool fully, mapping reader errors into the crate error.
pub fn load_pool(path: &Path, strict: bool) -> Result<Vec<Sample>> {
    let (samples, _) = crate::ingest::read_pool(path, strict).map_err(|e: IngestError| Error::from(e))?;
    Ok(samples)
}
