//! Streaming JSONL pool I/O.
//!
//! Records use the LLaVA conversation layout:
//! `{"id":..,"image":..,"conversations":[{"from":"human","value":..},..],"source":..}`.
//! The writer emits exactly that key order with no extra whitespace, one
//! record per line, so equal pools always serialize to equal bytes.

mod fixture;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::{Sample, SampleError};

pub use fixture::{make_fixture, write_fixture};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: not valid UTF-8")]
    NotUtf8 { line: usize },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: SampleError,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

/// Composition summary of a pool read.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    /// Records yielded.
    pub total: u64,
    pub per_source: BTreeMap<String, u64>,
    pub malformed: u64,
    pub duplicate_ids: u64,
}

impl PoolStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Iterator over the valid records of a JSONL pool, in file order.
///
/// In strict mode the first bad line ends iteration with an error. In lenient
/// mode bad lines are counted in [`PoolStats`] and skipped; for repeated ids
/// the first occurrence wins.
pub struct PoolReader<R = BufReader<File>> {
    reader: R,
    strict: bool,
    line: usize,
    buf: Vec<u8>,
    seen: HashSet<String>,
    stats: PoolStats,
    failed: bool,
    path: PathBuf,
}

impl PoolReader {
    pub fn open(path: impl AsRef<Path>, strict: bool) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
        let mut reader = Self::from_reader(BufReader::with_capacity(1 << 16, file), strict);
        reader.path = path.to_path_buf();
        Ok(reader)
    }
}

impl<R: BufRead> PoolReader<R> {
    pub fn from_reader(reader: R, strict: bool) -> Self {
        Self {
            reader,
            strict,
            line: 0,
            buf: Vec::new(),
            seen: HashSet::new(),
            stats: PoolStats::default(),
            failed: false,
            path: PathBuf::from("<reader>"),
        }
    }

    pub fn stats(&self) -> &PoolStats {
        &self.stats
    }

    pub fn into_stats(self) -> PoolStats {
        self.stats
    }

    fn parse_line(&mut self) -> Result<Sample, IngestError> {
        let line = self.line;
        let mut bytes = &self.buf[..];
        if let Some(rest) = bytes.strip_suffix(b"\n") {
            bytes = rest;
        }
        if let Some(rest) = bytes.strip_suffix(b"\r") {
            bytes = rest;
        }
        let text = std::str::from_utf8(bytes).map_err(|_| IngestError::NotUtf8 { line })?;
        let sample: Sample =
            serde_json::from_str(text).map_err(|e| IngestError::Malformed { line, message: e.to_string() })?;
        sample.validate().map_err(|source| IngestError::Invalid { line, source })?;
        if self.seen.contains(&sample.id) {
            return Err(IngestError::DuplicateId { line, id: sample.id });
        }
        self.seen.insert(sample.id.clone());
        Ok(sample)
    }
}

impl<R: BufRead> Iterator for PoolReader<R> {
    type Item = Result<Sample, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(IngestError::io(&self.path, e)));
                }
            }
            self.line += 1;
            match self.parse_line() {
                Ok(sample) => {
                    self.stats.total += 1;
                    if let Some(src) = &sample.source {
                        *self.stats.per_source.entry(src.clone()).or_default() += 1;
                    }
                    return Some(Ok(sample));
                }
                Err(err) => {
                    if matches!(err, IngestError::DuplicateId { .. }) {
                        self.stats.duplicate_ids += 1;
                    } else {
                        self.stats.malformed += 1;
                    }
                    if self.strict {
                        self.failed = true;
                        return Some(Err(err));
                    }
                    log::debug!("skipping {err}");
                }
            }
        }
    }
}

/// Reads a whole pool into memory.
pub fn read_pool(path: impl AsRef<Path>, strict: bool) -> Result<(Vec<Sample>, PoolStats), IngestError> {
    let mut reader = PoolReader::open(path, strict)?;
    let samples = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((samples, reader.into_stats()))
}

/// Writes `samples` as canonical JSONL and returns the record count.
pub fn write_pool<'a, I>(samples: I, path: impl AsRef<Path>) -> Result<usize, IngestError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let count = write_records(samples, &mut out).map_err(|e| match e {
        WriteError::Io(e) => IngestError::io(path, e),
        WriteError::Invalid(line, source) => IngestError::Invalid { line, source },
    })?;
    out.flush().map_err(|e| IngestError::io(path, e))?;
    Ok(count)
}

enum WriteError {
    Io(io::Error),
    Invalid(usize, SampleError),
}

fn write_records<'a, I, W>(samples: I, out: &mut W) -> Result<usize, WriteError>
where
    I: IntoIterator<Item = &'a Sample>,
    W: Write,
{
    let mut count = 0;
    for sample in samples {
        sample.validate().map_err(|e| WriteError::Invalid(count + 1, e))?;
        serde_json::to_writer(&mut *out, sample).map_err(|e| WriteError::Io(e.into()))?;
        out.write_all(b"\n").map_err(WriteError::Io)?;
        count += 1;
    }
    Ok(count)
}

/// Canonical single-line encoding of one record (no trailing newline).
pub fn canonical_record(sample: &Sample) -> String {
    serde_json::to_string(sample).expect("sample serialize")
}
