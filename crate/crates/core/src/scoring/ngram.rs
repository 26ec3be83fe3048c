//! Byte-level n-gram scorer with add-one smoothing.
//!
//! The symbol alphabet is the 256 byte values plus [`END_SYMBOL`], which
//! terminates every turn. A sample is flattened into
//! `END^(order-1) turn_0 END turn_1 END ...`; the leading run pads the first
//! contexts. Training counts only the positions belonging to response turns
//! (their bytes and their END), which mirrors loss-masked fine-tuning: the
//! instruction conditions the response but is not itself learned.

use std::collections::HashMap;
use std::ops::Range;

use super::{ScoreError, Scorer};
use crate::sample::{Role, Sample};

pub const END_SYMBOL: u16 = 256;
pub const VOCAB_SIZE: u64 = 257;
pub const DEFAULT_ORDER: usize = 3;
/// Contexts of up to 6 symbols pack into 54 bits.
pub const MAX_ORDER: usize = 7;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u16, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramScorer {
    order: usize,
    contexts: HashMap<u64, ContextCounts>,
}

fn pack(context: &[u16]) -> u64 {
    context.iter().fold(0u64, |acc, &s| (acc << 9) | u64::from(s))
}

struct Flattened {
    symbols: Vec<u16>,
    responses: Vec<Range<usize>>,
}

impl NgramScorer {
    pub fn new(order: usize) -> Result<Self, ScoreError> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(ScoreError::BadOrder { order });
        }
        Ok(Self { order, contexts: HashMap::new() })
    }

    /// Trains on the response turns of `samples`. Counting commutes, so the
    /// result does not depend on sample order.
    pub fn train<'a, I>(order: usize, samples: I) -> Result<Self, ScoreError>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut scorer = Self::new(order)?;
        let mut any = false;
        for sample in samples {
            scorer.add_sample(sample);
            any = true;
        }
        if !any {
            return Err(ScoreError::EmptySeedSet);
        }
        Ok(scorer)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_sample(&mut self, sample: &Sample) {
        let flat = self.flatten(sample);
        for range in &flat.responses {
            for pos in range.clone() {
                self.count(&flat.symbols, pos);
            }
        }
    }

    /// Counts every byte of a raw stream (no END terminator), each predicted
    /// from the preceding `order - 1` symbols.
    pub fn observe_bytes(&mut self, bytes: &[u8]) {
        let pad = self.order - 1;
        let mut symbols = vec![END_SYMBOL; pad];
        symbols.extend(bytes.iter().map(|&b| u16::from(b)));
        for pos in pad..symbols.len() {
            self.count(&symbols, pos);
        }
    }

    fn count(&mut self, symbols: &[u16], pos: usize) {
        let key = pack(&symbols[pos + 1 - self.order..pos]);
        let entry = self.contexts.entry(key).or_default();
        entry.total += 1;
        *entry.next.entry(symbols[pos]).or_default() += 1;
    }

    fn flatten(&self, sample: &Sample) -> Flattened {
        let mut symbols = vec![END_SYMBOL; self.order - 1];
        let mut responses = Vec::new();
        for turn in &sample.conversations {
            let start = symbols.len();
            symbols.extend(turn.value.bytes().map(u16::from));
            symbols.push(END_SYMBOL);
            if turn.role == Role::Gpt {
                responses.push(start..symbols.len());
            }
        }
        Flattened { symbols, responses }
    }

    /// Raw count of `symbol` after `context` and the context total.
    pub fn counts(&self, context: &[u16], symbol: u16) -> (u64, u64) {
        match self.contexts.get(&pack(self.tail(context))) {
            Some(c) => (c.next.get(&symbol).copied().unwrap_or(0), c.total),
            None => (0, 0),
        }
    }

    fn tail<'c>(&self, context: &'c [u16]) -> &'c [u16] {
        assert!(context.len() >= self.order - 1, "context shorter than order - 1");
        &context[context.len() + 1 - self.order..]
    }

    /// Add-one smoothed conditional probability over the 257-symbol alphabet.
    pub fn prob(&self, context: &[u16], symbol: u16) -> f64 {
        let (c, total) = self.counts(context, symbol);
        (c + 1) as f64 / (total + VOCAB_SIZE) as f64
    }

    pub fn log_prob(&self, context: &[u16], symbol: u16) -> f64 {
        self.prob(context, symbol).ln()
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }
}

impl Scorer for NgramScorer {
    fn descriptor(&self) -> String {
        format!("ngram-{}", self.order)
    }

    fn response_logprobs(&self, sample: &Sample) -> Result<Vec<f64>, ScoreError> {
        let flat = self.flatten(sample);
        if flat.responses.is_empty() {
            return Err(ScoreError::NoResponse(sample.id.clone()));
        }
        let lookback = self.order - 1;
        let mut out = Vec::with_capacity(flat.responses.iter().map(|r| r.len()).sum());
        for range in &flat.responses {
            for pos in range.clone() {
                out.push(self.log_prob(&flat.symbols[pos - lookback..pos], flat.symbols[pos]));
            }
        }
        Ok(out)
    }
}
