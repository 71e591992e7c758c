//! Seeded generators for synthetic long-context token streams.
//!
//! Ordinary tokens are `0..vocab_size`. Special tokens sit directly above
//! them: assign, separator, query marker, then 128 function markers.
//!
//! Targets follow next-token prediction: `targets[p]` is set when
//! `tokens[p + 1]` is an answer token, and holds that token.

mod icl;
mod icr;
mod io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

pub use icl::{apply_linear_function, gen_icl, IclParams, LinearFunction};
pub use icr::{gen_basic_icr, gen_positional_icr, BasicIcrParams, PositionalIcrParams};
pub use io::{read_streams, stream_from_file, stream_to_file, write_streams, StreamFormat};

use crate::error::{OvqError, Result};

pub const NUM_FUNCTION_MARKERS: usize = 128;
pub const NUM_SPECIALS: u32 = 3 + NUM_FUNCTION_MARKERS as u32;
/// Rejections allowed while drawing unique tuples.
pub const UNIQUE_RETRY_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub assign: u32,
    pub separator: u32,
    pub query_marker: u32,
    first_function: u32,
}

impl SpecialTokens {
    pub fn new(vocab_size: u32) -> Self {
        Self {
            assign: vocab_size,
            separator: vocab_size + 1,
            query_marker: vocab_size + 2,
            first_function: vocab_size + 3,
        }
    }

    pub fn function_marker(&self, f: usize) -> u32 {
        assert!(f < NUM_FUNCTION_MARKERS, "function marker {f} out of range");
        self.first_function + f as u32
    }

    pub fn function_markers(&self) -> impl Iterator<Item = u32> + '_ {
        (0..NUM_FUNCTION_MARKERS).map(|f| self.function_marker(f))
    }
}

/// Generator parameters, tagged by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskParams {
    BasicIcr(BasicIcrParams),
    PositionalIcr(PositionalIcrParams),
    Icl(IclParams),
}

impl TaskParams {
    pub fn generate(&self) -> Result<TokenStream> {
        match self {
            TaskParams::BasicIcr(p) => gen_basic_icr(p),
            TaskParams::PositionalIcr(p) => gen_positional_icr(p),
            TaskParams::Icl(p) => gen_icl(p),
        }
    }

    /// Closed-form stream length.
    pub fn expected_len(&self) -> usize {
        match self {
            TaskParams::BasicIcr(p) => p.expected_len(),
            TaskParams::PositionalIcr(p) => p.expected_len(),
            TaskParams::Icl(p) => p.expected_len(),
        }
    }

    /// Closed-form number of target positions.
    pub fn expected_targets(&self) -> usize {
        match self {
            TaskParams::BasicIcr(p) => p.num_queries * p.val_len,
            TaskParams::PositionalIcr(p) => p.copies * p.val_len,
            TaskParams::Icl(p) => p.num_examples * p.io_len,
        }
    }

    pub fn vocab_size(&self) -> u32 {
        match self {
            TaskParams::BasicIcr(p) => p.vocab_size,
            TaskParams::PositionalIcr(p) => p.vocab_size,
            TaskParams::Icl(p) => p.vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub params: TaskParams,
    /// Functions behind an ICL stream, indexed by marker.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<LinearFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<u32>,
    /// `None` where the position is not scored.
    pub targets: Vec<Option<u32>>,
    pub vocab_size: u32,
    pub meta: StreamMeta,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.targets.iter().enumerate().filter_map(|(p, t)| t.map(|_| p))
    }

    pub fn specials(&self) -> SpecialTokens {
        SpecialTokens::new(self.vocab_size)
    }

    /// Structural checks shared by every task.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.targets.len() {
            return Err(OvqError::InvalidState("tokens and targets differ in length".into()));
        }
        let limit = self.vocab_size + NUM_SPECIALS;
        if let Some(&bad) = self.tokens.iter().find(|&&t| t >= limit) {
            return Err(OvqError::InvalidState(format!("token id {bad} out of range")));
        }
        for (p, t) in self.targets.iter().enumerate() {
            if let Some(t) = *t {
                if self.tokens.get(p + 1) != Some(&t) {
                    return Err(OvqError::InvalidState(format!("target at {p} is not the next token")));
                }
            }
        }
        Ok(())
    }

    /// Mark `tokens[start..end]` as answers: each is the target of the
    /// position before it.
    fn supervise(&mut self, start: usize, end: usize) {
        for p in start..end {
            self.targets[p - 1] = Some(self.tokens[p]);
        }
    }

    fn push(&mut self, toks: &[u32]) -> usize {
        let start = self.tokens.len();
        self.tokens.extend_from_slice(toks);
        self.targets.resize(self.tokens.len(), None);
        start
    }
}

pub(crate) fn check_lengths(pairs: &[(&str, usize)]) -> Result<()> {
    for (name, v) in pairs {
        if *v == 0 {
            return Err(OvqError::config(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

/// `count` distinct tuples of `len` tokens drawn uniformly from `0..vocab`.
pub(crate) fn unique_tuples<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    len: usize,
    vocab: u32,
) -> Result<Vec<Vec<u32>>> {
    let capacity = (vocab as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if (count as u128) > capacity {
        return Err(OvqError::Generation(format!(
            "{count} unique tuples of length {len} need more than {vocab} tokens"
        )));
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut rejections = 0;
    while out.len() < count {
        let t: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        if seen.insert(t.clone()) {
            out.push(t);
        } else {
            rejections += 1;
            if rejections > UNIQUE_RETRY_CAP {
                return Err(OvqError::Generation(format!(
                    "gave up drawing {count} unique tuples after {UNIQUE_RETRY_CAP} rejections"
                )));
            }
        }
    }
    Ok(out)
}
