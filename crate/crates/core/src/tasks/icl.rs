//! Long-context in-context learning of linear token functions.
//!
//! Function `f` maps an input `x` of `io_len` token ids to
//! `y_i = a * x[perm[i]] + b`. Each example block is
//! `[x, marker_f, y, separator]` and every output token is scored.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_lengths, SpecialTokens, StreamMeta, TaskParams, TokenStream, NUM_FUNCTION_MARKERS};
use crate::error::{OvqError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclParams {
    pub num_functions: usize,
    pub num_examples: usize,
    pub io_len: usize,
    pub vocab_size: u32,
    /// `a` and `b` are drawn from `1..=coef_max`.
    #[serde(default = "default_coef_max")]
    pub coef_max: u32,
    pub seed: u64,
}

fn default_coef_max() -> u32 {
    5
}

impl Default for IclParams {
    fn default() -> Self {
        Self {
            num_functions: 16,
            num_examples: 80,
            io_len: 12,
            vocab_size: 10_000,
            coef_max: default_coef_max(),
            seed: 0,
        }
    }
}

impl IclParams {
    pub fn expected_len(&self) -> usize {
        self.num_examples * (2 * self.io_len + 2)
    }

    /// Largest input id: `floor((vocab_size - 1 - coef_max) / coef_max)`, so
    /// every output stays below `vocab_size`.
    pub fn max_input(&self) -> Option<u32> {
        let room = (self.vocab_size as i64) - 1 - self.coef_max as i64;
        (room >= 0 && self.coef_max >= 1).then(|| (room / self.coef_max as i64) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearFunction {
    pub a: u32,
    pub b: u32,
    pub perm: Vec<usize>,
}

pub fn apply_linear_function(f: &LinearFunction, x: &[u32]) -> Vec<u32> {
    f.perm.iter().map(|&j| f.a * x[j] + f.b).collect()
}

pub fn gen_icl(p: &IclParams) -> Result<TokenStream> {
    check_lengths(&[
        ("num_functions", p.num_functions),
        ("num_examples", p.num_examples),
        ("io_len", p.io_len),
        ("coef_max", p.coef_max as usize),
    ])?;
    if p.num_functions > NUM_FUNCTION_MARKERS {
        return Err(OvqError::config(format!(
            "at most {NUM_FUNCTION_MARKERS} functions, got {}",
            p.num_functions
        )));
    }
    let x_max = p.max_input().ok_or_else(|| {
        OvqError::Generation(format!(
            "vocab of {} cannot hold outputs with coefficients up to {}",
            p.vocab_size, p.coef_max
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let functions: Vec<LinearFunction> = (0..p.num_functions)
        .map(|_| {
            let a = rng.random_range(1..=p.coef_max);
            let b = rng.random_range(1..=p.coef_max);
            let mut perm: Vec<usize> = (0..p.io_len).collect();
            perm.shuffle(&mut rng);
            LinearFunction { a, b, perm }
        })
        .collect();

    let sp = SpecialTokens::new(p.vocab_size);
    let mut s = TokenStream {
        tokens: Vec::with_capacity(p.expected_len()),
        targets: Vec::with_capacity(p.expected_len()),
        vocab_size: p.vocab_size,
        meta: StreamMeta {
            params: TaskParams::Icl(p.clone()),
            functions: Vec::new(),
        },
    };
    for _ in 0..p.num_examples {
        let f = rng.random_range(0..p.num_functions);
        let x: Vec<u32> = (0..p.io_len).map(|_| rng.random_range(0..=x_max)).collect();
        let y = apply_linear_function(&functions[f], &x);
        s.push(&x);
        s.push(&[sp.function_marker(f)]);
        let start = s.push(&y);
        s.supervise(start, start + p.io_len);
        s.push(&[sp.separator]);
    }
    s.meta.functions = functions;
    Ok(s)
}
