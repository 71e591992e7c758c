//! In-context recall streams.
//!
//! Basic: `num_pairs` blocks `[key, assign, value, separator]`, the query
//! marker, then `num_queries` blocks `[key, assign, value]` for keys drawn
//! without replacement from the context. Only query-section values are
//! scored.
//!
//! Positional: every key appears `copies` times with a distinct value, in
//! shuffled order. The query section repeats one key `copies` times and the
//! answers are its values in context order.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_lengths, unique_tuples, SpecialTokens, StreamMeta, TaskParams, TokenStream};
use crate::error::{OvqError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicIcrParams {
    pub num_pairs: usize,
    pub key_len: usize,
    pub val_len: usize,
    pub vocab_size: u32,
    pub num_queries: usize,
    pub seed: u64,
}

impl Default for BasicIcrParams {
    fn default() -> Self {
        Self {
            num_pairs: 220,
            key_len: 8,
            val_len: 8,
            vocab_size: 10_000,
            num_queries: 6,
            seed: 0,
        }
    }
}

impl BasicIcrParams {
    pub fn expected_len(&self) -> usize {
        self.num_pairs * (self.key_len + self.val_len + 2) + 1 + self.num_queries * (self.key_len + self.val_len + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalIcrParams {
    pub num_keys: usize,
    pub copies: usize,
    pub key_len: usize,
    pub val_len: usize,
    pub vocab_size: u32,
    pub seed: u64,
    /// Shuffle the context blocks; when off, blocks run key by key.
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn yes() -> bool {
    true
}

impl Default for PositionalIcrParams {
    fn default() -> Self {
        Self {
            num_keys: 55,
            copies: 4,
            key_len: 8,
            val_len: 8,
            vocab_size: 10_000,
            seed: 0,
            shuffle: true,
        }
    }
}

impl PositionalIcrParams {
    pub fn expected_len(&self) -> usize {
        self.num_keys * self.copies * (self.key_len + self.val_len + 2)
            + 1
            + self.copies * (self.key_len + self.val_len + 1)
    }
}

fn empty_stream(vocab_size: u32, params: TaskParams, len: usize) -> TokenStream {
    TokenStream {
        tokens: Vec::with_capacity(len),
        targets: Vec::with_capacity(len),
        vocab_size,
        meta: StreamMeta {
            params,
            functions: Vec::new(),
        },
    }
}

/// Append `[key, assign, value]`, returning where the value starts.
fn push_pair(s: &mut TokenStream, sp: &SpecialTokens, key: &[u32], value: &[u32]) -> usize {
    s.push(key);
    s.push(&[sp.assign]);
    s.push(value)
}

pub fn gen_basic_icr(p: &BasicIcrParams) -> Result<TokenStream> {
    check_lengths(&[
        ("num_pairs", p.num_pairs),
        ("key_len", p.key_len),
        ("val_len", p.val_len),
        ("vocab_size", p.vocab_size as usize),
    ])?;
    if p.num_queries > p.num_pairs {
        return Err(OvqError::config(format!(
            "{} queries exceed {} context pairs",
            p.num_queries, p.num_pairs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let keys = unique_tuples(&mut rng, p.num_pairs, p.key_len, p.vocab_size)?;
    let values = unique_tuples(&mut rng, p.num_pairs, p.val_len, p.vocab_size)?;
    let queries = sample(&mut rng, p.num_pairs, p.num_queries).into_vec();

    let sp = SpecialTokens::new(p.vocab_size);
    let mut s = empty_stream(p.vocab_size, TaskParams::BasicIcr(p.clone()), p.expected_len());
    for (k, v) in keys.iter().zip(&values) {
        push_pair(&mut s, &sp, k, v);
        s.push(&[sp.separator]);
    }
    s.push(&[sp.query_marker]);
    for q in queries {
        let start = push_pair(&mut s, &sp, &keys[q], &values[q]);
        s.supervise(start, start + p.val_len);
    }
    Ok(s)
}

pub fn gen_positional_icr(p: &PositionalIcrParams) -> Result<TokenStream> {
    check_lengths(&[
        ("num_keys", p.num_keys),
        ("key_len", p.key_len),
        ("val_len", p.val_len),
        ("vocab_size", p.vocab_size as usize),
    ])?;
    if p.copies < 2 {
        return Err(OvqError::config("positional recall needs at least 2 copies"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let keys = unique_tuples(&mut rng, p.num_keys, p.key_len, p.vocab_size)?;
    let values = unique_tuples(&mut rng, p.num_keys * p.copies, p.val_len, p.vocab_size)?;
    let query_key = rng.random_range(0..p.num_keys);
    // block b holds key b / copies with value b; the shuffle gets its own
    // stream so the value assignment does not depend on it
    let mut order: Vec<usize> = (0..p.num_keys * p.copies).collect();
    if p.shuffle {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5DEE_CE66_D1CE_4E5B);
        order.shuffle(&mut shuffle_rng);
    }

    let sp = SpecialTokens::new(p.vocab_size);
    let mut s = empty_stream(p.vocab_size, TaskParams::PositionalIcr(p.clone()), p.expected_len());
    let mut answers = Vec::with_capacity(p.copies);
    for &b in &order {
        push_pair(&mut s, &sp, &keys[b / p.copies], &values[b]);
        s.push(&[sp.separator]);
        if b / p.copies == query_key {
            answers.push(b);
        }
    }
    s.push(&[sp.query_marker]);
    for b in answers {
        let start = push_pair(&mut s, &sp, &keys[query_key], &values[b]);
        s.supervise(start, start + p.val_len);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_basic_stream_layout() {
        let p = BasicIcrParams {
            num_pairs: 2,
            key_len: 1,
            val_len: 1,
            vocab_size: 50,
            num_queries: 1,
            seed: 3,
        };
        let s = gen_basic_icr(&p).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.target_positions().collect::<Vec<_>>(), vec![10]);
        let sp = s.specials();
        assert_eq!(s.tokens[1], sp.assign);
        assert_eq!(s.tokens[3], sp.separator);
        assert_eq!(s.tokens[8], sp.query_marker);
        s.validate().unwrap();
    }

    #[test]
    fn default_basic_length() {
        assert_eq!(BasicIcrParams::default().expected_len(), 4063);
    }

    #[test]
    fn too_many_queries() {
        let p = BasicIcrParams {
            num_pairs: 2,
            num_queries: 3,
            ..Default::default()
        };
        assert!(matches!(gen_basic_icr(&p), Err(OvqError::Config(_))));
    }

    #[test]
    fn tiny_vocab_cannot_be_unique() {
        let p = BasicIcrParams {
            num_pairs: 5,
            key_len: 1,
            val_len: 1,
            vocab_size: 4,
            num_queries: 1,
            seed: 0,
        };
        assert!(matches!(gen_basic_icr(&p), Err(OvqError::Generation(_))));
    }

    #[test]
    fn positional_answers_follow_context_order() {
        let p = PositionalIcrParams {
            num_keys: 1,
            copies: 2,
            key_len: 1,
            val_len: 1,
            vocab_size: 1000,
            seed: 9,
            shuffle: true,
        };
        let s = gen_positional_icr(&p).unwrap();
        // context values sit at 2 and 6; query values at 11 and 14
        assert_eq!(s.tokens[11], s.tokens[2]);
        assert_eq!(s.tokens[14], s.tokens[6]);
        assert_eq!(s.target_positions().collect::<Vec<_>>(), vec![10, 13]);
        assert!(gen_positional_icr(&PositionalIcrParams { copies: 1, ..p }).is_err());
    }
}
