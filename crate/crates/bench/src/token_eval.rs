//! Untrained token-task probe.
//!
//! Tokens are mapped to a seeded table of random unit embeddings `E`. With
//! `w_t = normalize(E[tok_{t-1}] + E[tok_t])` the mixer sees
//! `q_t = w_t`, `k_t = w_{t-1}` and `v_t = E[tok_t]`, so a query matches the
//! key of every earlier position that followed the same token pair and
//! retrieves what came next. Outputs at target positions are decoded to the
//! nearest embedding. Accuracies are comparative only: no weights are
//! trained.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mixer::{Mixer, MixerSpec};
use ovq_core::matrix::{argmax, dot, normalize};
use ovq_core::tasks::{TokenStream, NUM_SPECIALS};
use ovq_core::{Matrix, Result};

/// Below this dimension random embeddings collide too often to decode.
pub const MIN_RELIABLE_DIM: usize = 16;
pub const EVAL_LABEL: &str = "untrained embedding-space probe";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvalReport {
    pub mixer: String,
    pub label: String,
    pub n_max: Option<usize>,
    pub stream_len: usize,
    pub targets: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub state_scalars: u64,
    pub warnings: Vec<String>,
}

/// Query, key and value rows for a stream.
pub fn embed_stream(stream: &TokenStream, table: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let d = table.cols();
    let n = stream.len();
    let mut w = Matrix::with_cols(d);
    for t in 0..n {
        let cur = table.row(stream.tokens[t] as usize);
        let mut row = cur.to_vec();
        if t > 0 {
            for (r, p) in row.iter_mut().zip(table.row(stream.tokens[t - 1] as usize)) {
                *r += p;
            }
        }
        normalize(&mut row);
        w.push_row(&row)?;
    }
    let mut k = Matrix::with_cols(d);
    let mut v = Matrix::with_cols(d);
    for t in 0..n {
        k.push_row(w.row(t.saturating_sub(1)))?;
        v.push_row(table.row(stream.tokens[t] as usize))?;
    }
    Ok((w, k, v))
}

pub fn embedding_table(stream: &TokenStream, d: usize, seed: u64) -> Matrix {
    let rows = (stream.vocab_size + NUM_SPECIALS) as usize;
    Matrix::random_unit(&mut ChaCha8Rng::seed_from_u64(seed), rows, d)
}

pub fn token_task_eval(spec: &MixerSpec, stream: &TokenStream, embedding_seed: u64) -> Result<TokenEvalReport> {
    let mut mixer = spec.build(embedding_seed)?;
    eval_with_mixer(mixer.as_mut(), spec, stream, embedding_seed)
}

/// Evaluate with an existing mixer, which keeps the absorbed stream.
pub fn eval_with_mixer(
    mixer: &mut dyn Mixer,
    spec: &MixerSpec,
    stream: &TokenStream,
    embedding_seed: u64,
) -> Result<TokenEvalReport> {
    stream.validate()?;
    let mut warnings = Vec::new();
    if spec.d < MIN_RELIABLE_DIM {
        warnings.push(format!(
            "embedding dimension {} is below {MIN_RELIABLE_DIM}; nearest-neighbour decoding is unreliable",
            spec.d
        ));
    }
    let table = embedding_table(stream, spec.d, embedding_seed);
    let (q, k, v) = embed_stream(stream, &table)?;
    let out = mixer.forward(&q, &k, &v)?;
    let mut targets = 0;
    let mut correct = 0;
    for p in stream.target_positions() {
        let scores: Vec<f64> = table.iter_rows().map(|e| dot(out.row(p), e)).collect();
        targets += 1;
        if argmax(&scores) == stream.targets[p].map(|t| t as usize) {
            correct += 1;
        }
    }
    Ok(TokenEvalReport {
        mixer: spec.label().to_string(),
        label: EVAL_LABEL.to_string(),
        n_max: spec.n_max(),
        stream_len: stream.len(),
        targets,
        correct,
        accuracy: if targets == 0 {
            0.0
        } else {
            correct as f64 / targets as f64
        },
        state_scalars: mixer.state_scalars(),
        warnings,
    })
}
