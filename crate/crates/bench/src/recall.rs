//! Associative recall in embedding space.
//!
//! `T` random unit keys are paired with a codebook of `T` random unit values
//! and streamed through a mixer. Afterwards the mixer is probed with exact
//! copies of earlier keys; each answer is decoded to the nearest codebook
//! entry.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mixer::MixerSpec;
use ovq_core::matrix::{argmax, dot, norm};
use ovq_core::{Matrix, OvqError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub mixer: String,
    pub t: usize,
    /// Dictionary size for quantized mixers.
    pub n_max: Option<usize>,
    pub seed: u64,
    pub top1_accuracy: f64,
    pub mean_cosine: f64,
    pub state_scalars: u64,
    /// Not reproducible; excluded when rows are compared.
    pub wall_time_ms: f64,
}

impl RecallRow {
    /// Equality on everything except timing.
    pub fn same_result(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time_ms = other.wall_time_ms;
        &a == other
    }
}

/// The shared key/value/probe instance for a seed.
pub struct RecallInstance {
    pub keys: Matrix,
    pub codebook: Matrix,
    pub probes: Vec<usize>,
}

impl RecallInstance {
    pub fn new(t: usize, d: usize, num_probes: usize, seed: u64) -> Result<Self> {
        if t == 0 || num_probes > t {
            return Err(OvqError::Config(format!(
                "need 1 <= num_probes <= T, got {num_probes} probes for T = {t}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys = Matrix::random_unit(&mut rng, t, d);
        let codebook = Matrix::random_unit(&mut rng, t, d);
        let probes = sample(&mut rng, t, num_probes).into_vec();
        Ok(Self { keys, codebook, probes })
    }

    /// Nearest codebook row to `out`.
    pub fn decode(&self, out: &[f64]) -> usize {
        let scores: Vec<f64> = self.codebook.iter_rows().map(|c| dot(out, c)).collect();
        argmax(&scores).unwrap_or(0)
    }
}

pub fn recall_benchmark(spec: &MixerSpec, t: usize, num_probes: usize, seed: u64) -> Result<RecallRow> {
    let inst = RecallInstance::new(t, spec.d, num_probes, seed)?;
    let start = Instant::now();
    let mut mixer = spec.build(seed)?;
    mixer.absorb(&inst.keys, &inst.codebook)?;
    let mut correct = 0usize;
    let mut cos_sum = 0.0;
    for &p in &inst.probes {
        let out = mixer.probe(inst.keys.row(p));
        if inst.decode(&out) == p {
            correct += 1;
        }
        let n = norm(&out);
        if n > 0.0 {
            cos_sum += dot(&out, inst.codebook.row(p)) / n;
        }
    }
    let probes = num_probes.max(1) as f64;
    Ok(RecallRow {
        mixer: spec.label().to_string(),
        t,
        n_max: spec.n_max(),
        seed,
        top1_accuracy: correct as f64 / probes,
        mean_cosine: cos_sum / probes,
        state_scalars: mixer.state_scalars(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One grid job.
#[derive(Debug, Clone)]
pub struct RecallJob {
    pub spec: MixerSpec,
    pub t: usize,
    pub seed: u64,
}

/// Run jobs on the rayon pool; rows come back in job order.
pub fn recall_grid(jobs: &[RecallJob], num_probes: usize) -> Result<Vec<RecallRow>> {
    jobs.par_iter()
        .map(|j| recall_benchmark(&j.spec, j.t, num_probes, j.seed))
        .collect()
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
