//! Live state size of each mixer as the stream grows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mixer::MixerSpec;
use ovq_core::{Matrix, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRow {
    pub mixer: String,
    pub t: usize,
    pub d: usize,
    pub n_max: Option<usize>,
    /// Live dictionary rows, OVQ only.
    pub n_active: Option<usize>,
    pub state_scalars: u64,
}

/// Stream `t` random unit keys and Gaussian values through a fresh mixer and
/// record its state size.
pub fn state_size(spec: &MixerSpec, t: usize, seed: u64) -> Result<StateRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Matrix::random_unit(&mut rng, t, spec.d);
    let v = Matrix::random_gaussian(&mut rng, t, spec.d);
    let mut mixer = spec.build(seed)?;
    mixer.absorb(&k, &v)?;
    Ok(StateRow {
        mixer: spec.label().to_string(),
        t,
        d: spec.d,
        n_max: spec.n_max(),
        n_active: mixer.ovq_state().map(|s| s.n_active()),
        state_scalars: mixer.state_scalars(),
    })
}

/// Every mixer at every length, in `(mixer, t)` order.
pub fn state_size_sweep(mixers: &[MixerSpec], t_grid: &[usize], seed: u64) -> Result<Vec<StateRow>> {
    let jobs: Vec<(&MixerSpec, usize)> = mixers
        .iter()
        .flat_map(|m| t_grid.iter().map(move |&t| (m, t)))
        .collect();
    jobs.par_iter().map(|(m, t)| state_size(m, *t, seed)).collect()
}
