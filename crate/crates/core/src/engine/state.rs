use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, Fault, OvqConfig, Similarity, UpdateRule};
use super::growth::{dictionary_target, linear_growth_budget};
use crate::attention::{AttentionOutput, HeadSequence};
use crate::error::{OvqError, Result};
use crate::matrix::{axpy, dot, normalize, sq_dist, Matrix, Scalar};

/// What one chunk did to the dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkUpdateRecord {
    /// Centroid index each chunk row was merged into or installed as.
    pub assignments: Vec<usize>,
    /// Chunk rows that became new centroids, in creation order.
    pub new_centroid_positions: Vec<usize>,
    /// Step size applied to each row; 1 for rows installed as centroids.
    pub learning_rates: Vec<f64>,
}

/// Streaming OVQ-attention state for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct OvqState<T: Scalar = f64> {
    config: OvqConfig,
    d: usize,
    means_k: Matrix<T>,
    means_v: Matrix<T>,
    counts: Vec<u64>,
    tokens_seen: u64,
    chunks_seen: u64,
}

impl<T: Scalar> OvqState<T> {
    pub fn new(config: OvqConfig, d: usize) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(OvqError::config("head dimension must be at least 1"));
        }
        Ok(Self {
            config,
            d,
            means_k: Matrix::with_cols(d),
            means_v: Matrix::with_cols(d),
            counts: Vec::new(),
            tokens_seen: 0,
            chunks_seen: 0,
        })
    }

    pub(crate) fn from_parts(
        config: OvqConfig,
        d: usize,
        means_k: Matrix<T>,
        means_v: Matrix<T>,
        counts: Vec<u64>,
        tokens_seen: u64,
        chunks_seen: u64,
    ) -> Result<Self> {
        config.validate()?;
        let n = counts.len();
        if means_k.rows() != n || means_v.rows() != n || means_k.cols() != d || means_v.cols() != d {
            return Err(OvqError::InvalidState("dictionary shapes are inconsistent".into()));
        }
        if n > config.n_max {
            return Err(OvqError::InvalidState(format!(
                "{n} active components exceed n_max {}",
                config.n_max
            )));
        }
        if counts.contains(&0) || counts.iter().sum::<u64>() != tokens_seen {
            return Err(OvqError::InvalidState(
                "counts must be positive and sum to tokens_seen".into(),
            ));
        }
        Ok(Self {
            config,
            d,
            means_k,
            means_v,
            counts,
            tokens_seen,
            chunks_seen,
        })
    }

    pub fn config(&self) -> &OvqConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_active(&self) -> usize {
        self.counts.len()
    }

    pub fn tokens_seen(&self) -> u64 {
        self.tokens_seen
    }

    pub fn chunks_seen(&self) -> u64 {
        self.chunks_seen
    }

    pub fn means_k(&self) -> &Matrix<T> {
        &self.means_k
    }

    pub fn means_v(&self) -> &Matrix<T> {
        &self.means_v
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Scalars held by the dictionary: `n_active * (2d + 1)`.
    pub fn live_scalars(&self) -> u64 {
        (self.n_active() * (2 * self.d + 1)) as u64
    }

    /// Read out the dictionary alone: `softmax(beta q D_k^T + log c) D_v`.
    pub fn readout(&self, q: &[T]) -> Vec<T> {
        let beta = T::from_f64(self.config.beta);
        let logits: Vec<T> = (0..self.n_active())
            .map(|n| beta * dot(q, self.means_k.row(n)) + log_count(self.counts[n]))
            .collect();
        let weights = softmax(&logits);
        let mut out = vec![T::zero(); self.d];
        for (n, &w) in weights.iter().enumerate() {
            axpy(&mut out, w, self.means_v.row(n));
        }
        out
    }

    /// Attention weights of chunk row `i` over the dictionary followed by the
    /// visible chunk columns `0..=i`.
    pub fn prediction_weights(&self, q_row: &[T], i: usize, k_chunk: &Matrix<T>) -> Vec<T> {
        softmax(&self.prediction_logits(q_row, i, k_chunk))
    }

    fn visible_columns(&self, i: usize, chunk_rows: usize) -> usize {
        match self.config.fault {
            Some(Fault::MaskOffByOne) => (i + 2).min(chunk_rows),
            _ => i + 1,
        }
    }

    fn prediction_logits(&self, q_row: &[T], i: usize, k_chunk: &Matrix<T>) -> Vec<T> {
        let beta = T::from_f64(self.config.beta);
        let visible = self.visible_columns(i, k_chunk.rows());
        let mut logits = Vec::with_capacity(self.n_active() + visible);
        for n in 0..self.n_active() {
            logits.push(beta * dot(q_row, self.means_k.row(n)) + log_count(self.counts[n]));
        }
        for j in 0..visible {
            // raw chunk tokens carry a count of one, log(1) = 0
            logits.push(beta * dot(q_row, k_chunk.row(j)));
        }
        logits
    }

    /// Chunk outputs against the current dictionary, without updating it.
    pub fn predict_chunk(&self, q_chunk: &Matrix<T>, k_chunk: &Matrix<T>, v_chunk: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_chunk(Some(q_chunk), k_chunk, v_chunk)?;
        let mut out = Matrix::with_cols(self.d);
        for i in 0..q_chunk.rows() {
            let weights = self.prediction_weights(q_chunk.row(i), i, k_chunk);
            let (dict_w, chunk_w) = weights.split_at(self.n_active());
            let mut row = vec![T::zero(); self.d];
            for (n, &w) in dict_w.iter().enumerate() {
                axpy(&mut row, w, self.means_v.row(n));
            }
            for (j, &w) in chunk_w.iter().enumerate() {
                axpy(&mut row, w, v_chunk.row(j));
            }
            out.push_row(&row)?;
        }
        Ok(out)
    }

    /// Predict the chunk, then fold it into the dictionary.
    pub fn forward_chunk(
        &mut self,
        q_chunk: &Matrix<T>,
        k_chunk: &Matrix<T>,
        v_chunk: &Matrix<T>,
    ) -> Result<(Matrix<T>, ChunkUpdateRecord)> {
        let out = self.predict_chunk(q_chunk, k_chunk, v_chunk)?;
        let record = self.absorb_chunk(k_chunk, v_chunk)?;
        Ok((out, record))
    }

    /// Fold a chunk of keys and values into the dictionary.
    pub fn absorb_chunk(&mut self, k_chunk: &Matrix<T>, v_chunk: &Matrix<T>) -> Result<ChunkUpdateRecord> {
        self.check_chunk(None, k_chunk, v_chunk)?;
        let n_new = self.chunk_budget(k_chunk.rows());
        let positions = self.select_new_centroids(k_chunk, v_chunk, n_new)?;
        let assignments = self.assign(k_chunk, v_chunk, &positions);
        self.update_dictionary(k_chunk, v_chunk, &assignments, &positions)
    }

    fn check_chunk(&self, q: Option<&Matrix<T>>, k: &Matrix<T>, v: &Matrix<T>) -> Result<()> {
        let l = k.rows();
        if l == 0 || l > self.config.chunk_len {
            return Err(OvqError::config(format!(
                "chunk has {l} rows, expected 1..={}",
                self.config.chunk_len
            )));
        }
        let q_ok = q.is_none_or(|q| q.rows() == l && q.cols() == self.d);
        if !q_ok || v.rows() != l || k.cols() != self.d || v.cols() != self.d {
            return Err(OvqError::config(format!(
                "chunk shapes do not match head dimension {}",
                self.d
            )));
        }
        Ok(())
    }

    /// Number of centroids the next chunk of `chunk_rows` tokens creates.
    pub fn chunk_budget(&self, chunk_rows: usize) -> usize {
        let n_max = self.config.n_max as u64;
        let active = self.n_active() as u64;
        let mut n_new = match self.config.ablation {
            Ablation::LinearGrowth { expected_len } => {
                let planned = (expected_len as u64).div_ceil(self.config.chunk_len as u64);
                let b = linear_growth_budget(self.chunks_seen + 1, planned, n_max);
                if active == 0 {
                    b.max(1)
                } else {
                    b
                }
            }
            _ => {
                let after = dictionary_target(self.tokens_seen + chunk_rows as u64, n_max);
                after.saturating_sub(active)
            }
        };
        if self.config.fault == Some(Fault::GrowthOverAllocation) {
            n_new += 1;
        }
        n_new.min(chunk_rows as u64).min(n_max - active) as usize
    }

    fn similarity(&self, k: &[T], v: &[T], n: usize) -> T {
        match self.config.similarity {
            Similarity::KeyDot => dot(k, self.means_k.row(n)),
            Similarity::Joint => -(sq_dist(k, self.means_k.row(n)) + sq_dist(v, self.means_v.row(n))),
        }
    }

    fn pair_similarity(&self, k: &Matrix<T>, v: &Matrix<T>, a: usize, b: usize) -> T {
        match self.config.similarity {
            Similarity::KeyDot => dot(k.row(a), k.row(b)),
            Similarity::Joint => -(sq_dist(k.row(a), k.row(b)) + sq_dist(v.row(a), v.row(b))),
        }
    }

    /// Best existing centroid and its similarity for every chunk row.
    fn nearest_existing(&self, k: &Matrix<T>, v: &Matrix<T>) -> Vec<(usize, T)> {
        (0..k.rows())
            .map(|i| {
                let mut best = (0, T::neg_infinity());
                for n in 0..self.n_active() {
                    let s = self.similarity(k.row(i), v.row(i), n);
                    if s > best.1 {
                        best = (n, s);
                    }
                }
                best
            })
            .collect()
    }

    /// Chunk rows that seed new centroids.
    ///
    /// With a populated dictionary these are the `n_new` rows whose best
    /// similarity to any centroid is lowest (lower row wins ties). An empty
    /// dictionary is seeded greedily from the chunk itself: row 0 first, then
    /// repeatedly the row least similar to everything chosen so far.
    pub fn select_new_centroids(&self, k_chunk: &Matrix<T>, v_chunk: &Matrix<T>, n_new: usize) -> Result<Vec<usize>> {
        let l = k_chunk.rows();
        if n_new > l {
            return Err(OvqError::config(format!(
                "cannot create {n_new} centroids from a chunk of {l} rows"
            )));
        }
        if n_new == 0 {
            return Ok(Vec::new());
        }
        if self.config.ablation == Ablation::RandomAssign {
            let mut rng =
                ChaCha8Rng::seed_from_u64(self.config.seed ^ self.chunks_seen.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            return Ok(sample(&mut rng, l, n_new).into_vec());
        }
        if self.n_active() == 0 {
            return Ok(self.farthest_point_seeds(k_chunk, v_chunk, n_new));
        }
        let best = self.nearest_existing(k_chunk, v_chunk);
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| {
            best[a]
                .1
                .partial_cmp(&best[b].1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(n_new);
        Ok(order)
    }

    fn farthest_point_seeds(&self, k: &Matrix<T>, v: &Matrix<T>, n_new: usize) -> Vec<usize> {
        let l = k.rows();
        let mut chosen = vec![0usize];
        let mut taken = vec![false; l];
        taken[0] = true;
        let mut closest: Vec<T> = (0..l).map(|j| self.pair_similarity(k, v, j, 0)).collect();
        while chosen.len() < n_new {
            let mut pick: Option<usize> = None;
            for j in 0..l {
                if taken[j] {
                    continue;
                }
                if pick.is_none_or(|p| closest[j] < closest[p]) {
                    pick = Some(j);
                }
            }
            let p = pick.expect("n_new <= chunk rows");
            taken[p] = true;
            chosen.push(p);
            for j in 0..l {
                let s = self.pair_similarity(k, v, j, p);
                if s > closest[j] {
                    closest[j] = s;
                }
            }
        }
        chosen
    }

    /// Assignment of every chunk row: seeds point at their fresh indices,
    /// every other row at its nearest pre-update centroid (or nearest seed
    /// when the dictionary was empty).
    fn assign(&self, k: &Matrix<T>, v: &Matrix<T>, positions: &[usize]) -> Vec<usize> {
        let base = self.n_active();
        let mut assignments: Vec<usize> = if base > 0 {
            self.nearest_existing(k, v).into_iter().map(|(n, _)| n).collect()
        } else {
            (0..k.rows())
                .map(|i| {
                    let mut best = (0, T::neg_infinity());
                    for (rank, &p) in positions.iter().enumerate() {
                        let s = self.pair_similarity(k, v, i, p);
                        if s > best.1 {
                            best = (rank, s);
                        }
                    }
                    best.0
                })
                .collect()
        };
        for (rank, &p) in positions.iter().enumerate() {
            assignments[p] = base + rank;
        }
        assignments
    }

    /// Sparse dictionary update for one chunk.
    ///
    /// Seeds are installed as `[k, v]` rows with count 1. Every other row is
    /// merged into its assigned centroid with step `lr * ([k, v] - mu)`, where
    /// under [`UpdateRule::MiniBatch`] `lr = 1 / (post-update count)` and `mu`
    /// is the centroid as gathered before any merge of this chunk. Rows of
    /// the dictionary nobody was assigned to are left bit-for-bit untouched.
    pub fn update_dictionary(
        &mut self,
        k_chunk: &Matrix<T>,
        v_chunk: &Matrix<T>,
        assignments: &[usize],
        new_positions: &[usize],
    ) -> Result<ChunkUpdateRecord> {
        self.check_chunk(None, k_chunk, v_chunk)?;
        let l = k_chunk.rows();
        let base = self.n_active();
        let n_new = new_positions.len();
        if assignments.len() != l {
            return Err(OvqError::Internal(format!(
                "{} assignments for a chunk of {l} rows",
                assignments.len()
            )));
        }
        if base + n_new > self.config.n_max {
            return Err(OvqError::InvalidState(format!(
                "{n_new} new centroids would exceed n_max {}",
                self.config.n_max
            )));
        }
        let mut is_seed = vec![false; l];
        for (rank, &p) in new_positions.iter().enumerate() {
            if p >= l || is_seed[p] {
                return Err(OvqError::Internal(format!("bad new-centroid position {p}")));
            }
            is_seed[p] = true;
            if assignments[p] != base + rank {
                return Err(OvqError::Internal(format!(
                    "seed row {p} points at {} instead of fresh index {}",
                    assignments[p],
                    base + rank
                )));
            }
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= base + n_new) {
            return Err(OvqError::Internal(format!(
                "assignment {bad} is beyond the {} live components",
                base + n_new
            )));
        }

        for &p in new_positions {
            self.means_k.push_row(k_chunk.row(p))?;
            self.means_v.push_row(v_chunk.row(p))?;
            self.counts.push(1);
        }

        let merged: Vec<usize> = (0..l).filter(|&i| !is_seed[i]).collect();
        let mut lrs = vec![1.0f64; l];
        match self.config.update_rule {
            UpdateRule::MiniBatch => self.merge_minibatch(k_chunk, v_chunk, assignments, &merged, &mut lrs),
            UpdateRule::Sequential => self.merge_sequential(k_chunk, v_chunk, assignments, &merged, &mut lrs),
        }

        if self.config.normalize_centroids {
            let mut touched: Vec<usize> = assignments.to_vec();
            touched.sort_unstable();
            touched.dedup();
            for n in touched {
                normalize(self.means_k.row_mut(n));
            }
        }

        self.tokens_seen += l as u64;
        self.chunks_seen += 1;
        Ok(ChunkUpdateRecord {
            assignments: assignments.to_vec(),
            new_centroid_positions: new_positions.to_vec(),
            learning_rates: lrs,
        })
    }

    fn constant_rate(&self) -> Option<f64> {
        match self.config.ablation {
            Ablation::ConstantLr { rate } => Some(rate),
            _ => None,
        }
    }

    fn merge_minibatch(
        &mut self,
        k: &Matrix<T>,
        v: &Matrix<T>,
        assignments: &[usize],
        merged: &[usize],
        lrs: &mut [f64],
    ) {
        for (idx, &i) in merged.iter().enumerate() {
            if idx == 0 && self.config.fault == Some(Fault::CountSkip) {
                continue;
            }
            self.counts[assignments[i]] += 1;
        }
        let fixed = self.constant_rate();
        // deltas against the pre-merge centroids, then scatter-added in row order
        let mut deltas: Vec<(usize, Vec<T>, Vec<T>)> = Vec::with_capacity(merged.len());
        for &i in merged {
            let a = assignments[i];
            let lr = fixed.unwrap_or(1.0 / self.counts[a] as f64);
            lrs[i] = lr;
            let lr_t = T::from_f64(lr);
            let dk = step(lr_t, k.row(i), self.means_k.row(a));
            let dv = step(lr_t, v.row(i), self.means_v.row(a));
            deltas.push((a, dk, dv));
        }
        for (a, dk, dv) in deltas {
            axpy(self.means_k.row_mut(a), T::one(), &dk);
            axpy(self.means_v.row_mut(a), T::one(), &dv);
        }
    }

    fn merge_sequential(
        &mut self,
        k: &Matrix<T>,
        v: &Matrix<T>,
        assignments: &[usize],
        merged: &[usize],
        lrs: &mut [f64],
    ) {
        let mut in_chunk = std::collections::HashMap::<usize, u64>::new();
        for &i in merged {
            *in_chunk.entry(assignments[i]).or_default() += 1;
        }
        let fixed = self.constant_rate();
        for &i in merged {
            let a = assignments[i];
            let lr = fixed.unwrap_or(1.0 / (self.counts[a] + in_chunk[&a]) as f64);
            lrs[i] = lr;
            let lr_t = T::from_f64(lr);
            let dk = step(lr_t, k.row(i), self.means_k.row(a));
            let dv = step(lr_t, v.row(i), self.means_v.row(a));
            axpy(self.means_k.row_mut(a), T::one(), &dk);
            axpy(self.means_v.row_mut(a), T::one(), &dv);
        }
        for (idx, &i) in merged.iter().enumerate() {
            if idx == 0 && self.config.fault == Some(Fault::CountSkip) {
                continue;
            }
            self.counts[assignments[i]] += 1;
        }
    }
}

/// `lr * (x - mu)`
fn step<T: Scalar>(lr: T, x: &[T], mu: &[T]) -> Vec<T> {
    x.iter().zip(mu).map(|(&a, &b)| lr * (a - b)).collect()
}

fn log_count<T: Scalar>(c: u64) -> T {
    T::from_f64((c as f64).ln())
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut w: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z = w.iter().copied().fold(T::zero(), |a, b| a + b);
    for x in w.iter_mut() {
        *x = *x / z;
    }
    w
}

/// Outputs, final state and the dictionary size trace of a full run.
#[derive(Debug, Clone)]
pub struct SequenceRun<T: Scalar = f64> {
    pub output: Matrix<T>,
    pub state: OvqState<T>,
    /// `(tokens seen, live state scalars)` after every chunk.
    pub trace: Vec<(u64, u64)>,
}

/// Run a whole sequence chunk by chunk through a fresh state.
pub fn forward_sequence<T: Scalar>(
    config: &OvqConfig,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<SequenceRun<T>> {
    let state = OvqState::new(config.clone(), q.cols())?;
    continue_sequence(state, q, k, v)
}

/// Run a sequence through an existing state.
pub fn continue_sequence<T: Scalar>(
    mut state: OvqState<T>,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<SequenceRun<T>> {
    let t = q.rows();
    if k.rows() != t || v.rows() != t {
        return Err(OvqError::config("q/k/v token counts differ"));
    }
    let l = state.config().chunk_len;
    let mut output = Matrix::with_cols(state.dim());
    let mut trace = Vec::with_capacity(t.div_ceil(l));
    for start in (0..t).step_by(l) {
        let end = (start + l).min(t);
        let (out, _) = state.forward_chunk(
            &q.slice_rows(start, end),
            &k.slice_rows(start, end),
            &v.slice_rows(start, end),
        )?;
        for r in out.iter_rows() {
            output.push_row(r)?;
        }
        trace.push((state.tokens_seen(), state.live_scalars()));
    }
    Ok(SequenceRun { output, state, trace })
}

/// Run a head sequence through a fresh 64-bit state.
#[allow(clippy::type_complexity)]
pub fn ovq_forward_sequence(
    config: &OvqConfig,
    seq: &HeadSequence,
) -> Result<(AttentionOutput, OvqState<f64>, Vec<(u64, u64)>)> {
    let run = forward_sequence(config, &seq.q, &seq.k, &seq.v)?;
    Ok((AttentionOutput { o: run.output }, run.state, run.trace))
}
