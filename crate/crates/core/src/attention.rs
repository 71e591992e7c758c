//! Exact reference implementations of causal softmax attention and the three
//! equivalent forms of vector-quantized attention.
//!
//! Everything here is plain 64-bit scalar code written for clarity rather than
//! speed; these functions are the yardsticks the streaming engine and the
//! mixture-regression oracle are checked against.

use serde::{Deserialize, Serialize};

use crate::error::{OvqError, Result};
use crate::matrix::{axpy, dot, norm, Matrix};

/// Tolerance on the L2 norm of query and key rows.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Denominator guard of the sum-state linear attention baseline.
pub const LINEAR_ATTENTION_EPS: f64 = 1e-9;

/// Queries, keys and values of one attention head over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSequence {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Logit scale, equivalently the precision of the kernel.
    pub beta: f64,
}

impl HeadSequence {
    pub fn new(q: Matrix, k: Matrix, v: Matrix, beta: f64) -> Result<Self> {
        let t = q.rows();
        if t == 0 {
            return Err(OvqError::config("sequence must contain at least one token"));
        }
        if k.rows() != t || v.rows() != t {
            return Err(OvqError::config(format!(
                "q/k/v token counts differ: {} / {} / {}",
                t,
                k.rows(),
                v.rows()
            )));
        }
        let d = q.cols();
        if d == 0 || k.cols() != d || v.cols() != d {
            return Err(OvqError::config(format!(
                "q/k/v head dimensions differ or are zero: {} / {} / {}",
                d,
                k.cols(),
                v.cols()
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(OvqError::config(format!("beta must be finite and >= 0, got {beta}")));
        }
        check_unit_rows("q", &q)?;
        check_unit_rows("k", &k)?;
        Ok(Self { q, k, v, beta })
    }

    /// Random unit-norm queries and keys with Gaussian values.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, t: usize, d: usize, beta: f64) -> Self {
        let q = Matrix::random_unit(rng, t, d);
        let k = Matrix::random_unit(rng, t, d);
        let v = Matrix::random_gaussian(rng, t, d);
        Self::new(q, k, v, beta).expect("random sequence is valid")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.q.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.q.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.q.cols()
    }

    /// The first `t` tokens.
    pub fn prefix(&self, t: usize) -> Self {
        Self {
            q: self.q.slice_rows(0, t),
            k: self.k.slice_rows(0, t),
            v: self.v.slice_rows(0, t),
            beta: self.beta,
        }
    }
}

fn check_unit_rows(name: &str, m: &Matrix) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(OvqError::config(format!(
                "{name} row {i} has norm {n}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// Paired key/value centroids with per-component token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub means_k: Vec<Vec<f64>>,
    pub means_v: Vec<Vec<f64>>,
    pub counts: Vec<f64>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub o: Matrix,
}

/// Softmax-weighted readout over a list of logits and their value rows.
///
/// Entries with a logit of negative infinity get weight exactly zero. The
/// returned weights are the normalized softmax.
pub fn softmax_readout<'a, I>(entries: I, d: usize) -> (Vec<f64>, Vec<f64>)
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let entries: Vec<(f64, &[f64])> = entries.into_iter().collect();
    let max = entries.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; d];
    let mut weights = Vec::with_capacity(entries.len());
    let mut z = 0.0;
    for &(logit, row) in &entries {
        let w = if logit == f64::NEG_INFINITY {
            0.0
        } else {
            (logit - max).exp()
        };
        z += w;
        weights.push(w);
        axpy(&mut out, w, row);
    }
    for x in out.iter_mut() {
        *x /= z;
    }
    for w in weights.iter_mut() {
        *w /= z;
    }
    (out, weights)
}

/// Causal softmax attention: row `t` attends to keys `0..=t`.
pub fn softmax_attention(seq: &HeadSequence) -> Result<AttentionOutput> {
    let d = seq.dim();
    let mut o = Matrix::with_cols(d);
    for t in 0..seq.len() {
        let (row, _) = softmax_attention_row(seq, t);
        o.push_row(&row)?;
    }
    Ok(AttentionOutput { o })
}

/// Output row `t` of causal softmax attention and the weights over `0..=t`.
pub fn softmax_attention_row(seq: &HeadSequence, t: usize) -> (Vec<f64>, Vec<f64>) {
    let q = seq.q.row(t);
    softmax_readout(
        (0..=t).map(|i| (seq.beta * dot(q, seq.k.row(i)), seq.v.row(i))),
        seq.dim(),
    )
}

/// Nearest centroid (maximum dot product) for every key row. Ties go to the
/// lowest centroid index.
pub fn quantize_keys(k: &Matrix, centroids: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    if centroids.rows() == 0 {
        return Err(OvqError::InvalidState("dictionary has no centroids".into()));
    }
    if centroids.cols() != k.cols() {
        return Err(OvqError::config(format!(
            "centroid dimension {} does not match key dimension {}",
            centroids.cols(),
            k.cols()
        )));
    }
    let mut k_hat = Matrix::with_cols(k.cols());
    let mut assignments = Vec::with_capacity(k.rows());
    for key in k.iter_rows() {
        let a = nearest_centroid(key, centroids);
        assignments.push(a);
        k_hat.push_row(centroids.row(a))?;
    }
    Ok((k_hat, assignments))
}

fn nearest_centroid(key: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (n, c) in centroids.iter_rows().enumerate() {
        let s = dot(key, c);
        if s > best_sim {
            best_sim = s;
            best = n;
        }
    }
    best
}

/// Quadratic-time VQ attention: causal softmax attention with every key
/// replaced by its nearest centroid.
pub fn vq_attention_quadratic(seq: &HeadSequence, centroids: &Matrix) -> Result<AttentionOutput> {
    let (k_hat, _) = quantize_keys(&seq.k, centroids)?;
    let quantized = HeadSequence {
        q: seq.q.clone(),
        k: k_hat,
        v: seq.v.clone(),
        beta: seq.beta,
    };
    softmax_attention(&quantized)
}

/// Streaming state of linear-time VQ attention over a fixed key dictionary.
///
/// Each pushed token is assigned to its nearest key centroid; its value is
/// averaged into that centroid's value mean and the count incremented. A
/// readout is `softmax(beta * q D_k^T + log c) D_v` with zero-count
/// components excluded.
#[derive(Debug, Clone)]
pub struct VqStream {
    means_k: Matrix,
    means_v: Matrix,
    counts: Vec<u64>,
    beta: f64,
}

impl VqStream {
    pub fn new(centroids: Matrix, beta: f64) -> Result<Self> {
        if centroids.rows() == 0 {
            return Err(OvqError::InvalidState("dictionary has no centroids".into()));
        }
        let n = centroids.rows();
        let d = centroids.cols();
        Ok(Self {
            means_k: centroids,
            means_v: Matrix::zeros(n, d),
            counts: vec![0; n],
            beta,
        })
    }

    /// Absorb one key/value pair; returns the centroid it was assigned to.
    pub fn push(&mut self, k: &[f64], v: &[f64]) -> usize {
        let a = nearest_centroid(k, &self.means_k);
        self.counts[a] += 1;
        let lr = 1.0 / self.counts[a] as f64;
        for (m, &x) in self.means_v.row_mut(a).iter_mut().zip(v) {
            *m += lr * (x - *m);
        }
        a
    }

    pub fn readout(&self, q: &[f64]) -> Vec<f64> {
        self.readout_with_weights(q).0
    }

    pub fn readout_with_weights(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        softmax_readout(
            (0..self.counts.len()).map(|n| {
                let logit = match self.counts[n] {
                    0 => f64::NEG_INFINITY,
                    c => self.beta * dot(q, self.means_k.row(n)) + (c as f64).ln(),
                };
                (logit, self.means_v.row(n))
            }),
            self.means_v.cols(),
        )
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn means_k(&self) -> &Matrix {
        &self.means_k
    }

    pub fn means_v(&self) -> &Matrix {
        &self.means_v
    }

    /// Populated components only, as a plain dictionary.
    pub fn dictionary(&self) -> Dictionary {
        let live: Vec<usize> = (0..self.counts.len()).filter(|&n| self.counts[n] > 0).collect();
        Dictionary {
            means_k: live.iter().map(|&n| self.means_k.row(n).to_vec()).collect(),
            means_v: live.iter().map(|&n| self.means_v.row(n).to_vec()).collect(),
            counts: live.iter().map(|&n| self.counts[n] as f64).collect(),
        }
    }
}

/// Linear-time VQ attention with per-centroid counts.
pub fn vq_attention_linear(seq: &HeadSequence, centroids: &Matrix) -> Result<AttentionOutput> {
    check_centroids(seq, centroids)?;
    let mut stream = VqStream::new(centroids.clone(), seq.beta)?;
    let mut o = Matrix::with_cols(seq.dim());
    for t in 0..seq.len() {
        stream.push(seq.k.row(t), seq.v.row(t));
        o.push_row(&stream.readout(seq.q.row(t)))?;
    }
    Ok(AttentionOutput { o })
}

fn check_centroids(seq: &HeadSequence, centroids: &Matrix) -> Result<()> {
    if centroids.rows() == 0 {
        return Err(OvqError::InvalidState("dictionary has no centroids".into()));
    }
    if centroids.cols() != seq.dim() {
        return Err(OvqError::config(format!(
            "centroid dimension {} does not match head dimension {}",
            centroids.cols(),
            seq.dim()
        )));
    }
    Ok(())
}

/// Chunk-recurrent VQ attention.
///
/// For a query in chunk `c` the softmax runs jointly over three groups:
/// the count-weighted dictionary built from chunks `0..c-1` (exclusive of
/// `c-1`), every quantized key of chunk `c-1`, and the causally visible
/// quantized keys of chunk `c`. The last chunk may be shorter than
/// `chunk_len`.
pub fn vq_attention_chunked(seq: &HeadSequence, centroids: &Matrix, chunk_len: usize) -> Result<AttentionOutput> {
    if chunk_len == 0 {
        return Err(OvqError::config("chunk length must be at least 1"));
    }
    check_centroids(seq, centroids)?;
    let (k_hat, assignments) = quantize_keys(&seq.k, centroids)?;
    let t_total = seq.len();
    let d = seq.dim();
    let n = centroids.rows();

    // dictionary summary of everything before the previous chunk
    let mut counts = vec![0u64; n];
    let mut means_v = Matrix::zeros(n, d);
    let mut o = Matrix::with_cols(d);

    let starts: Vec<usize> = (0..t_total).step_by(chunk_len).collect();
    for (c, &start) in starts.iter().enumerate() {
        let end = (start + chunk_len).min(t_total);
        if c >= 2 {
            let fold_start = starts[c - 2];
            for t in fold_start..fold_start + chunk_len {
                let a = assignments[t];
                counts[a] += 1;
                let lr = 1.0 / counts[a] as f64;
                for (m, &x) in means_v.row_mut(a).iter_mut().zip(seq.v.row(t)) {
                    *m += lr * (x - *m);
                }
            }
        }
        let window = if c >= 1 { starts[c - 1]..start } else { start..start };
        for i in start..end {
            let q = seq.q.row(i);
            let dict_terms = (0..n).map(|m| {
                let logit = match counts[m] {
                    0 => f64::NEG_INFINITY,
                    cnt => seq.beta * dot(q, centroids.row(m)) + (cnt as f64).ln(),
                };
                (logit, means_v.row(m))
            });
            let window_terms = window.clone().map(|j| (seq.beta * dot(q, k_hat.row(j)), seq.v.row(j)));
            let current_terms = (start..=i).map(|j| (seq.beta * dot(q, k_hat.row(j)), seq.v.row(j)));
            let (row, _) = softmax_readout(dict_terms.chain(window_terms).chain(current_terms), d);
            o.push_row(&row)?;
        }
    }
    Ok(AttentionOutput { o })
}

/// Sum-state linear attention: `S += k^T v`, `z += k`, output
/// `(q S) / (q . z + eps)`.
#[derive(Debug, Clone)]
pub struct LinearAttentionState {
    s: Matrix,
    z: Vec<f64>,
}

impl LinearAttentionState {
    pub fn new(d: usize) -> Self {
        Self {
            s: Matrix::zeros(d, d),
            z: vec![0.0; d],
        }
    }

    pub fn push(&mut self, k: &[f64], v: &[f64]) {
        for (a, &ka) in k.iter().enumerate() {
            axpy(self.s.row_mut(a), ka, v);
            self.z[a] += ka;
        }
    }

    pub fn readout(&self, q: &[f64]) -> Vec<f64> {
        let d = self.z.len();
        let mut num = vec![0.0; d];
        for (a, &qa) in q.iter().enumerate() {
            axpy(&mut num, qa, self.s.row(a));
        }
        let den = dot(q, &self.z) + LINEAR_ATTENTION_EPS;
        num.iter().map(|x| x / den).collect()
    }

    /// Live scalars: the `d x d` state plus the normalizer vector.
    pub fn state_scalars(&self) -> u64 {
        (self.z.len() * self.z.len() + self.z.len()) as u64
    }
}

pub fn linear_attention_baseline(seq: &HeadSequence) -> Result<AttentionOutput> {
    let mut state = LinearAttentionState::new(seq.dim());
    let mut o = Matrix::with_cols(seq.dim());
    for t in 0..seq.len() {
        state.push(seq.k.row(t), seq.v.row(t));
        o.push_row(&state.readout(seq.q.row(t)))?;
    }
    Ok(AttentionOutput { o })
}
