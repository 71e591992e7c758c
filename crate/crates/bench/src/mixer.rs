//! Sequence mixers behind one streaming interface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ovq_core::attention::{softmax_readout, LinearAttentionState, VqStream};
use ovq_core::engine::{OvqConfig, OvqState};
use ovq_core::gmr::{init_means_kmeanspp, Precision};
use ovq_core::matrix::dot;
use ovq_core::{Matrix, OvqError, Result};

/// Where a fixed VQ dictionary comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictSource {
    /// Seeded random unit vectors.
    Random,
    /// k-means++ seeding over the first batch of keys the mixer sees.
    KmeansppKeys,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixerKind {
    FullAttention,
    VqFixed { n: usize, source: DictSource },
    Ovq(OvqConfig),
    LinearBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerSpec {
    pub kind: MixerKind,
    pub beta: f64,
    pub d: usize,
}

impl MixerSpec {
    pub fn new(kind: MixerKind, beta: f64, d: usize) -> Self {
        Self { kind, beta, d }
    }

    pub fn ovq(n_max: usize, chunk_len: usize, beta: f64, d: usize) -> Self {
        Self::new(MixerKind::Ovq(OvqConfig::new(n_max, chunk_len, beta)), beta, d)
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            MixerKind::FullAttention => "full_attention",
            MixerKind::VqFixed { .. } => "vq_fixed",
            MixerKind::Ovq(_) => "ovq",
            MixerKind::LinearBaseline => "linear_baseline",
        }
    }

    /// Dictionary size for the quantized mixers.
    pub fn n_max(&self) -> Option<usize> {
        match &self.kind {
            MixerKind::VqFixed { n, .. } => Some(*n),
            MixerKind::Ovq(c) => Some(c.n_max),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(OvqError::Config("dimension must be at least 1".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(OvqError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        match &self.kind {
            MixerKind::VqFixed { n: 0, .. } => {
                Err(OvqError::Config("fixed dictionary needs at least one centroid".into()))
            }
            MixerKind::Ovq(c) => c.validate(),
            _ => Ok(()),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Mixer>> {
        self.validate()?;
        Ok(match &self.kind {
            MixerKind::FullAttention => Box::new(FullAttention::new(self.beta, self.d)),
            MixerKind::VqFixed { n, source } => Box::new(VqFixed::new(*n, *source, self.beta, self.d, seed)),
            MixerKind::Ovq(c) => {
                let mut c = c.clone();
                c.beta = self.beta;
                Box::new(Ovq {
                    state: OvqState::new(c, self.d)?,
                })
            }
            MixerKind::LinearBaseline => Box::new(Linear {
                state: LinearAttentionState::new(self.d),
            }),
        })
    }
}

pub trait Mixer: Send {
    /// Causal outputs for the rows of a stream segment; the segment is
    /// absorbed into the state.
    fn forward(&mut self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix>;

    /// Absorb keys and values without producing outputs.
    fn absorb(&mut self, k: &Matrix, v: &Matrix) -> Result<()>;

    /// Read-only query of the current state.
    fn probe(&self, q: &[f64]) -> Vec<f64>;

    fn state_scalars(&self) -> u64;

    /// Continue from a saved engine state, where the mixer supports it.
    fn ovq_state(&self) -> Option<&OvqState> {
        None
    }
}

fn check(d: usize, k: &Matrix, v: &Matrix) -> Result<()> {
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(OvqError::Config(format!("segment shapes do not match dimension {d}")));
    }
    Ok(())
}

/// Exact causal softmax attention over a growing kv-cache.
pub struct FullAttention {
    beta: f64,
    keys: Matrix,
    values: Matrix,
}

impl FullAttention {
    pub fn new(beta: f64, d: usize) -> Self {
        Self {
            beta,
            keys: Matrix::with_cols(d),
            values: Matrix::with_cols(d),
        }
    }
}

impl Mixer for FullAttention {
    fn forward(&mut self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        check(self.keys.cols(), k, v)?;
        let mut out = Matrix::with_cols(self.keys.cols());
        for t in 0..k.rows() {
            self.keys.push_row(k.row(t))?;
            self.values.push_row(v.row(t))?;
            out.push_row(&self.probe(q.row(t)))?;
        }
        Ok(out)
    }

    fn absorb(&mut self, k: &Matrix, v: &Matrix) -> Result<()> {
        check(self.keys.cols(), k, v)?;
        for t in 0..k.rows() {
            self.keys.push_row(k.row(t))?;
            self.values.push_row(v.row(t))?;
        }
        Ok(())
    }

    fn probe(&self, q: &[f64]) -> Vec<f64> {
        let entries = self
            .keys
            .iter_rows()
            .zip(self.values.iter_rows())
            .map(|(k, v)| (self.beta * dot(q, k), v));
        softmax_readout(entries, self.keys.cols()).0
    }

    fn state_scalars(&self) -> u64 {
        (self.keys.rows() * 2 * self.keys.cols()) as u64
    }
}

/// VQ attention over a dictionary fixed before the stream starts.
pub struct VqFixed {
    n: usize,
    source: DictSource,
    beta: f64,
    d: usize,
    seed: u64,
    stream: Option<VqStream>,
}

impl VqFixed {
    fn new(n: usize, source: DictSource, beta: f64, d: usize, seed: u64) -> Self {
        Self {
            n,
            source,
            beta,
            d,
            seed,
            stream: None,
        }
    }

    fn ensure_dictionary(&mut self, k: &Matrix) -> Result<&mut VqStream> {
        if self.stream.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xD1C7_0000_0000_0001);
            let centroids = match self.source {
                DictSource::Random => Matrix::random_unit(&mut rng, self.n, self.d),
                // a short first batch seeds what it can; random unit rows fill the rest
                DictSource::KmeansppKeys if k.rows() < self.n => {
                    let mut c = self.kmeanspp(k, k.rows())?;
                    let extra = Matrix::random_unit(&mut rng, self.n - k.rows(), self.d);
                    for row in extra.iter_rows() {
                        c.push_row(row)?;
                    }
                    c
                }
                DictSource::KmeansppKeys => self.kmeanspp(k, self.n)?,
            };
            self.stream = Some(VqStream::new(centroids, self.beta)?);
        }
        Ok(self.stream.as_mut().expect("just initialized"))
    }

    /// k-means++ seeds over the keys, padded with a zero value half so
    /// distances are key distances.
    fn kmeanspp(&self, k: &Matrix, n: usize) -> Result<Matrix> {
        let mut c = Matrix::with_cols(self.d);
        if n == 0 {
            return Ok(c);
        }
        let mut joint = Matrix::with_cols(2 * self.d);
        for row in k.iter_rows() {
            let mut r = row.to_vec();
            r.resize(2 * self.d, 0.0);
            joint.push_row(&r)?;
        }
        let mix = init_means_kmeanspp(&joint, n, Precision::Infinite, self.seed)?;
        for i in 0..n {
            c.push_row(mix.key_mean(i))?;
        }
        Ok(c)
    }
}

impl Mixer for VqFixed {
    fn forward(&mut self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        check(self.d, k, v)?;
        let d = self.d;
        let stream = self.ensure_dictionary(k)?;
        let mut out = Matrix::with_cols(d);
        for t in 0..k.rows() {
            stream.push(k.row(t), v.row(t));
            out.push_row(&stream.readout(q.row(t)))?;
        }
        Ok(out)
    }

    fn absorb(&mut self, k: &Matrix, v: &Matrix) -> Result<()> {
        check(self.d, k, v)?;
        let stream = self.ensure_dictionary(k)?;
        for t in 0..k.rows() {
            stream.push(k.row(t), v.row(t));
        }
        Ok(())
    }

    fn probe(&self, q: &[f64]) -> Vec<f64> {
        match &self.stream {
            Some(s) => s.readout(q),
            None => vec![0.0; self.d],
        }
    }

    fn state_scalars(&self) -> u64 {
        (self.n * (2 * self.d + 1)) as u64
    }
}

/// The streaming OVQ layer.
pub struct Ovq {
    pub state: OvqState,
}

impl Ovq {
    pub fn from_state(state: OvqState) -> Self {
        Self { state }
    }

    fn chunks(&self, rows: usize) -> impl Iterator<Item = (usize, usize)> {
        let l = self.state.config().chunk_len;
        (0..rows).step_by(l).map(move |s| (s, (s + l).min(rows)))
    }
}

impl Mixer for Ovq {
    fn forward(&mut self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        check(self.state.dim(), k, v)?;
        let mut out = Matrix::with_cols(self.state.dim());
        let spans: Vec<_> = self.chunks(k.rows()).collect();
        for (s, e) in spans {
            let (o, _) = self
                .state
                .forward_chunk(&q.slice_rows(s, e), &k.slice_rows(s, e), &v.slice_rows(s, e))?;
            for r in o.iter_rows() {
                out.push_row(r)?;
            }
        }
        Ok(out)
    }

    fn absorb(&mut self, k: &Matrix, v: &Matrix) -> Result<()> {
        check(self.state.dim(), k, v)?;
        let spans: Vec<_> = self.chunks(k.rows()).collect();
        for (s, e) in spans {
            self.state.absorb_chunk(&k.slice_rows(s, e), &v.slice_rows(s, e))?;
        }
        Ok(())
    }

    fn probe(&self, q: &[f64]) -> Vec<f64> {
        if self.state.n_active() == 0 {
            return vec![0.0; self.state.dim()];
        }
        self.state.readout(q)
    }

    fn state_scalars(&self) -> u64 {
        self.state.live_scalars()
    }

    fn ovq_state(&self) -> Option<&OvqState> {
        Some(&self.state)
    }
}

/// Sum-state linear attention.
pub struct Linear {
    state: LinearAttentionState,
}

impl Mixer for Linear {
    fn forward(&mut self, q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
        check(q.cols(), k, v)?;
        let mut out = Matrix::with_cols(q.cols());
        for t in 0..k.rows() {
            self.state.push(k.row(t), v.row(t));
            out.push_row(&self.state.readout(q.row(t)))?;
        }
        Ok(out)
    }

    fn absorb(&mut self, k: &Matrix, v: &Matrix) -> Result<()> {
        for t in 0..k.rows() {
            self.state.push(k.row(t), v.row(t));
        }
        Ok(())
    }

    fn probe(&self, q: &[f64]) -> Vec<f64> {
        self.state.readout(q)
    }

    fn state_scalars(&self) -> u64 {
        self.state.state_scalars()
    }
}
