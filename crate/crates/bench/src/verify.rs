//! Randomized oracle-equivalence and invariant suite.
//!
//! Every check runs a batch of seeded instances and reports the largest
//! deviation it saw against its tolerance. Engine checks run with the
//! optional injected fault, so a broken engine shows up by name.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use ovq_core::attention::{
    softmax_attention, vq_attention_chunked, vq_attention_linear, vq_attention_quadratic, HeadSequence, VqStream,
};
use ovq_core::engine::{dictionary_target, Fault, OvqConfig, OvqState, UpdateRule};
use ovq_core::gmr::{
    e_step, em, gmr_predict, gmr_predict_expectation, hard_assignments, init_means_kmeanspp, kmeans_step, m_step,
    verify_gkr_attention, verify_newton_equivalence, GaussianMixture, Precision,
};
use ovq_core::matrix::{dot, fill_unit};
use ovq_core::{Matrix, Result};

pub const REPORT_SCHEMA: &str = "ovq-verify";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random instances per check.
    pub instances: usize,
    /// Longest sequence used by the attention-oracle checks.
    pub max_t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 8,
            max_t: 256,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub params: Value,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema: String,
    pub version: u32,
    pub options: VerifyOptions,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Check {
    name: &'static str,
    params: Value,
    tolerance: f64,
    instances: usize,
    max_deviation: f64,
}

impl Check {
    fn new(name: &'static str, tolerance: f64, params: Value) -> Self {
        Self {
            name,
            params,
            tolerance,
            instances: 0,
            max_deviation: 0.0,
        }
    }

    fn record(&mut self, dev: f64) {
        self.instances += 1;
        // NaN must fail the check
        if dev.is_nan() || dev > self.max_deviation {
            self.max_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            params: self.params,
            instances: self.instances,
            max_deviation: self.max_deviation,
            tolerance: self.tolerance,
            passed: self.instances > 0 && self.max_deviation <= self.tolerance,
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    fill_unit(rng, &mut v);
    v
}

const BETAS: [f64; 3] = [1.0, 8.0, 32.0];

pub fn verify_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let max_t = opts.max_t.max(8);
    let mut checks = vec![vq_forms(&mut rng, opts, max_t)?, vq_chunked(&mut rng, opts, max_t)?];
    checks.extend(gmr_bridge(&mut rng, opts)?);
    checks.push(gkr(&mut rng, opts, max_t)?);
    checks.push(hard_em(&mut rng, opts)?);
    checks.push(em_monotone(&mut rng, opts)?);
    checks.push(newton(&mut rng, opts)?);
    checks.push(running_mean(&mut rng, opts)?);
    checks.extend(engine_invariants(&mut rng, opts)?);
    checks.push(ovq_prediction(&mut rng, opts)?);
    checks.push(first_chunk(&mut rng, opts)?);
    checks.push(prefix_causality(&mut rng, opts)?);

    let checks: Vec<CheckResult> = checks.into_iter().map(Check::finish).collect();
    Ok(VerifyReport {
        schema: REPORT_SCHEMA.to_string(),
        version: REPORT_VERSION,
        options: opts.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn vq_forms(rng: &mut ChaCha8Rng, opts: &VerifyOptions, max_t: usize) -> Result<Check> {
    let mut c = Check::new(
        "vq_linear_vs_quadratic",
        1e-10,
        json!({"t": [1, max_t], "n": [1, 64], "d": [1, 32], "beta": BETAS}),
    );
    for _ in 0..opts.instances {
        let t = rng.random_range(1..=max_t);
        let d = rng.random_range(1..=32);
        let n = rng.random_range(1..=64);
        let beta = BETAS[rng.random_range(0..3)];
        let seq = HeadSequence::random(rng, t, d, beta);
        let dict = Matrix::random_unit(rng, n, d);
        let quad = vq_attention_quadratic(&seq, &dict)?;
        let lin = vq_attention_linear(&seq, &dict)?;
        c.record(quad.o.max_abs_diff(&lin.o));
    }
    Ok(c)
}

fn vq_chunked(rng: &mut ChaCha8Rng, opts: &VerifyOptions, max_t: usize) -> Result<Check> {
    let mut c = Check::new(
        "vq_chunked_vs_quadratic",
        1e-10,
        json!({"t": [1, max_t], "chunk_len": [1, 7, 128, "T"], "n": [1, 64], "d": [1, 32]}),
    );
    for _ in 0..opts.instances {
        let t = rng.random_range(1..=max_t);
        let d = rng.random_range(1..=32);
        let n = rng.random_range(1..=64);
        let beta = BETAS[rng.random_range(0..3)];
        let seq = HeadSequence::random(rng, t, d, beta);
        let dict = Matrix::random_unit(rng, n, d);
        let quad = vq_attention_quadratic(&seq, &dict)?;
        for l in [1, 7, 128, t] {
            let ch = vq_attention_chunked(&seq, &dict, l)?;
            c.record(quad.o.max_abs_diff(&ch.o));
        }
    }
    Ok(c)
}

fn gmr_bridge(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let params = json!({"t": [1, 256], "n": [1, 64], "d": [1, 32], "beta": BETAS});
    let mut forms = Check::new("gmr_softmax_vs_expectation", 1e-10, params.clone());
    let mut bridge = Check::new("gmr_vs_vq_linear_readout", 1e-10, params);
    for _ in 0..opts.instances {
        let t = rng.random_range(1..=256);
        let d = rng.random_range(1..=32);
        let n = rng.random_range(1..=64);
        let beta = BETAS[rng.random_range(0..3)];
        let seq = HeadSequence::random(rng, t, d, beta);
        let mut stream = VqStream::new(Matrix::random_unit(rng, n, d), beta)?;
        for i in 0..t {
            stream.push(seq.k.row(i), seq.v.row(i));
        }
        let dict = stream.dictionary();
        let mix = GaussianMixture::from_dictionary(
            &Matrix::from_rows(&dict.means_k)?,
            &Matrix::from_rows(&dict.means_v)?,
            &dict.counts,
            Precision::Finite(beta),
        )?;
        let q = random_unit_vec(rng, d);
        let soft = gmr_predict(&mix, &dict.counts, &q, beta)?;
        let expect = gmr_predict_expectation(&mix, &dict.counts, &q, beta)?;
        forms.record(max_diff(&soft, &expect));
        bridge.record(max_diff(&soft, &stream.readout(&q)));
    }
    Ok(vec![forms, bridge])
}

fn gkr(rng: &mut ChaCha8Rng, opts: &VerifyOptions, max_t: usize) -> Result<Check> {
    let mut c = Check::new(
        "gkr_vs_softmax_attention",
        1e-10,
        json!({"t": [1, max_t], "d": [1, 32], "beta": BETAS}),
    );
    for _ in 0..opts.instances {
        let t = rng.random_range(1..=max_t);
        let d = rng.random_range(1..=32);
        let beta = BETAS[rng.random_range(0..3)];
        c.record(verify_gkr_attention(&HeadSequence::random(rng, t, d, beta))?.max_deviation);
    }
    Ok(c)
}

fn hard_em(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "hard_em_vs_kmeans",
        0.0,
        json!({"t": [8, 200], "n": [1, 8], "d": [1, 8], "comparison": "bitwise"}),
    );
    for _ in 0..opts.instances {
        let t = rng.random_range(8..=200);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=8);
        let data = Matrix::random_gaussian(rng, t, 2 * d);
        let mix = init_means_kmeanspp(&data, n, Precision::Infinite, rng.random())?;
        let z = e_step(&mix, &data)?;
        let assignments = hard_assignments(&mix, &data)?;
        let (em_means, km_means) = match (
            m_step(&data, &z, Precision::Infinite),
            kmeans_step(&data, &assignments, n),
        ) {
            (Ok(a), Ok(b)) => (a.means_joint().clone(), b),
            // an empty cluster fails both ways; nothing to compare
            (Err(_), Err(_)) => continue,
            _ => {
                c.record(f64::INFINITY);
                continue;
            }
        };
        let same_bits = em_means
            .as_slice()
            .iter()
            .zip(km_means.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        c.record(if same_bits {
            0.0
        } else {
            em_means.max_abs_diff(&km_means).max(f64::MIN_POSITIVE)
        });
    }
    Ok(c)
}

/// Two Gaussian clusters `separation` standard deviations apart.
pub fn two_cluster_data(rng: &mut ChaCha8Rng, t: usize, dim: usize, beta: f64, separation: f64) -> Matrix {
    let sigma = 1.0 / beta.sqrt();
    let mut data = Matrix::random_gaussian(rng, t, dim);
    let dir = random_unit_vec(rng, dim);
    for i in 0..t {
        let side = if i % 2 == 0 { 0.5 } else { -0.5 };
        for (x, u) in data.row_mut(i).iter_mut().zip(&dir) {
            *x = *x * sigma + side * separation * sigma * u;
        }
    }
    data
}

fn em_monotone(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "em_nll_nonincreasing",
        1e-9,
        json!({"t": 200, "dim": 4, "components": 2, "separation_sigma": 4, "iterations": 20}),
    );
    for _ in 0..opts.instances {
        let beta = 1.0;
        let data = two_cluster_data(rng, 200, 4, beta, 4.0);
        let init = init_means_kmeanspp(&data, 2, Precision::Finite(beta), rng.random())?;
        let (_, trace) = em(&init, &data, 20)?;
        let worst = trace.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        c.record(worst);
    }
    Ok(c)
}

fn newton(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "newton_step_is_cluster_mean",
        1e-12,
        json!({"t": 100, "n": 8, "dim": 6}),
    );
    for _ in 0..opts.instances {
        let data = Matrix::random_gaussian(rng, 100, 6);
        let assignments: Vec<usize> = (0..100).map(|_| rng.random_range(0..8)).collect();
        let start = Matrix::random_gaussian(rng, 8, 6);
        c.record(verify_newton_equivalence(&data, &assignments, &start)?.max_deviation);
    }
    Ok(c)
}

fn with_fault(mut cfg: OvqConfig, opts: &VerifyOptions) -> OvqConfig {
    cfg.fault = opts.fault;
    cfg
}

fn running_mean(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "online_running_mean",
        1e-12,
        json!({"points": [2, 64], "d": [1, 16], "update_rules": ["mini_batch", "sequential"]}),
    );
    for _ in 0..opts.instances {
        let m = rng.random_range(2..=64);
        let d = rng.random_range(1..=16);
        let k = Matrix::random_unit(rng, m, d);
        let v = Matrix::random_gaussian(rng, m, d);
        for rule in [UpdateRule::MiniBatch, UpdateRule::Sequential] {
            let cfg = with_fault(OvqConfig::new(1, 1, 8.0).with_update_rule(rule), opts);
            let mut state = OvqState::<f64>::new(cfg, d)?;
            for i in 0..m {
                state.absorb_chunk(&k.slice_rows(i, i + 1), &v.slice_rows(i, i + 1))?;
            }
            let mut dev: f64 = 0.0;
            for j in 0..d {
                let mk = (0..m).map(|i| k.row(i)[j]).sum::<f64>() / m as f64;
                let mv = (0..m).map(|i| v.row(i)[j]).sum::<f64>() / m as f64;
                dev = dev
                    .max((state.means_k().row(0)[j] - mk).abs())
                    .max((state.means_v().row(0)[j] - mv).abs());
            }
            c.record(dev);
        }
    }
    Ok(c)
}

struct EngineCase {
    cfg: OvqConfig,
    seq: HeadSequence,
}

fn engine_case(rng: &mut ChaCha8Rng, opts: &VerifyOptions, max_t: usize) -> EngineCase {
    let t = rng.random_range(1..=max_t);
    let d = rng.random_range(2..=16);
    let l = [1, 7, 16, 64][rng.random_range(0..4)];
    let n_max = rng.random_range(1..=128);
    let beta = BETAS[rng.random_range(0..3)];
    EngineCase {
        cfg: with_fault(OvqConfig::new(n_max, l, beta), opts),
        seq: HeadSequence::random(rng, t, d, beta),
    }
}

fn chunk_spans(t: usize, l: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..t).step_by(l).map(move |s| (s, (s + l).min(t)))
}

fn engine_invariants(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let params = json!({"t": [1, 1024], "chunk_len": [1, 7, 16, 64], "n_max": [1, 128], "d": [2, 16]});
    let mut counts = Check::new("count_conservation", 0.0, params.clone());
    let mut growth = Check::new("growth_exactness", 0.0, params.clone());
    let mut bound = Check::new("memory_bound", 0.0, params.clone());
    let mut sparse = Check::new("sparse_update", 0.0, params.clone());
    let mut simplex = Check::new("prediction_simplex", 1e-9, params);
    for _ in 0..opts.instances {
        let EngineCase { cfg, seq } = engine_case(rng, opts, 1024);
        let d = seq.dim();
        let mut state = OvqState::<f64>::new(cfg.clone(), d)?;
        let (mut c_dev, mut g_dev, mut b_dev, mut s_dev, mut w_dev) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (s, e) in chunk_spans(seq.len(), cfg.chunk_len) {
            let (q, k, v) = (seq.q.slice_rows(s, e), seq.k.slice_rows(s, e), seq.v.slice_rows(s, e));
            for i in 0..q.rows() {
                let w = state.prediction_weights(q.row(i), i, &k);
                let neg = w.iter().any(|&x| x < 0.0);
                let sum: f64 = w.iter().sum();
                w_dev = w_dev.max(if neg { f64::INFINITY } else { (sum - 1.0).abs() });
            }
            let before = state.clone();
            let (_, rec) = state.forward_chunk(&q, &k, &v)?;
            for n in 0..before.n_active() {
                if !rec.assignments.contains(&n)
                    && (state.means_k().row(n) != before.means_k().row(n)
                        || state.means_v().row(n) != before.means_v().row(n)
                        || state.counts()[n] != before.counts()[n])
                {
                    s_dev += 1.0;
                }
            }
            let total: u64 = state.counts().iter().sum();
            c_dev = c_dev.max(total.abs_diff(state.tokens_seen()) as f64);
            let target = dictionary_target(state.tokens_seen(), cfg.n_max as u64);
            g_dev = g_dev.max((state.n_active() as u64).abs_diff(target) as f64);
            let cap = (cfg.n_max * (2 * d + 1) + cfg.chunk_len * 3 * d) as u64;
            let live = state.live_scalars() + (q.rows() * 3 * d) as u64;
            b_dev = b_dev.max(live.saturating_sub(cap) as f64);
        }
        counts.record(c_dev);
        growth.record(g_dev);
        bound.record(b_dev);
        sparse.record(s_dev);
        simplex.record(w_dev);
    }
    Ok(vec![counts, growth, bound, sparse, simplex])
}

/// Chunk prediction computed directly from a state snapshot: dictionary
/// columns always visible, chunk column `j` visible to row `i` iff `j <= i`.
fn reference_chunk(state: &OvqState, q: &Matrix, k: &Matrix, v: &Matrix) -> Vec<Vec<f64>> {
    let beta = state.config().beta;
    let d = q.cols();
    (0..q.rows())
        .map(|i| {
            let mut logits = Vec::new();
            let mut rows: Vec<&[f64]> = Vec::new();
            for n in 0..state.n_active() {
                logits.push(beta * dot(q.row(i), state.means_k().row(n)) + (state.counts()[n] as f64).ln());
                rows.push(state.means_v().row(n));
            }
            for j in 0..=i {
                logits.push(beta * dot(q.row(i), k.row(j)));
                rows.push(v.row(j));
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = w.iter().sum();
            let mut out = vec![0.0; d];
            for (wi, r) in w.iter().zip(rows) {
                for (o, x) in out.iter_mut().zip(r) {
                    *o += wi / z * x;
                }
            }
            out
        })
        .collect()
}

fn ovq_prediction(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "ovq_chunk_prediction",
        1e-12,
        json!({"t": [1, 1024], "chunk_len": [1, 7, 16, 64], "n_max": [1, 128], "d": [2, 16]}),
    );
    for _ in 0..opts.instances {
        let EngineCase { cfg, seq } = engine_case(rng, opts, 1024);
        let mut state = OvqState::<f64>::new(cfg.clone(), seq.dim())?;
        let mut dev: f64 = 0.0;
        for (s, e) in chunk_spans(seq.len(), cfg.chunk_len) {
            let (q, k, v) = (seq.q.slice_rows(s, e), seq.k.slice_rows(s, e), seq.v.slice_rows(s, e));
            let expect = reference_chunk(&state, &q, &k, &v);
            let (out, _) = state.forward_chunk(&q, &k, &v)?;
            for (i, row) in expect.iter().enumerate() {
                dev = dev.max(max_diff(out.row(i), row));
            }
        }
        c.record(dev);
    }
    Ok(c)
}

fn first_chunk(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "single_chunk_is_softmax_attention",
        1e-12,
        json!({"t": [1, 128], "d": [2, 16], "chunk_len": "T"}),
    );
    for _ in 0..opts.instances {
        let t = rng.random_range(1..=128);
        let d = rng.random_range(2..=16);
        let beta = BETAS[rng.random_range(0..3)];
        let seq = HeadSequence::random(rng, t, d, beta);
        let cfg = with_fault(OvqConfig::new(64, t, beta), opts);
        let mut state = OvqState::<f64>::new(cfg, d)?;
        let (out, _) = state.forward_chunk(&seq.q, &seq.k, &seq.v)?;
        c.record(out.max_abs_diff(&softmax_attention(&seq)?.o));
    }
    Ok(c)
}

fn prefix_causality(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<Check> {
    let mut c = Check::new(
        "prefix_causality",
        0.0,
        json!({"t": [2, 512], "chunk_len": [1, 7, 16, 64], "comparison": "bitwise"}),
    );
    for _ in 0..opts.instances {
        let EngineCase { cfg, seq } = engine_case(rng, opts, 512);
        if seq.len() < 2 {
            continue;
        }
        let cut = sample(rng, seq.len() - 1, 1).index(0) + 1;
        let run = |s: &HeadSequence| ovq_core::engine::forward_sequence(&cfg, &s.q, &s.k, &s.v);
        let full = run(&seq)?;
        let prefix = run(&seq.prefix(cut))?;
        let dev = prefix.output.max_abs_diff(&full.output.slice_rows(0, cut));
        c.record(dev);
    }
    Ok(c)
}
