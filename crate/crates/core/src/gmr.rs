//! Batch Gaussian-mixture oracle over joint `[key, value]` points.
//!
//! Components share the isotropic covariance `I / beta`. With
//! `Precision::Infinite` the E-step degenerates to nearest-mean assignment
//! and EM becomes batch k-means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::HeadSequence;
use crate::error::{OvqError, Result};
use crate::matrix::{axpy, dot, norm, sq_dist, Matrix};

const PRIOR_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    Finite(f64),
    /// Hard assignments (beta = infinity).
    Infinite,
}

impl Precision {
    fn validate(self) -> Result<()> {
        match self {
            Precision::Finite(b) if !(b.is_finite() && b > 0.0) => Err(OvqError::config(format!(
                "precision must be finite and positive, got {b}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means_joint: Matrix,
    priors: Vec<f64>,
    precision: Precision,
}

impl GaussianMixture {
    pub fn new(means_joint: Matrix, priors: Vec<f64>, precision: Precision) -> Result<Self> {
        precision.validate()?;
        let n = means_joint.rows();
        if n == 0 || means_joint.cols() == 0 || means_joint.cols() % 2 != 0 {
            return Err(OvqError::config(
                "mixture needs at least one component and an even joint dimension",
            ));
        }
        if priors.len() != n {
            return Err(OvqError::config(format!("{} priors for {n} components", priors.len())));
        }
        let sum: f64 = priors.iter().sum();
        if priors.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(OvqError::config(format!(
                "priors must be nonnegative and sum to 1, got sum {sum}"
            )));
        }
        Ok(Self {
            means_joint,
            priors,
            precision,
        })
    }

    /// Mixture whose priors are proportional to `counts`.
    pub fn from_dictionary(means_k: &Matrix, means_v: &Matrix, counts: &[f64], precision: Precision) -> Result<Self> {
        if means_k.rows() != means_v.rows() || means_k.cols() != means_v.cols() {
            return Err(OvqError::config("key and value dictionaries differ in shape"));
        }
        let mut joint = Matrix::with_cols(2 * means_k.cols());
        for (k, v) in means_k.iter_rows().zip(means_v.iter_rows()) {
            let row: Vec<f64> = k.iter().chain(v).copied().collect();
            joint.push_row(&row)?;
        }
        let total: f64 = counts.iter().sum();
        let priors = counts.iter().map(|c| c / total).collect();
        Self::new(joint, priors, precision)
    }

    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    /// Half of the joint dimension.
    pub fn dim(&self) -> usize {
        self.means_joint.cols() / 2
    }

    pub fn means_joint(&self) -> &Matrix {
        &self.means_joint
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn key_mean(&self, n: usize) -> &[f64] {
        &self.means_joint.row(n)[..self.dim()]
    }

    pub fn value_mean(&self, n: usize) -> &[f64] {
        &self.means_joint.row(n)[self.dim()..]
    }

    fn check_data(&self, data: &Matrix) -> Result<()> {
        if data.cols() != self.means_joint.cols() {
            return Err(OvqError::config(format!(
                "data has {} columns, mixture expects {}",
                data.cols(),
                self.means_joint.cols()
            )));
        }
        Ok(())
    }
}

/// Row-stochastic `T x N` posterior matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub z: Matrix,
}

impl Responsibilities {
    pub fn one_hot(assignments: &[usize], n: usize) -> Result<Self> {
        let mut z = Matrix::zeros(assignments.len(), n);
        for (t, &a) in assignments.iter().enumerate() {
            if a >= n {
                return Err(OvqError::config(format!(
                    "assignment {a} out of range for {n} components"
                )));
            }
            z.row_mut(t)[a] = 1.0;
        }
        Ok(Self { z })
    }
}

/// Index of the nearest mean, lowest index on ties.
fn nearest(means: &Matrix, x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (n, mu) in means.iter_rows().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (n, d);
        }
    }
    best.0
}

/// Nearest-mean assignment of every data row.
pub fn hard_assignments(mix: &GaussianMixture, data: &Matrix) -> Result<Vec<usize>> {
    mix.check_data(data)?;
    Ok(data.iter_rows().map(|x| nearest(&mix.means_joint, x)).collect())
}

pub fn e_step(mix: &GaussianMixture, data: &Matrix) -> Result<Responsibilities> {
    mix.check_data(data)?;
    let beta = match mix.precision {
        Precision::Infinite => return Responsibilities::one_hot(&hard_assignments(mix, data)?, mix.n_components()),
        Precision::Finite(b) => b,
    };
    let n = mix.n_components();
    let mut z = Matrix::zeros(data.rows(), n);
    for (t, x) in data.iter_rows().enumerate() {
        let logits: Vec<f64> = (0..n)
            .map(|j| mix.priors[j].ln() - 0.5 * beta * sq_dist(x, mix.means_joint.row(j)))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = z.row_mut(t);
        for (r, l) in row.iter_mut().zip(&logits) {
            *r = (l - max).exp();
        }
        let s: f64 = row.iter().sum();
        for r in row.iter_mut() {
            *r /= s;
        }
    }
    Ok(Responsibilities { z })
}

pub fn m_step(data: &Matrix, resp: &Responsibilities, precision: Precision) -> Result<GaussianMixture> {
    let z = &resp.z;
    if z.rows() != data.rows() {
        return Err(OvqError::config("responsibilities and data differ in length"));
    }
    let n = z.cols();
    let dim = data.cols();
    let mut gamma = vec![0.0; n];
    let mut sums = Matrix::zeros(n, dim);
    for (t, x) in data.iter_rows().enumerate() {
        for j in 0..n {
            let w = z.row(t)[j];
            gamma[j] += w;
            axpy(sums.row_mut(j), w, x);
        }
    }
    let empty: Vec<usize> = (0..n).filter(|&j| gamma[j] == 0.0).collect();
    if !empty.is_empty() {
        return Err(OvqError::DegenerateComponents(empty));
    }
    for j in 0..n {
        for s in sums.row_mut(j) {
            *s /= gamma[j];
        }
    }
    let total: f64 = gamma.iter().sum();
    let priors = gamma.iter().map(|g| g / total).collect();
    GaussianMixture::new(sums, priors, precision)
}

/// Batch k-means update: every mean becomes the mean of its assigned points.
pub fn kmeans_step(data: &Matrix, assignments: &[usize], n: usize) -> Result<Matrix> {
    let mut sums = Matrix::zeros(n, data.cols());
    let mut counts = vec![0usize; n];
    for (x, &a) in data.iter_rows().zip(assignments) {
        if a >= n {
            return Err(OvqError::config(format!("assignment {a} out of range")));
        }
        counts[a] += 1;
        for (s, &xi) in sums.row_mut(a).iter_mut().zip(x) {
            *s += xi;
        }
    }
    let empty: Vec<usize> = (0..n).filter(|&j| counts[j] == 0).collect();
    if !empty.is_empty() {
        return Err(OvqError::DegenerateComponents(empty));
    }
    for j in 0..n {
        let c = counts[j] as f64;
        for s in sums.row_mut(j) {
            *s /= c;
        }
    }
    Ok(sums)
}

/// Negative log-likelihood including the Gaussian normalizer
/// `(D / 2) ln(beta / 2 pi)` per point, `D` the joint dimension.
pub fn nll(mix: &GaussianMixture, data: &Matrix) -> Result<f64> {
    mix.check_data(data)?;
    let beta = match mix.precision {
        Precision::Finite(b) => b,
        Precision::Infinite => return Err(OvqError::config("likelihood is undefined at infinite precision")),
    };
    let log_norm = 0.5 * data.cols() as f64 * (beta / (2.0 * std::f64::consts::PI)).ln();
    let mut total = 0.0;
    for x in data.iter_rows() {
        let terms: Vec<f64> = (0..mix.n_components())
            .map(|j| mix.priors[j].ln() + log_norm - 0.5 * beta * sq_dist(x, mix.means_joint.row(j)))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total -= lse;
    }
    Ok(total)
}

/// Run `iters` EM iterations, returning the final mixture and the NLL before
/// the first and after every iteration.
pub fn em(mix: &GaussianMixture, data: &Matrix, iters: usize) -> Result<(GaussianMixture, Vec<f64>)> {
    let mut cur = mix.clone();
    let mut trace = vec![nll(&cur, data)?];
    for _ in 0..iters {
        let z = e_step(&cur, data)?;
        cur = m_step(data, &z, cur.precision)?;
        trace.push(nll(&cur, data)?);
    }
    Ok((cur, trace))
}

/// k-means++ seeding: a uniform first pick, then D^2 sampling among the
/// remaining points. Priors are uniform.
pub fn init_means_kmeanspp(data: &Matrix, n: usize, precision: Precision, seed: u64) -> Result<GaussianMixture> {
    let t = data.rows();
    if n == 0 || t < n {
        return Err(OvqError::config(format!("cannot seed {n} components from {t} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..t)];
    let mut taken = vec![false; t];
    taken[chosen[0]] = true;
    let mut d2: Vec<f64> = data.iter_rows().map(|x| sq_dist(x, data.row(chosen[0]))).collect();
    while chosen.len() < n {
        let total: f64 = (0..t).filter(|&i| !taken[i]).map(|i| d2[i]).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..t).filter(|&i| !taken[i]) {
                if d2[i] > 0.0 {
                    pick = Some(i);
                    u -= d2[i];
                    if u < 0.0 {
                        break;
                    }
                }
            }
            pick.expect("positive mass implies a candidate")
        } else {
            // every remaining point duplicates a chosen one
            let rest: Vec<usize> = (0..t).filter(|&i| !taken[i]).collect();
            rest[rng.random_range(0..rest.len())]
        };
        taken[pick] = true;
        chosen.push(pick);
        for (i, x) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, data.row(pick)));
        }
    }
    let mut means = Matrix::with_cols(data.cols());
    for &i in &chosen {
        means.push_row(data.row(i))?;
    }
    GaussianMixture::new(means, vec![1.0 / n as f64; n], precision)
}

/// GMR prediction `E[v | k = q]` in softmax form:
/// `softmax(beta q D_k^T + log c) D_v`.
pub fn gmr_predict(mix: &GaussianMixture, counts: &[f64], query: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_predict(mix, counts, query)?;
    let logits: Vec<f64> = (0..mix.n_components())
        .map(|n| beta * dot(query, mix.key_mean(n)) + counts[n].ln())
        .collect();
    let out = weighted_values(mix, &logits);
    if cfg!(debug_assertions) && is_unit(query) && (0..mix.n_components()).all(|n| is_unit(mix.key_mean(n))) {
        let alt = gmr_predict_expectation(mix, counts, query, beta)?;
        let dev = out.iter().zip(&alt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        debug_assert!(dev <= 1e-10, "GMR forms disagree by {dev}");
    }
    Ok(out)
}

/// GMR prediction as a mixture expectation:
/// `sum_n pi_n exp(-(beta/2) |q - mu_k|^2) mu_v / Z` with `pi` proportional
/// to the counts. Agrees with [`gmr_predict`] when queries and key means are
/// unit-norm.
pub fn gmr_predict_expectation(mix: &GaussianMixture, counts: &[f64], query: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_predict(mix, counts, query)?;
    let total: f64 = counts.iter().sum();
    let logits: Vec<f64> = (0..mix.n_components())
        .map(|n| (counts[n] / total).ln() - 0.5 * beta * sq_dist(query, mix.key_mean(n)))
        .collect();
    Ok(weighted_values(mix, &logits))
}

fn check_predict(mix: &GaussianMixture, counts: &[f64], query: &[f64]) -> Result<()> {
    if counts.len() != mix.n_components() || query.len() != mix.dim() {
        return Err(OvqError::config("counts or query do not match the mixture"));
    }
    if counts.iter().any(|&c| c.is_nan() || c <= 0.0) {
        return Err(OvqError::config("counts must be positive"));
    }
    Ok(())
}

fn is_unit(x: &[f64]) -> bool {
    (norm(x) - 1.0).abs() <= 1e-6
}

fn weighted_values(mix: &GaussianMixture, logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = vec![0.0; mix.dim()];
    for (n, wn) in w.iter().enumerate() {
        axpy(&mut out, wn / z, mix.value_mean(n));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    /// Largest gap between the Newton step and the cluster mean.
    pub max_deviation: f64,
    pub clusters_checked: usize,
    /// Clusters with no points; they have no Newton step.
    pub skipped: Vec<usize>,
}

/// Compare one Newton step on the fixed-assignment k-means loss against the
/// batch k-means update.
///
/// For cluster `n` the loss is `sum |x_t - mu|^2`, with gradient
/// `2 sum (mu - x_t)` and Hessian `2 gamma_n I`, so the step from `start`
/// should land on the cluster mean.
pub fn verify_newton_equivalence(data: &Matrix, assignments: &[usize], start: &Matrix) -> Result<NewtonReport> {
    if assignments.len() != data.rows() || start.cols() != data.cols() {
        return Err(OvqError::config("assignments or starting means do not match the data"));
    }
    let n = start.rows();
    let mut skipped = Vec::new();
    let mut max_deviation: f64 = 0.0;
    let mut checked = 0;
    for j in 0..n {
        let members: Vec<&[f64]> = data
            .iter_rows()
            .zip(assignments)
            .filter(|(_, &a)| a == j)
            .map(|(x, _)| x)
            .collect();
        if members.is_empty() {
            skipped.push(j);
            continue;
        }
        checked += 1;
        let mu0 = start.row(j);
        let gamma = members.len() as f64;
        for i in 0..data.cols() {
            let grad: f64 = members.iter().map(|x| 2.0 * (mu0[i] - x[i])).sum();
            let newton = mu0[i] - grad / (2.0 * gamma);
            let mean = members.iter().map(|x| x[i]).sum::<f64>() / gamma;
            max_deviation = max_deviation.max((newton - mean).abs());
        }
    }
    Ok(NewtonReport {
        max_deviation,
        clusters_checked: checked,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GkrReport {
    pub max_deviation: f64,
}

/// Gaussian kernel regression with bandwidth `1 / beta`, evaluated causally
/// at every position, against softmax attention.
pub fn verify_gkr_attention(seq: &HeadSequence) -> Result<GkrReport> {
    let att = crate::attention::softmax_attention(seq)?;
    let d = seq.dim();
    let mut max_deviation: f64 = 0.0;
    for t in 0..seq.len() {
        let q = seq.q.row(t);
        let logits: Vec<f64> = (0..=t).map(|i| -0.5 * seq.beta * sq_dist(q, seq.k.row(i))).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut out = vec![0.0; d];
        for (i, wi) in w.iter().enumerate() {
            axpy(&mut out, wi / z, seq.v.row(i));
        }
        for (a, b) in out.iter().zip(att.o.row(t)) {
            max_deviation = max_deviation.max((a - b).abs());
        }
    }
    Ok(GkrReport { max_deviation })
}
