//! Plain scalar-loop reference implementations used as test oracles.
//!
//! Nothing here calls into the library except to read matrices; every
//! quantity is recomputed from its definition with nested loops over
//! `Vec<Vec<f64>>`.

#![allow(dead_code, clippy::needless_range_loop)]

use ovq_core::Matrix;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn max_dev(a: &[Vec<f64>], b: &Matrix) -> f64 {
    assert_eq!(a.len(), b.rows());
    let mut dev: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        for (x, y) in r.iter().zip(b.row(i)) {
            dev = dev.max((x - y).abs());
        }
    }
    dev
}

pub fn vec_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ip(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn sqd(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Normalized-exponential average of `values` under `logits`.
pub fn weighted(logits: &[f64], values: &[&[f64]], d: usize) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if l > max {
            max = l;
        }
    }
    let mut z = 0.0;
    let mut out = vec![0.0; d];
    for (l, v) in logits.iter().zip(values) {
        let w = (l - max).exp();
        z += w;
        for j in 0..d {
            out[j] += w * v[j];
        }
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    out
}

/// `o_t = sum_{s<=t} exp(beta q_t.k_s) v_s / Z_t`.
pub fn softmax_attention(q: &Rows, k: &Rows, v: &Rows, beta: f64) -> Rows {
    let d = v[0].len();
    (0..q.len())
        .map(|t| {
            let logits: Vec<f64> = (0..=t).map(|s| beta * ip(&q[t], &k[s])).collect();
            let vals: Vec<&[f64]> = (0..=t).map(|s| v[s].as_slice()).collect();
            weighted(&logits, &vals, d)
        })
        .collect()
}

/// Kernel regression with weights `exp(-(beta/2)|q_t - k_s|^2)`.
pub fn gaussian_kernel_regression(q: &Rows, k: &Rows, v: &Rows, beta: f64) -> Rows {
    let d = v[0].len();
    (0..q.len())
        .map(|t| {
            let logits: Vec<f64> = (0..=t).map(|s| -0.5 * beta * sqd(&q[t], &k[s])).collect();
            let vals: Vec<&[f64]> = (0..=t).map(|s| v[s].as_slice()).collect();
            weighted(&logits, &vals, d)
        })
        .collect()
}

/// Index of the highest-dot centroid, first one on ties.
pub fn nearest(x: &[f64], centroids: &Rows) -> usize {
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for (n, c) in centroids.iter().enumerate() {
        let s = ip(x, c);
        if s > best_s {
            best_s = s;
            best = n;
        }
    }
    best
}

/// Softmax attention over keys replaced by their nearest centroid.
pub fn vq_attention(q: &Rows, k: &Rows, v: &Rows, centroids: &Rows, beta: f64) -> Rows {
    let kq: Rows = k.iter().map(|x| centroids[nearest(x, centroids)].clone()).collect();
    softmax_attention(q, &kq, v, beta)
}

/// `floor(t n / (t + n))` as the largest `g` with `g (t + n) <= t n`.
pub fn growth(t: u64, n: u64) -> u64 {
    if t == 0 {
        return 0;
    }
    let (t, n) = (t as u128, n as u128);
    let mut lo = 0u128;
    let mut hi = n;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if mid * (t + n) <= t * n {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo as u64
}

/// Batch k-means mean step.
pub fn kmeans_means(data: &Rows, assign: &[usize], n: usize) -> Rows {
    let d = data[0].len();
    let mut sums = vec![vec![0.0; d]; n];
    let mut cnt = vec![0usize; n];
    for (x, &a) in data.iter().zip(assign) {
        cnt[a] += 1;
        for j in 0..d {
            sums[a][j] += x[j];
        }
    }
    for a in 0..n {
        for j in 0..d {
            sums[a][j] /= cnt[a] as f64;
        }
    }
    sums
}

/// Reference OVQ layer with the default schedule, key-dot similarity and
/// mini-batch merges. Chunk row `i` sees the dictionary (logit bias
/// `log count`) plus raw chunk tokens `0..=i`; afterwards the chunk is
/// folded in.
pub struct RefOvq {
    pub n_max: usize,
    pub chunk_len: usize,
    pub beta: f64,
    pub keys: Rows,
    pub values: Rows,
    pub counts: Vec<u64>,
    pub seen: u64,
}

impl RefOvq {
    pub fn new(n_max: usize, chunk_len: usize, beta: f64) -> Self {
        Self {
            n_max,
            chunk_len,
            beta,
            keys: Vec::new(),
            values: Vec::new(),
            counts: Vec::new(),
            seen: 0,
        }
    }

    pub fn run(&mut self, q: &Rows, k: &Rows, v: &Rows) -> Rows {
        let mut out = Vec::new();
        let mut s = 0;
        while s < q.len() {
            let e = (s + self.chunk_len).min(q.len());
            out.extend(self.chunk(&q[s..e], &k[s..e], &v[s..e]));
            s = e;
        }
        out
    }

    fn target(&self, t: u64) -> usize {
        if t == 0 {
            0
        } else {
            growth(t, self.n_max as u64).max(1) as usize
        }
    }

    pub fn chunk(&mut self, q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Rows {
        let l = q.len();
        let d = v[0].len();
        let mut out = Vec::with_capacity(l);
        for i in 0..l {
            let mut logits = Vec::new();
            let mut vals: Vec<&[f64]> = Vec::new();
            for n in 0..self.keys.len() {
                logits.push(self.beta * ip(&q[i], &self.keys[n]) + (self.counts[n] as f64).ln());
                vals.push(&self.values[n]);
            }
            for j in 0..=i {
                logits.push(self.beta * ip(&q[i], &k[j]));
                vals.push(&v[j]);
            }
            out.push(weighted(&logits, &vals, d));
        }

        let base = self.keys.len();
        let want = self.target(self.seen + l as u64).saturating_sub(base);
        let n_new = want.min(l).min(self.n_max - base);

        let seeds: Vec<usize> = if n_new == 0 {
            Vec::new()
        } else if base == 0 {
            let mut chosen = vec![0];
            while chosen.len() < n_new {
                let mut pick = usize::MAX;
                let mut pick_s = f64::INFINITY;
                for j in 0..l {
                    if chosen.contains(&j) {
                        continue;
                    }
                    let s = chosen
                        .iter()
                        .map(|&c| ip(&k[j], &k[c]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    if s < pick_s {
                        pick_s = s;
                        pick = j;
                    }
                }
                chosen.push(pick);
            }
            chosen
        } else {
            let best: Vec<f64> = (0..l)
                .map(|i| self.keys.iter().map(|c| ip(&k[i], c)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&a, &b| best[a].partial_cmp(&best[b]).unwrap().then(a.cmp(&b)));
            order.truncate(n_new);
            order
        };

        let seed_keys: Rows = seeds.iter().map(|&p| k[p].clone()).collect();
        let mut assign = vec![0usize; l];
        for i in 0..l {
            assign[i] = match seeds.iter().position(|&p| p == i) {
                Some(rank) => base + rank,
                None if base > 0 => nearest(&k[i], &self.keys),
                None => nearest(&k[i], &seed_keys),
            };
        }
        for &p in &seeds {
            self.keys.push(k[p].clone());
            self.values.push(v[p].clone());
            self.counts.push(1);
        }
        let merged: Vec<usize> = (0..l).filter(|i| !seeds.contains(i)).collect();
        for &i in &merged {
            self.counts[assign[i]] += 1;
        }
        let mut dk = vec![vec![0.0; d]; self.keys.len()];
        let mut dv = vec![vec![0.0; d]; self.keys.len()];
        let mut touched = Vec::new();
        for &i in &merged {
            let a = assign[i];
            let lr = 1.0 / self.counts[a] as f64;
            for j in 0..d {
                dk[a][j] += lr * (k[i][j] - self.keys[a][j]);
                dv[a][j] += lr * (v[i][j] - self.values[a][j]);
            }
            touched.push(a);
        }
        for a in touched {
            for j in 0..d {
                self.keys[a][j] += std::mem::take(&mut dk[a][j]);
                self.values[a][j] += std::mem::take(&mut dv[a][j]);
            }
        }
        self.seen += l as u64;
        out
    }
}
