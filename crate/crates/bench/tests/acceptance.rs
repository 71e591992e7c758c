//! Acceptance gate: every criterion at its stated tolerance, one PASS/FAIL
//! line each. Exits nonzero if any criterion fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use oracle::{max_dev, rows, vec_dev};
use ovq_bench::mixer::{MixerKind, MixerSpec};
use ovq_bench::recall::{median, recall_benchmark, recall_grid, RecallJob};
use ovq_bench::sweep::{state_size, state_size_sweep};
use ovq_bench::verify::two_cluster_data;
use ovq_core::attention::{
    softmax_attention, vq_attention_chunked, vq_attention_linear, vq_attention_quadratic, HeadSequence, VqStream,
};
use ovq_core::engine::{forward_sequence, growth_count, new_centroid_budget, OvqConfig, OvqState, UpdateRule};
use ovq_core::gmr::{
    e_step, em, gmr_predict, gmr_predict_expectation, hard_assignments, init_means_kmeanspp, kmeans_step, m_step,
    verify_gkr_attention, verify_newton_equivalence, GaussianMixture, Precision,
};
use ovq_core::tasks::{BasicIcrParams, IclParams, PositionalIcrParams, TaskParams, TokenStream, NUM_SPECIALS};
use ovq_core::Matrix;

const BETAS: [f64; 3] = [1.0, 8.0, 32.0];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random VQ instance: sequence plus a unit-norm dictionary.
fn vq_instance(seed: u64, max_t: usize) -> (HeadSequence, Matrix, f64) {
    let mut r = rng(seed);
    let t = r.random_range(1..=max_t);
    let d = r.random_range(1..=32);
    let n = r.random_range(1..=64);
    let beta = BETAS[r.random_range(0..3)];
    let seq = HeadSequence::random(&mut r, t, d, beta);
    let dict = Matrix::random_unit(&mut r, n, d);
    (seq, dict, beta)
}

fn fold_max(xs: impl ParallelIterator<Item = f64>) -> f64 {
    // NaN propagates as infinity so it cannot pass a tolerance
    xs.map(|x| if x.is_nan() { f64::INFINITY } else { x })
        .reduce(|| 0.0, f64::max)
}

fn c1_linear_form() -> Outcome {
    let start = Instant::now();
    let n = 1000;
    let dev = fold_max((0..n as u64).into_par_iter().map(|i| {
        let (seq, dict, beta) = vq_instance(10_000 + i, 512);
        let quad = vq_attention_quadratic(&seq, &dict).unwrap();
        let lin = vq_attention_linear(&seq, &dict).unwrap();
        let mut dev = quad.o.max_abs_diff(&lin.o);
        if i % 10 == 0 {
            let expect = oracle::vq_attention(&rows(&seq.q), &rows(&seq.k), &rows(&seq.v), &rows(&dict), beta);
            dev = dev.max(max_dev(&expect, &lin.o));
        }
        dev
    }));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        dev <= 1e-10 && secs < 60.0,
        format!("{n} instances, max deviation {dev:.3e} (tol 1e-10), {secs:.1}s (limit 60s)"),
    )
}

fn c2_chunk_recurrence() -> Outcome {
    let start = Instant::now();
    let n = 1000;
    let (dev, non_divisible) = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (seq, dict, _) = vq_instance(20_000 + i, 512);
            let t = seq.len();
            let quad = vq_attention_quadratic(&seq, &dict).unwrap();
            let mut dev: f64 = 0.0;
            let mut nd = 0usize;
            for l in [1, 7, 128, t] {
                let ch = vq_attention_chunked(&seq, &dict, l).unwrap();
                let d = ch.o.max_abs_diff(&quad.o);
                dev = dev.max(if d.is_nan() { f64::INFINITY } else { d });
                if t % l != 0 {
                    nd += 1;
                }
            }
            (dev, nd)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        dev <= 1e-10 && non_divisible > 0 && secs < 60.0,
        format!(
            "{n} instances x L in {{1,7,128,T}}, {non_divisible} runs with a partial last chunk, max deviation {dev:.3e} (tol 1e-10), {secs:.1}s (limit 60s)"
        ),
    )
}

fn c3_gmr_bridge() -> Outcome {
    let n = 1000;
    let (forms, bridge) = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (seq, dict, beta) = vq_instance(30_000 + i, 512);
            let mut stream = VqStream::new(dict, beta).unwrap();
            for j in 0..seq.len() {
                stream.push(seq.k.row(j), seq.v.row(j));
            }
            let state = stream.dictionary();
            let mix = GaussianMixture::from_dictionary(
                &Matrix::from_rows(&state.means_k).unwrap(),
                &Matrix::from_rows(&state.means_v).unwrap(),
                &state.counts,
                Precision::Finite(beta),
            )
            .unwrap();
            let q = seq.q.row(seq.len() - 1);
            let soft = gmr_predict(&mix, &state.counts, q, beta).unwrap();
            let expect = gmr_predict_expectation(&mix, &state.counts, q, beta).unwrap();
            let linear = vq_attention_linear(&seq, stream.means_k()).unwrap();
            (vec_dev(&soft, &expect), vec_dev(&soft, linear.o.row(seq.len() - 1)))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    outcome(
        forms <= 1e-10 && bridge <= 1e-10,
        format!("{n} instances, softmax vs expectation {forms:.3e}, GMR vs linear VQ readout {bridge:.3e} (tol 1e-10)"),
    )
}

fn c4_gkr_bridge() -> Outcome {
    let n = 1000;
    let dev = fold_max((0..n as u64).into_par_iter().map(|i| {
        let mut r = rng(40_000 + i);
        let t = r.random_range(1..=256);
        let d = r.random_range(1..=32);
        let beta = BETAS[r.random_range(0..3)];
        let seq = HeadSequence::random(&mut r, t, d, beta);
        let mut dev = verify_gkr_attention(&seq).unwrap().max_deviation;
        if i % 10 == 0 {
            let gkr = oracle::gaussian_kernel_regression(&rows(&seq.q), &rows(&seq.k), &rows(&seq.v), beta);
            dev = dev.max(max_dev(&gkr, &softmax_attention(&seq).unwrap().o));
        }
        dev
    }));
    outcome(
        dev <= 1e-10,
        format!("{n} instances, max deviation {dev:.3e} (tol 1e-10)"),
    )
}

fn c5_em() -> Outcome {
    let datasets = 50;
    let mut bitwise_ok = 0usize;
    let mut worst_rise: f64 = 0.0;
    let mut newton: f64 = 0.0;
    for s in 0..datasets as u64 {
        let mut r = rng(50_000 + s);
        let data = two_cluster_data(&mut r, 200, 4, 1.0, 4.0);

        let hard = init_means_kmeanspp(&data, 3, Precision::Infinite, s).unwrap();
        let z = e_step(&hard, &data).unwrap();
        let assign = hard_assignments(&hard, &data).unwrap();
        let same = match (m_step(&data, &z, Precision::Infinite), kmeans_step(&data, &assign, 3)) {
            (Ok(a), Ok(b)) => a
                .means_joint()
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            (Err(_), Err(_)) => true,
            _ => false,
        };
        bitwise_ok += same as usize;

        let init = init_means_kmeanspp(&data, 2, Precision::Finite(1.0), s).unwrap();
        let (_, trace) = em(&init, &data, 20).unwrap();
        for w in trace.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }

        let labels: Vec<usize> = (0..data.rows()).map(|_| r.random_range(0..4)).collect();
        let start = Matrix::random_gaussian(&mut r, 4, 4);
        newton = newton.max(verify_newton_equivalence(&data, &labels, &start).unwrap().max_deviation);
    }
    outcome(
        bitwise_ok == datasets && worst_rise <= 1e-9 && newton <= 1e-12,
        format!(
            "{datasets} datasets: hard EM == k-means bitwise on {bitwise_ok}, worst NLL rise per step {worst_rise:.3e} (slack 1e-9), Newton deviation {newton:.3e} (tol 1e-12)"
        ),
    )
}

fn c6_growth() -> Outcome {
    let mut failures = Vec::new();
    for n in [1u64, 2, 3, 4, 7, 64, 100, 1000, 2048, 4096, 65_537] {
        let got = [growth_count(0, n), growth_count(n, n), growth_count(3 * n, n)];
        let want = [0, n / 2, 3 * n / 4];
        if got != want {
            failures.push(format!("N={n}: {got:?} != {want:?}"));
        }
        let mut prev = 0;
        for t in 0..=10 * n.min(20_000) {
            let g = growth_count(t, n);
            if g < prev || g != oracle::growth(t, n) {
                failures.push(format!("N={n} t={t}"));
                break;
            }
            prev = g;
        }
    }
    let mut r = rng(60_000);
    let mut engine_checked = 0;
    for _ in 0..100 {
        let n = r.random_range(2..=4096u64);
        let l = r.random_range(1..=512u64);
        let t = r.random_range(2..=20_000u64);
        let chunks = t.div_ceil(l);
        let full: u64 = (1..chunks).map(|c| new_centroid_budget(c, l, n)).sum();
        let schedule = full + growth_count(t, n) - growth_count((chunks - 1) * l, n);
        if schedule != growth_count(t, n) {
            failures.push(format!("schedule T={t} L={l} N={n}"));
        }
        // the engine realizes the schedule with cheap two-dimensional tokens
        let mut state = OvqState::<f64>::new(OvqConfig::new(n as usize, l as usize, 8.0), 2).unwrap();
        let mut realized = 0u64;
        let mut kr = rng(t ^ (n << 20) ^ (l << 40));
        for c in 0..chunks {
            let rows = (l.min(t - c * l)) as usize;
            let k = Matrix::random_unit(&mut kr, rows, 2);
            realized += state.absorb_chunk(&k, &k).unwrap().new_centroid_positions.len() as u64;
        }
        engine_checked += 1;
        if realized != growth_count(t, n) {
            failures.push(format!("engine T={t} L={l} N={n}: {realized}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "exact values and monotonicity over [0, 10N] for 11 sizes, 100 random (T, L, N) triples ({engine_checked} engine runs); failures: {failures:?}"
        ),
    )
}

#[derive(Default)]
struct InvariantTally {
    streams: usize,
    count_dev: u64,
    bound_dev: u64,
    sparse_violations: u64,
    causal_dev: f64,
    simplex_dev: f64,
}

fn c7_engine_invariants() -> Outcome {
    let start = Instant::now();
    let streams = 100;
    let tallies: Vec<InvariantTally> = (0..streams as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(70_000 + i);
            let t = if i == 0 { 16_384 } else { r.random_range(1..=16_384) };
            let l = if i % 2 == 0 { 128 } else { r.random_range(1..=128) };
            let n_max = if i % 3 == 0 { 2048 } else { r.random_range(1..=2048) };
            let d = r.random_range(2..=8);
            let seq = HeadSequence::random(&mut r, t, d, 8.0);
            let cfg = OvqConfig::new(n_max, l, 8.0);
            let mut state = OvqState::<f64>::new(cfg.clone(), d).unwrap();
            let mut tally = InvariantTally {
                streams: 1,
                ..Default::default()
            };
            let mut outputs = Matrix::with_cols(d);
            for s in (0..t).step_by(l) {
                let e = (s + l).min(t);
                let (q, k, v) = (seq.q.slice_rows(s, e), seq.k.slice_rows(s, e), seq.v.slice_rows(s, e));
                for j in 0..q.rows() {
                    let w = state.prediction_weights(q.row(j), j, &k);
                    let dev = if w.iter().any(|&x| x < 0.0) {
                        f64::INFINITY
                    } else {
                        (w.iter().sum::<f64>() - 1.0).abs()
                    };
                    tally.simplex_dev = tally.simplex_dev.max(dev);
                }
                let before = state.clone();
                let (out, rec) = state.forward_chunk(&q, &k, &v).unwrap();
                for row in out.iter_rows() {
                    outputs.push_row(row).unwrap();
                }
                let mut touched = vec![false; before.n_active()];
                for &a in &rec.assignments {
                    if a < touched.len() {
                        touched[a] = true;
                    }
                }
                for (n, &hit) in touched.iter().enumerate() {
                    if !hit
                        && (state.means_k().row(n) != before.means_k().row(n)
                            || state.means_v().row(n) != before.means_v().row(n)
                            || state.counts()[n] != before.counts()[n])
                    {
                        tally.sparse_violations += 1;
                    }
                }
                let total: u64 = state.counts().iter().sum();
                tally.count_dev = tally.count_dev.max(total.abs_diff(state.tokens_seen()));
                tally.bound_dev = tally
                    .bound_dev
                    .max((state.n_active() as u64).saturating_sub(n_max as u64));
            }
            let cut = r.random_range(1..=t);
            let p = seq.prefix(cut);
            let prefix = forward_sequence(&cfg, &p.q, &p.k, &p.v).unwrap();
            tally.causal_dev = prefix.output.max_abs_diff(&outputs.slice_rows(0, cut));
            tally
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let n = tallies.iter().map(|t| t.streams).sum::<usize>();
    let count = tallies.iter().map(|t| t.count_dev).max().unwrap_or(0);
    let bound = tallies.iter().map(|t| t.bound_dev).max().unwrap_or(0);
    let sparse: u64 = tallies.iter().map(|t| t.sparse_violations).sum();
    let causal = tallies.iter().map(|t| t.causal_dev).fold(0.0, f64::max);
    let simplex = tallies.iter().map(|t| t.simplex_dev).fold(0.0, f64::max);
    outcome(
        n >= 100 && count == 0 && bound == 0 && sparse == 0 && causal == 0.0 && simplex <= 1e-12 && secs < 300.0,
        format!(
            "{n} streams (T <= 16384, L <= 128, n_max <= 2048): count gap {count}, bound excess {bound}, untouched-row changes {sparse}, prefix deviation {causal:e}, simplex deviation {simplex:.3e}, {secs:.1}s (limit 300s)"
        ),
    )
}

fn c8_running_mean() -> Outcome {
    let mut dev: f64 = 0.0;
    let mut runs = 0;
    for i in 0..500u64 {
        let mut r = rng(80_000 + i);
        let m = r.random_range(1..=64);
        let d = r.random_range(1..=16);
        let k = Matrix::random_unit(&mut r, m, d);
        let v = Matrix::random_gaussian(&mut r, m, d);
        for rule in [UpdateRule::MiniBatch, UpdateRule::Sequential] {
            // one centroid, one token per chunk: every chunk assigns uniquely
            let mut state = OvqState::<f64>::new(OvqConfig::new(1, 1, 8.0).with_update_rule(rule), d).unwrap();
            for j in 0..m {
                state
                    .absorb_chunk(&k.slice_rows(j, j + 1), &v.slice_rows(j, j + 1))
                    .unwrap();
            }
            let mean_k = oracle::kmeans_means(&rows(&k), &vec![0; m], 1);
            let mean_v = oracle::kmeans_means(&rows(&v), &vec![0; m], 1);
            dev = dev
                .max(vec_dev(&mean_k[0], state.means_k().row(0)))
                .max(vec_dev(&mean_v[0], state.means_v().row(0)));
            runs += 1;
        }
    }
    outcome(
        dev <= 1e-12,
        format!("{runs} runs (m <= 64, both update rules), max deviation {dev:.3e} (tol 1e-12)"),
    )
}

fn c9_exact_recall() -> Outcome {
    let t = 256;
    let mut lines = Vec::new();
    let mut all = true;
    for n_max in [4 * t, 64 * t] {
        let spec = MixerSpec::ovq(n_max, 1, 16.0, 64);
        let accs: Vec<f64> = (0..5)
            .map(|seed| recall_benchmark(&spec, t, 64, seed).unwrap().top1_accuracy)
            .collect();
        all &= accs.iter().all(|&a| a == 1.0);
        lines.push(format!("n_max={n_max}: {accs:?}"));
    }
    outcome(
        all,
        format!(
            "T=256 d=64 beta=16 L=1, 64 probes, seeds 0..5, accuracy 1.0 required; {}",
            lines.join("; ")
        ),
    )
}

fn c10_ordering() -> Outcome {
    let start = Instant::now();
    let t = 2048;
    let d = 64;
    let seeds = 0..5u64;
    let mut specs = vec![
        ("full", MixerSpec::new(MixerKind::FullAttention, 16.0, d)),
        ("linear", MixerSpec::new(MixerKind::LinearBaseline, 16.0, d)),
    ];
    let sizes = [t / 8, t / 4, t / 2, t, 2 * t];
    for n in sizes {
        specs.push(("ovq", MixerSpec::ovq(n, 128, 16.0, d)));
    }
    let jobs: Vec<RecallJob> = specs
        .iter()
        .flat_map(|(_, s)| {
            seeds.clone().map(move |seed| RecallJob {
                spec: s.clone(),
                t,
                seed,
            })
        })
        .collect();
    let rows = recall_grid(&jobs, 64).unwrap();
    let medians: Vec<f64> = rows
        .chunks(5)
        .map(|c| median(&mut c.iter().map(|r| r.top1_accuracy).collect::<Vec<_>>()))
        .collect();
    let (full, linear, ovq) = (medians[0], medians[1], &medians[2..]);
    let ovq_t = ovq[3];
    let monotone = ovq.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        full >= ovq_t && ovq_t > linear && monotone && secs < 600.0,
        format!(
            "medians: full {full}, ovq(T) {ovq_t}, linear {linear}; ovq over n_max {sizes:?}: {ovq:?}; {secs:.1}s (limit 600s)"
        ),
    )
}

fn c11_state_accounting() -> Outcome {
    let d = 32;
    let n_max = 2048usize;
    let grid = [256usize, 1024, 2048, 4096, 16_384, 65_536];
    let specs = [
        MixerSpec::new(MixerKind::FullAttention, 16.0, d),
        MixerSpec::ovq(n_max, 128, 16.0, d),
    ];
    let rows = state_size_sweep(&specs, &grid, 0).unwrap();
    let mut failures = Vec::new();
    for row in &rows {
        let t = row.t as u64;
        match row.mixer.as_str() {
            "full_attention" => {
                if row.state_scalars != t * 2 * d as u64 {
                    failures.push(format!("full T={t}: {}", row.state_scalars));
                }
            }
            _ => {
                let want = oracle::growth(t, n_max as u64);
                if row.n_active != Some(want as usize)
                    || row.state_scalars != want * (2 * d as u64 + 1)
                    || row.state_scalars > (n_max * (2 * d + 1)) as u64
                {
                    failures.push(format!("ovq T={t}: {:?} {}", row.n_active, row.state_scalars));
                }
            }
        }
    }
    let at_n = rows
        .iter()
        .find(|r| r.mixer == "ovq" && r.t == n_max)
        .and_then(|r| r.n_active);
    if at_n != Some(n_max / 2) {
        failures.push(format!("n_active at T = n_max is {at_n:?}"));
    }
    // the report agrees with the engine's own per-chunk trace
    let mut r = rng(0);
    let seq = HeadSequence::random(&mut r, 4096, d, 16.0);
    let run = forward_sequence(&OvqConfig::new(n_max, 128, 16.0), &seq.q, &seq.k, &seq.v).unwrap();
    let traced = run.trace.last().map(|x| x.1);
    let reported = rows
        .iter()
        .find(|r| r.mixer == "ovq" && r.t == 4096)
        .map(|r| r.state_scalars);
    if traced != reported {
        failures.push(format!("trace {traced:?} vs report {reported:?}"));
    }
    let big = state_size(&MixerSpec::new(MixerKind::FullAttention, 16.0, 128), 65_536, 0).unwrap();
    if big.state_scalars != 16_777_216 {
        failures.push(format!("full attention at 64k, d=128: {}", big.state_scalars));
    }
    let ovq_scalars: Vec<u64> = rows
        .iter()
        .filter(|r| r.mixer == "ovq")
        .map(|r| r.state_scalars)
        .collect();
    let full_scalars: Vec<u64> = rows
        .iter()
        .filter(|r| r.mixer != "ovq")
        .map(|r| r.state_scalars)
        .collect();
    outcome(
        failures.is_empty(),
        format!(
            "T grid {grid:?}, d={d}: ovq {ovq_scalars:?} (cap {}), full {full_scalars:?}; failures: {failures:?}",
            n_max * (2 * d + 1)
        ),
    )
}

fn check_stream(s: &TokenStream, p: &TaskParams) -> Option<String> {
    if s.len() != p.expected_len() {
        return Some(format!("length {} != {}", s.len(), p.expected_len()));
    }
    let scored = s.targets.iter().filter(|t| t.is_some()).count();
    if scored != p.expected_targets() {
        return Some(format!("{scored} targets != {}", p.expected_targets()));
    }
    if s.tokens.iter().any(|&t| t >= s.vocab_size + NUM_SPECIALS) {
        return Some("token out of range".into());
    }
    if s.validate().is_err() {
        return Some("validation failed".into());
    }
    None
}

fn c12_generators() -> Outcome {
    let per_task = 1000u64;
    let failures: Vec<String> = (0..per_task)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let tasks = [
                TaskParams::BasicIcr(BasicIcrParams {
                    seed,
                    ..Default::default()
                }),
                TaskParams::PositionalIcr(PositionalIcrParams {
                    seed,
                    ..Default::default()
                }),
                TaskParams::Icl(IclParams {
                    seed,
                    ..Default::default()
                }),
            ];
            tasks
                .into_iter()
                .filter_map(move |p| {
                    let a = p.generate().unwrap();
                    let b = p.generate().unwrap();
                    if a != b {
                        return Some(format!("seed {seed}: nondeterministic"));
                    }
                    check_stream(&a, &p).map(|e| format!("seed {seed}: {e}"))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    // every input, coefficient and bias at the defaults
    let p = IclParams::default();
    let x_max = p.max_input().unwrap();
    let mut max_out = 0u32;
    for a in 1..=p.coef_max {
        for b in 1..=p.coef_max {
            for x in 0..=x_max {
                max_out = max_out.max(a * x + b);
            }
        }
    }
    // and the bound over a grid of vocabularies and coefficient ranges
    let mut grid_bad = 0;
    for vocab in (2..=20_000u32).step_by(7).chain([10_000]) {
        for coef in 1..=12u32 {
            let q = IclParams {
                vocab_size: vocab,
                coef_max: coef,
                ..Default::default()
            };
            if let Some(x) = q.max_input() {
                if coef * x + coef >= vocab {
                    grid_bad += 1;
                }
            }
        }
    }
    outcome(
        failures.is_empty() && max_out == 9995 && grid_bad == 0,
        format!(
            "{per_task} generations per task, failures {failures:?}; ICL max output at defaults {max_out} (< 10000), grid violations {grid_bad}"
        ),
    )
}

fn c13_verify_cli() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ovq");
    let code = |fault: Option<&str>| {
        let mut cmd = Command::new(bin);
        cmd.arg("verify");
        if let Some(f) = fault {
            cmd.args(["--inject-fault", f]);
        }
        cmd.output().map(|o| o.status.code()).unwrap_or(None)
    };
    let clean = code(None);
    let faults: Vec<(&str, Option<i32>)> = ["count-skip", "mask-off-by-one", "growth-over-allocation"]
        .into_iter()
        .map(|f| (f, code(Some(f))))
        .collect();
    outcome(
        clean == Some(0) && faults.iter().all(|f| f.1 == Some(1)),
        format!("clean exit {clean:?}; faults {faults:?}"),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 13] = [
        (1, c1_linear_form),
        (2, c2_chunk_recurrence),
        (3, c3_gmr_bridge),
        (4, c4_gkr_bridge),
        (5, c5_em),
        (6, c6_growth),
        (7, c7_engine_invariants),
        (8, c8_running_mean),
        (9, c9_exact_recall),
        (10, c10_ordering),
        (11, c11_state_accounting),
        (12, c12_generators),
        (13, c13_verify_cli),
    ];
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = Vec::new();
    let total = Instant::now();
    for (id, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let started = Instant::now();
        let o = run();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2}: {verdict} ({:.1}s) {}",
            started.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.passed {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} failed {:?} in {:?}",
        failed.len(),
        failed,
        Duration::from_secs(total.elapsed().as_secs())
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
