//! Benchmark library behaviour: determinism, accounting and report schemas.

use serde_json::{json, Value};

use ovq_bench::mixer::{DictSource, MixerKind, MixerSpec};
use ovq_bench::recall::{recall_benchmark, recall_grid, RecallJob, RecallRow};
use ovq_bench::report::{read_csv_report, write_report, Format, ReportMeta};
use ovq_bench::sweep::{state_size, state_size_sweep, StateRow};
use ovq_bench::token_eval::{token_task_eval, EVAL_LABEL};
use ovq_bench::verify::{verify_all, VerifyOptions};
use ovq_core::engine::{dictionary_target, forward_sequence, OvqConfig};
use ovq_core::tasks::{gen_basic_icr, BasicIcrParams};
use ovq_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_kinds(d: usize) -> Vec<MixerSpec> {
    vec![
        MixerSpec::new(MixerKind::FullAttention, 16.0, d),
        MixerSpec::new(
            MixerKind::VqFixed {
                n: 32,
                source: DictSource::Random,
            },
            16.0,
            d,
        ),
        MixerSpec::new(
            MixerKind::VqFixed {
                n: 32,
                source: DictSource::KmeansppKeys,
            },
            16.0,
            d,
        ),
        MixerSpec::ovq(64, 16, 16.0, d),
        MixerSpec::new(MixerKind::LinearBaseline, 16.0, d),
    ]
}

#[test]
fn recall_reports_are_deterministic() {
    let jobs: Vec<RecallJob> = all_kinds(32)
        .into_iter()
        .flat_map(|spec| {
            (0..3).map(move |seed| RecallJob {
                spec: spec.clone(),
                t: 200,
                seed,
            })
        })
        .collect();
    let a = recall_grid(&jobs, 40).unwrap();
    let b = recall_grid(&jobs, 40).unwrap();
    assert_eq!(a.len(), jobs.len());
    for ((x, y), job) in a.iter().zip(&b).zip(&jobs) {
        assert!(x.same_result(y));
        assert_eq!(x.seed, job.seed);
        assert!((0.0..=1.0).contains(&x.top1_accuracy));
    }
}

#[test]
fn full_attention_is_the_recall_ceiling() {
    let spec = MixerSpec::new(MixerKind::FullAttention, 16.0, 64);
    for seed in 0..3 {
        let row = recall_benchmark(&spec, 256, 64, seed).unwrap();
        assert_eq!(row.top1_accuracy, 1.0);
        assert!(row.mean_cosine > 0.99);
    }
}

#[test]
fn reported_state_matches_engine_trace() {
    let d = 16;
    let cfg = OvqConfig::new(128, 32, 16.0);
    for t in [32, 96, 500, 1024] {
        let row = state_size(&MixerSpec::ovq(128, 32, 16.0, d), t, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = Matrix::random_unit(&mut rng, t, d);
        let v = Matrix::random_gaussian(&mut rng, t, d);
        let run = forward_sequence(&cfg, &k, &k, &v).unwrap();
        assert_eq!(Some(row.state_scalars), run.trace.last().map(|x| x.1));
        assert_eq!(row.n_active, Some(dictionary_target(t as u64, 128) as usize));
    }
}

#[test]
fn sweep_is_ordered_by_mixer_then_length() {
    let rows = state_size_sweep(&all_kinds(8), &[16, 64, 256], 1).unwrap();
    assert_eq!(rows.len(), 15);
    let labels: Vec<(&str, usize)> = rows.iter().map(|r| (r.mixer.as_str(), r.t)).collect();
    assert_eq!(labels[0], ("full_attention", 16));
    assert_eq!(labels[2], ("full_attention", 256));
    assert_eq!(labels[14], ("linear_baseline", 256));
    for r in rows.iter().filter(|r| r.mixer == "vq_fixed") {
        assert_eq!(r.state_scalars, 32 * 17);
    }
}

#[test]
fn token_eval_is_deterministic_and_labelled() {
    let s = gen_basic_icr(&BasicIcrParams {
        num_pairs: 60,
        num_queries: 6,
        ..Default::default()
    })
    .unwrap();
    for spec in all_kinds(32) {
        let a = token_task_eval(&spec, &s, 3).unwrap();
        let b = token_task_eval(&spec, &s, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, EVAL_LABEL);
        assert_eq!(a.targets, 48);
    }
}

#[test]
fn token_eval_improves_with_memory() {
    for seed in 0..5 {
        let s = gen_basic_icr(&BasicIcrParams {
            seed,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.len(), 4063);
        let accs: Vec<f64> = [512, 1024, 2048, 4096]
            .iter()
            .map(|&n| {
                token_task_eval(&MixerSpec::ovq(n, 128, 16.0, 64), &s, seed)
                    .unwrap()
                    .accuracy
            })
            .collect();
        assert!(accs.windows(2).all(|w| w[1] >= w[0] - 0.02), "seed {seed}: {accs:?}");
    }
}

#[test]
fn reports_carry_schema_and_meta() {
    let rows = vec![recall_benchmark(&MixerSpec::ovq(64, 8, 16.0, 16), 64, 8, 0).unwrap()];
    let meta = ReportMeta::new("ovq-recall", json!({"seed": 0, "dim": 16}));
    let mut buf = Vec::new();
    write_report(&mut buf, Format::Json, &meta, &rows).unwrap();
    let doc: Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(doc["schema"], "ovq-recall");
    assert_eq!(doc["version"], 1);
    assert_eq!(doc["meta"]["params"]["dim"], 16);
    let back: Vec<RecallRow> = serde_json::from_value(doc["rows"].clone()).unwrap();
    assert!(back[0].same_result(&rows[0]));

    let mut csv = Vec::new();
    write_report(&mut csv, Format::Csv, &meta, &rows).unwrap();
    let (m, parsed): (Value, Vec<RecallRow>) = read_csv_report(csv.as_slice()).unwrap();
    assert_eq!(m["schema"], "ovq-recall");
    assert!(parsed[0].same_result(&rows[0]));
    let header = String::from_utf8(csv).unwrap().lines().nth(1).unwrap().to_string();
    assert_eq!(
        header,
        "mixer,t,n_max,seed,top1_accuracy,mean_cosine,state_scalars,wall_time_ms"
    );

    let state: Vec<StateRow> = state_size_sweep(&all_kinds(4)[..1], &[8], 0).unwrap();
    let mut csv = Vec::new();
    write_report(&mut csv, Format::Csv, &ReportMeta::new("ovq-state", json!({})), &state).unwrap();
    let (_, back): (Value, Vec<StateRow>) = read_csv_report(csv.as_slice()).unwrap();
    assert_eq!(back, state);
}

#[test]
fn verify_is_clean_across_seeds() {
    for seed in 0..100 {
        let r = verify_all(&VerifyOptions {
            seed,
            instances: 2,
            max_t: 64,
            fault: None,
        })
        .unwrap();
        assert!(r.passed, "seed {seed}: {:?}", r.failed_checks());
        assert!(r.checks.iter().all(|c| c.instances > 0));
    }
}

#[test]
fn invalid_specs_are_config_errors() {
    assert!(MixerSpec::ovq(0, 16, 16.0, 8).build(0).is_err());
    assert!(MixerSpec::ovq(16, 0, 16.0, 8).build(0).is_err());
    assert!(MixerSpec::new(MixerKind::FullAttention, -1.0, 8).build(0).is_err());
    assert!(MixerSpec::new(MixerKind::LinearBaseline, 1.0, 0).build(0).is_err());
    assert!(MixerSpec::new(
        MixerKind::VqFixed {
            n: 0,
            source: DictSource::Random
        },
        1.0,
        4
    )
    .build(0)
    .is_err());
}
