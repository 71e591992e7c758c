//! `ovq` command line: task generation, embedding-space runs, benchmark grids
//! and the verification suite.
//!
//! Exit codes: 0 on success, 1 when verification fails, 2 on any
//! configuration or runtime error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use ovq_bench::mixer::{DictSource, Mixer, MixerKind, MixerSpec, Ovq};
use ovq_bench::recall::{recall_grid, RecallJob};
use ovq_bench::report::{write_report, Format, ReportMeta};
use ovq_bench::sweep::state_size_sweep;
use ovq_bench::token_eval::eval_with_mixer;
use ovq_bench::verify::{verify_all, VerifyOptions};
use ovq_core::engine::{Ablation, Fault, OvqConfig, OvqState, UpdateRule};
use ovq_core::tasks::{
    read_streams, write_streams, BasicIcrParams, IclParams, PositionalIcrParams, StreamFormat, TaskParams,
};
use ovq_core::{OvqError, Result};

#[derive(Parser, Debug)]
#[command(name = "ovq", version, about = "Online vector-quantized attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic task streams and write them to a file.
    Gen(GenArgs),
    /// Run a mixer over task streams in embedding space and report accuracy.
    Run(RunArgs),
    /// Sweep a benchmark grid and write a report.
    Bench(BenchArgs),
    /// Run the oracle-equivalence suite; exits 1 if any check fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

/// `none`, `rand-assign`, `linear-growth` or `const-lr=R`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum AblationArg {
    None,
    RandAssign,
    LinearGrowth,
    ConstLr(f64),
}

impl FromStr for AblationArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "rand-assign" => Ok(Self::RandAssign),
            "linear-growth" => Ok(Self::LinearGrowth),
            _ => match s.strip_prefix("const-lr=") {
                Some(r) => r
                    .parse::<f64>()
                    .map(Self::ConstLr)
                    .map_err(|e| format!("bad learning rate {r:?}: {e}")),
                None => Err(format!(
                    "unknown ablation {s:?}; expected none, rand-assign, linear-growth or const-lr=R"
                )),
            },
        }
    }
}

impl std::fmt::Display for AblationArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => f.write_str("none"),
            Self::RandAssign => f.write_str("rand-assign"),
            Self::LinearGrowth => f.write_str("linear-growth"),
            Self::ConstLr(r) => write!(f, "const-lr={r}"),
        }
    }
}

impl Serialize for AblationArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl AblationArg {
    /// Linear growth splits the budget over the expected sequence length.
    fn resolve(self, expected_len: usize) -> Ablation {
        match self {
            Self::None => Ablation::None,
            Self::RandAssign => Ablation::RandomAssign,
            Self::LinearGrowth => Ablation::LinearGrowth { expected_len },
            Self::ConstLr(rate) => Ablation::ConstantLr { rate },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum UpdateRuleArg {
    MiniBatch,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MixerArg {
    FullAttention,
    /// Fixed random dictionary of `--n-max` centroids.
    VqFixed,
    /// Fixed dictionary seeded by k-means++ over the first keys.
    VqKmeans,
    Ovq,
    Linear,
}

/// Parameters shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Base random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// OVQ chunk length.
    #[arg(long, default_value_t = 128)]
    chunk_len: usize,
    /// Dictionary size for the quantized mixers.
    #[arg(long, default_value_t = 2048)]
    n_max: usize,
    /// Inverse temperature.
    #[arg(long, default_value_t = 16.0)]
    beta: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// OVQ ablation: none, rand-assign, linear-growth or const-lr=R.
    #[arg(long, default_value_t = AblationArg::None)]
    ablation: AblationArg,
    /// OVQ merge rule.
    #[arg(long, value_enum, default_value_t = UpdateRuleArg::MiniBatch)]
    update_rule: UpdateRuleArg,
    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

impl Common {
    fn spec(&self, mixer: MixerArg, n_max: usize, expected_len: usize) -> MixerSpec {
        let kind = match mixer {
            MixerArg::FullAttention => MixerKind::FullAttention,
            MixerArg::VqFixed => MixerKind::VqFixed {
                n: n_max,
                source: DictSource::Random,
            },
            MixerArg::VqKmeans => MixerKind::VqFixed {
                n: n_max,
                source: DictSource::KmeansppKeys,
            },
            MixerArg::Ovq => {
                let rule = match self.update_rule {
                    UpdateRuleArg::MiniBatch => UpdateRule::MiniBatch,
                    UpdateRuleArg::Sequential => UpdateRule::Sequential,
                };
                MixerKind::Ovq(
                    OvqConfig::new(n_max, self.chunk_len, self.beta)
                        .with_ablation(self.ablation.resolve(expected_len))
                        .with_update_rule(rule)
                        .with_seed(self.seed),
                )
            }
            MixerArg::Linear => MixerKind::LinearBaseline,
        };
        MixerSpec::new(kind, self.beta, self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TaskArg {
    BasicIcr,
    PositionalIcr,
    Icl,
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// JSON object overriding generator defaults, e.g. '{"num_pairs":64}'.
    #[arg(long)]
    params: Option<String>,
    /// Number of streams; stream i uses seed `--seed + i`.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Write the binary format instead of JSON lines.
    #[arg(long)]
    binary: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Stream file written by `gen`.
    #[arg(long)]
    input: PathBuf,
    /// Read the binary stream format.
    #[arg(long)]
    binary: bool,
    #[arg(long, value_enum, default_value_t = MixerArg::Ovq)]
    mixer: MixerArg,
    /// Seed of the token embedding table; defaults to `--seed`.
    #[arg(long)]
    embed_seed: Option<u64>,
    /// Start every stream from this OVQ state snapshot.
    #[arg(long)]
    load_state: Option<PathBuf>,
    /// Save the OVQ state after the last stream.
    #[arg(long)]
    save_state: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BenchKind {
    /// Associative recall accuracy.
    Recall,
    /// Live state size.
    State,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = BenchKind::Recall)]
    kind: BenchKind,
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024])]
    t_grid: Vec<usize>,
    /// Dictionary sizes for the quantized mixers; defaults to `--n-max`.
    #[arg(long, value_delimiter = ',')]
    n_max_grid: Vec<usize>,
    /// Number of seeds per grid point, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Probe queries per recall run.
    #[arg(long, default_value_t = 64)]
    probes: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MixerArg::FullAttention, MixerArg::Ovq, MixerArg::Linear])]
    mixers: Vec<MixerArg>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FaultArg {
    CountSkip,
    MaskOffByOne,
    GrowthOverAllocation,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::CountSkip => Fault::CountSkip,
            FaultArg::MaskOffByOne => Fault::MaskOffByOne,
            FaultArg::GrowthOverAllocation => Fault::GrowthOverAllocation,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Random instances per check.
    #[arg(long, default_value_t = 8)]
    instances: usize,
    /// Longest sequence in the attention-oracle checks.
    #[arg(long, default_value_t = 256)]
    max_t: usize,
    /// Deliberately break the engine to exercise the suite.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => gen(&a).map(|_| true),
        Command::Run(a) => run(&a).map(|_| true),
        Command::Bench(a) => bench(&a).map(|_| true),
        Command::Verify(a) => verify(&a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn params_json<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn stream_format(binary: bool) -> StreamFormat {
    if binary {
        StreamFormat::Binary
    } else {
        StreamFormat::Jsonl
    }
}

/// Defaults of `task` with the keys of `overrides` replaced.
fn task_params(task: TaskArg, overrides: Option<&str>, seed: u64) -> Result<TaskParams> {
    let mut base = match task {
        TaskArg::BasicIcr => serde_json::to_value(TaskParams::BasicIcr(BasicIcrParams::default())),
        TaskArg::PositionalIcr => serde_json::to_value(TaskParams::PositionalIcr(PositionalIcrParams::default())),
        TaskArg::Icl => serde_json::to_value(TaskParams::Icl(IclParams::default())),
    }
    .map_err(|e| OvqError::Internal(e.to_string()))?;
    let obj = base
        .as_object_mut()
        .ok_or_else(|| OvqError::Internal("task params are not an object".into()))?;
    if let Some(text) = overrides {
        let patch: Value =
            serde_json::from_str(text).map_err(|e| OvqError::Config(format!("--params is not valid JSON: {e}")))?;
        let patch = patch
            .as_object()
            .ok_or_else(|| OvqError::Config("--params must be a JSON object".into()))?;
        for (key, value) in patch {
            if key == "task" || !obj.contains_key(key) {
                return Err(OvqError::Config(format!("unknown parameter {key:?} for this task")));
            }
            obj.insert(key.clone(), value.clone());
        }
    }
    obj.insert("seed".into(), json!(seed));
    serde_json::from_value(base).map_err(|e| OvqError::Config(format!("bad task parameters: {e}")))
}

fn gen(a: &GenArgs) -> Result<()> {
    if a.count == 0 {
        return Err(OvqError::Config("--count must be at least 1".into()));
    }
    let streams = (0..a.count as u64)
        .map(|i| task_params(a.task, a.params.as_deref(), a.common.seed + i)?.generate())
        .collect::<Result<Vec<_>>>()?;
    write_streams(&streams, &a.out, stream_format(a.binary))?;
    let total: usize = streams.iter().map(|s| s.len()).sum();
    eprintln!(
        "wrote {} streams ({total} tokens) to {}",
        streams.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunRow {
    stream: usize,
    mixer: String,
    label: String,
    n_max: Option<usize>,
    stream_len: usize,
    targets: usize,
    correct: usize,
    accuracy: f64,
    state_scalars: u64,
}

fn run(a: &RunArgs) -> Result<()> {
    let c = &a.common;
    let ovq_only = a.load_state.is_some() || a.save_state.is_some();
    if ovq_only && a.mixer != MixerArg::Ovq {
        return Err(OvqError::Config(
            "--save-state and --load-state need --mixer ovq".into(),
        ));
    }
    let streams = read_streams(&a.input, stream_format(a.binary))?;
    let loaded = a.load_state.as_ref().map(OvqState::load).transpose()?;
    if let Some(s) = &loaded {
        if s.dim() != c.dim {
            return Err(OvqError::Config(format!(
                "snapshot dimension {} does not match --dim {}",
                s.dim(),
                c.dim
            )));
        }
    }
    let embed_seed = a.embed_seed.unwrap_or(c.seed);
    let mut rows = Vec::with_capacity(streams.len());
    let mut last: Option<Box<dyn Mixer>> = None;
    for (i, stream) in streams.iter().enumerate() {
        let spec = match &loaded {
            Some(s) => MixerSpec::new(MixerKind::Ovq(s.config().clone()), s.config().beta, c.dim),
            None => c.spec(a.mixer, c.n_max, stream.len()),
        };
        let mut mixer: Box<dyn Mixer> = match &loaded {
            Some(s) => Box::new(Ovq::from_state(s.clone())),
            None => spec.build(c.seed)?,
        };
        let r = eval_with_mixer(mixer.as_mut(), &spec, stream, embed_seed)?;
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        rows.push(RunRow {
            stream: i,
            mixer: r.mixer,
            label: r.label,
            n_max: r.n_max,
            stream_len: r.stream_len,
            targets: r.targets,
            correct: r.correct,
            accuracy: r.accuracy,
            state_scalars: r.state_scalars,
        });
        last = Some(mixer);
    }
    if let (Some(path), Some(m)) = (&a.save_state, &last) {
        m.ovq_state()
            .ok_or_else(|| OvqError::Internal("mixer has no engine state".into()))?
            .save(path)?;
    }
    let meta = ReportMeta::new("ovq-run", params_json(a));
    let mut w = output(a.out.as_deref())?;
    write_report(&mut w, c.format.into(), &meta, &rows)?;
    w.flush()?;
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let c = &a.common;
    if a.t_grid.is_empty() || a.mixers.is_empty() {
        return Err(OvqError::Config("--t-grid and --mixers must not be empty".into()));
    }
    let n_grid = if a.n_max_grid.is_empty() {
        vec![c.n_max]
    } else {
        a.n_max_grid.clone()
    };
    let quantized = |m: MixerArg| matches!(m, MixerArg::VqFixed | MixerArg::VqKmeans | MixerArg::Ovq);
    let max_t = a.t_grid.iter().copied().max().unwrap_or(0);
    let meta = ReportMeta::new(
        match a.kind {
            BenchKind::Recall => "ovq-recall",
            BenchKind::State => "ovq-state",
        },
        params_json(a),
    );
    let mut w = output(a.out.as_deref())?;
    match a.kind {
        BenchKind::Recall => {
            if a.seeds == 0 {
                return Err(OvqError::Config("--seeds must be at least 1".into()));
            }
            let mut jobs = Vec::new();
            for &m in &a.mixers {
                let ns: &[usize] = if quantized(m) { &n_grid } else { &n_grid[..1] };
                for &n in ns {
                    for &t in &a.t_grid {
                        let spec = c.spec(m, n, t);
                        spec.validate()?;
                        for s in 0..a.seeds {
                            jobs.push(RecallJob {
                                spec: spec.clone(),
                                t,
                                seed: c.seed + s,
                            });
                        }
                    }
                }
            }
            let rows = recall_grid(&jobs, a.probes)?;
            write_report(&mut w, c.format.into(), &meta, &rows)?;
        }
        BenchKind::State => {
            let mut specs = Vec::new();
            for &m in &a.mixers {
                let ns: &[usize] = if quantized(m) { &n_grid } else { &n_grid[..1] };
                for &n in ns {
                    specs.push(c.spec(m, n, max_t));
                }
            }
            let rows = state_size_sweep(&specs, &a.t_grid, c.seed)?;
            write_report(&mut w, c.format.into(), &meta, &rows)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<bool> {
    let opts = VerifyOptions {
        seed: a.common.seed,
        instances: a.instances,
        max_t: a.max_t,
        fault: a.inject_fault.map(Fault::from),
    };
    if opts.instances == 0 {
        return Err(OvqError::Config("--instances must be at least 1".into()));
    }
    let report = verify_all(&opts)?;
    let mut doc = serde_json::to_value(&report).map_err(|e| OvqError::Internal(e.to_string()))?;
    doc["meta"] = serde_json::to_value(ReportMeta::new(&report.schema, params_json(a)))
        .map_err(|e| OvqError::Internal(e.to_string()))?;
    let mut w = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| OvqError::Internal(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    for name in report.failed_checks() {
        eprintln!("FAILED: {name}");
    }
    Ok(report.passed)
}
