//! Command-line front end.
//!
//! Every command reads a stream from `--input` (CSV) or `--spec` (generator JSON), runs
//! one pipeline or diagnostic, and writes `metrics.csv` and `summary.json` into
//! `--output-dir`. Some commands also write a per-group or per-model table.
//!
//! Exit codes: 0 on success, 2 for configuration and input errors, 3 for failures
//! raised while a run is in progress. Runtime errors print the failing timestep when
//! one is known.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::counterexamples::{self, Construction};
use crate::datagen::{self, StreamKind, StreamSpec};
use crate::descent::{run_stream, LearnerState, MirrorMap, StepSchedule};
use crate::equilibrium::{self, BoundId, BoundParams};
use crate::io::{self, BattleFile, StreamFile};
use crate::losses::{LossInstance, Regularizer};
use crate::pipelines::{self, EnsembleConfig, GroupLayout, LambdaPreset, PipelineRun, SquaredGuarantee};
use crate::{Error, Result};

/// Environment variable that replaces the configured generator seed.
pub const SEED_ENV: &str = "GEQ_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const DEFAULT_ETA: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(name = "geq", version, about = "Online gradient-equilibrium pipelines and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Source {
    /// Stream CSV (`y`, optional `f`/`pred`, `group:*` or `z:*`) or battle CSV.
    #[arg(long, conflicts_with = "spec")]
    input: Option<PathBuf>,
    /// Generator spec in JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Generator seed; the environment variable GEQ_SEED takes precedence.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    /// Number of runs with consecutive seeds, written to `run-000`, `run-001`, ...
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Execute repeated runs concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    InvSqrtT,
    InvT,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DebiasArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value_t = Kind::Regression)]
    kind: Kind,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    /// Bound on |y - f|; together with --delta it enables the squared-loss bias bound.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Clipping margin for base probabilities.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct MultigroupArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value_t = Kind::Regression)]
    kind: Kind,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Allow a record to belong to several groups.
    #[arg(long)]
    overlapping: bool,
    /// Regularization strength; switches to ridge (regression) or lasso (classification)
    /// decorrelation.
    #[arg(long, conflicts_with = "lambda_preset")]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    lambda_preset: Option<Preset>,
    /// Bound on the feature norm, required for decorrelation.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct TrackQuantileArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// Bound on |y - f|; enables the coverage bound.
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EnsembleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    /// Expert learning rates, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.5])]
    nus: Vec<f64>,
    /// Learning rate of the weight layer.
    #[arg(long, default_value_t = 1.0)]
    nu_ens: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EloArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// Strength of the sign penalty on the scores.
    #[arg(long)]
    lasso: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Squared,
    Absolute,
    Quantile,
    Logistic,
    GlmLinear,
    GlmLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RegArg {
    None,
    L1,
    L2Half,
    L2Full,
    Simplex,
    L2Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MirrorArg {
    Identity,
    Entropy,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DiagnoseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    loss: LossArg,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Lower end of the response range for logistic losses.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    range_a: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    range_b: f64,
    /// Constant step size (ignored when --c is given).
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    /// Scale of the decaying schedule c t^(-alpha).
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = RegArg::None)]
    reg: RegArg,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Apply a penalty through the proximal step instead of adding it to each loss.
    #[arg(long)]
    prox: bool,
    #[arg(long, value_enum, default_value_t = MirrorArg::Identity)]
    mirror: MirrorArg,
    /// Initial parameter, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    theta1: Option<Vec<f64>>,
    /// Bound to evaluate along the run.
    #[arg(long)]
    bound: Option<String>,
    #[arg(long)]
    lipschitz: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Feature norm bound for bounds that need one; defaults to --c.
    #[arg(long)]
    bound_c: Option<f64>,
    /// Compute regret against the best fixed parameter.
    #[arg(long)]
    regret: bool,
    #[arg(long)]
    nmr_radius: Option<f64>,
    #[arg(long, default_value_t = 9)]
    nmr_grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ConstructionName {
    NrNotGeqAbs,
    GeqNotNrAbs,
    NrNotGeqSquared,
    ZeroRegretBias,
    Spiral,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CounterexampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
    #[arg(long, value_enum)]
    name: ConstructionName,
    #[arg(long, default_value_t = 1000)]
    t: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    c: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    b: f64,
    #[arg(long, default_value_t = 2)]
    n: u64,
    #[arg(long, default_value_t = 1)]
    m: u64,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.0], allow_negative_numbers = true)]
    theta1: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    source: Source,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Additive debiasing of a regression or classification stream.
    Debias(DebiasArgs),
    /// Per-group debiasing, or regularized decorrelation with --lambda.
    Multigroup(MultigroupArgs),
    /// Online quantile tracking.
    TrackQuantile(TrackQuantileArgs),
    /// Multiplicative-weights ensemble of quantile trackers.
    Ensemble(EnsembleArgs),
    /// Online Elo ratings from pairwise battles.
    Elo(EloArgs),
    /// Gradient descent on a loss stream with equilibrium diagnostics.
    Diagnose(DiagnoseArgs),
    /// Analytic sequences that separate regret from equilibrium.
    Counterexample(CounterexampleArgs),
    /// Write a generated stream as CSV.
    Simulate(SimulateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Debias(_) => "debias",
            Command::Multigroup(_) => "multigroup",
            Command::TrackQuantile(_) => "track-quantile",
            Command::Ensemble(_) => "ensemble",
            Command::Elo(_) => "elo",
            Command::Diagnose(_) => "diagnose",
            Command::Counterexample(_) => "counterexample",
            Command::Simulate(_) => "simulate",
        }
    }

    fn source(&self) -> &Source {
        match self {
            Command::Debias(a) => &a.source,
            Command::Multigroup(a) => &a.source,
            Command::TrackQuantile(a) => &a.source,
            Command::Ensemble(a) => &a.source,
            Command::Elo(a) => &a.source,
            Command::Diagnose(a) => &a.source,
            Command::Counterexample(a) => &a.source,
            Command::Simulate(a) => &a.source,
        }
    }

    fn wants_battles(&self) -> bool {
        matches!(self, Command::Elo(_))
    }

    fn needs_input(&self) -> bool {
        match self {
            Command::Counterexample(a) => a.name == ConstructionName::ZeroRegretBias,
            _ => true,
        }
    }
}

enum Input {
    None,
    Stream(StreamFile),
    Battles(BattleFile),
}

/// Files and JSON produced by one run.
struct Outcome {
    files: Vec<(&'static str, Vec<u8>)>,
    result: Value,
    bound_satisfaction_fraction: Option<f64>,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Self {
            files: Vec::new(),
            result,
            bound_satisfaction_fraction: None,
        }
    }

    fn file(mut self, name: &'static str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Self> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.push((name, buf));
        Ok(self)
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Self { code: EXIT_CONFIG, error }
    }

    fn classify(error: Error) -> Self {
        let code = match &error {
            Error::AtStep { .. }
            | Error::NonConvergence(_)
            | Error::ScheduleExhausted(_)
            | Error::NonPositiveWeights
            | Error::NonConstantSchedule
            | Error::MissingRecord(_)
            | Error::UseProx
            | Error::Io(_) => EXIT_RUNTIME,
            _ => EXIT_CONFIG,
        };
        Self { code, error }
    }

    fn report(&self) {
        eprintln!("error: {}", self.error);
        if let Some(t) = self.error.timestep() {
            eprintln!("failing timestep: {t}");
        }
    }
}

/// Parse `args` (program name first), run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            f.report();
            f.code
        }
    }
}

fn run(cmd: &Command) -> std::result::Result<(), Failure> {
    let plan = plan_runs(cmd).map_err(Failure::config)?;
    let source = cmd.source();
    if source.parallel && plan.len() > 1 {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = plan.iter().map(|(seed, dir)| s.spawn(move || execute(cmd, *seed, dir))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Failure::classify(Error::InvalidConfig("worker panicked".into())))))
                .collect()
        });
        let mut worst: Option<Failure> = None;
        for r in results {
            if let Err(f) = r {
                f.report();
                if worst.as_ref().is_none_or(|w| f.code > w.code) {
                    worst = Some(f);
                }
            }
        }
        match worst {
            Some(f) => Err(Failure {
                code: f.code,
                error: Error::InvalidConfig(format!("at least one repeated run failed ({})", f.error)),
            }),
            None => Ok(()),
        }
    } else {
        for (seed, dir) in &plan {
            execute(cmd, *seed, dir)?;
        }
        Ok(())
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidConfig(format!("{SEED_ENV}: {e}"))),
    }
}

fn read_spec(path: &Path) -> Result<StreamSpec> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Seeds and output directories of every run.
fn plan_runs(cmd: &Command) -> Result<Vec<(Option<u64>, PathBuf)>> {
    let src = cmd.source();
    if src.repeat == 0 {
        return Err(Error::InvalidConfig("--repeat must be at least 1".into()));
    }
    if cmd.needs_input() && src.input.is_none() && src.spec.is_none() {
        return Err(Error::InvalidConfig(format!("{} needs --input or --spec", cmd.name())));
    }
    if matches!(cmd, Command::Simulate(_)) && src.spec.is_none() {
        return Err(Error::InvalidConfig("simulate needs --spec".into()));
    }
    if src.repeat > 1 && src.spec.is_none() {
        return Err(Error::InvalidConfig("--repeat needs a generator --spec so that runs differ".into()));
    }
    let seed = match &src.spec {
        Some(path) => {
            let spec = read_spec(path)?;
            Some(env_seed()?.or(src.seed).unwrap_or(spec.seed))
        }
        None => None,
    };
    if src.repeat == 1 {
        return Ok(vec![(seed, src.output_dir.clone())]);
    }
    let base = seed.unwrap_or(0);
    Ok((0..src.repeat)
        .map(|r| (Some(base.wrapping_add(r as u64)), src.output_dir.join(format!("run-{r:03}"))))
        .collect())
}

/// Labels `1, 2, ...` used for generated groups and models.
pub fn default_labels(d: usize) -> Vec<String> {
    (1..=d).map(|j| j.to_string()).collect()
}

fn load(cmd: &Command, seed: Option<u64>) -> Result<Input> {
    let src = cmd.source();
    if !cmd.needs_input() && src.input.is_none() && src.spec.is_none() {
        return Ok(Input::None);
    }
    if let Some(path) = &src.input {
        return Ok(if cmd.wants_battles() {
            Input::Battles(io::read_battles_path(path)?)
        } else {
            Input::Stream(io::read_stream_path(path)?)
        });
    }
    let path = src.spec.as_ref().ok_or_else(|| Error::InvalidConfig("missing --spec".into()))?;
    let mut spec = read_spec(path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let StreamKind::BradleyTerry { strengths, .. } = &spec.kind {
        let names = default_labels(strengths.len());
        return Ok(Input::Battles(BattleFile {
            battles: datagen::generate_battles(&spec)?,
            names,
        }));
    }
    if cmd.wants_battles() {
        return Err(Error::InvalidConfig("elo needs a bradley-terry spec".into()));
    }
    Ok(Input::Stream(generated_stream(&spec)?))
}

/// A generated stream in the same shape as an ingested one.
pub fn generated_stream(spec: &StreamSpec) -> Result<StreamFile> {
    let records = datagen::generate(spec)?;
    let d = records.first().and_then(|r| r.z.as_ref()).map_or(0, Vec::len);
    Ok(StreamFile {
        records,
        labels: default_labels(d),
        groups: d > 0,
        warnings: Vec::new(),
    })
}

fn execute(cmd: &Command, seed: Option<u64>, dir: &Path) -> std::result::Result<(), Failure> {
    let start = Instant::now();
    let input = load(cmd, seed).map_err(Failure::config)?;
    let outcome = dispatch(cmd, input).map_err(Failure::classify)?;
    let runtime = start.elapsed().as_secs_f64();
    write_outputs(cmd, seed, dir, outcome, runtime).map_err(Failure::classify)
}

fn write_outputs(cmd: &Command, seed: Option<u64>, dir: &Path, outcome: Outcome, runtime: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<&str> = Vec::new();
    for (name, bytes) in &outcome.files {
        std::fs::write(dir.join(name), bytes)?;
        files.push(name);
    }
    let summary = json!({
        "command": cmd.name(),
        "result": outcome.result,
        "bound_satisfaction_fraction": outcome.bound_satisfaction_fraction,
        "runtime_seconds": runtime,
        "files": files,
        "provenance": {
            "toolkit": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": cmd,
        },
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

fn expect_stream(input: Input) -> Result<StreamFile> {
    match input {
        Input::Stream(s) => Ok(s),
        Input::Battles(_) => Err(Error::InvalidConfig("this command needs a record stream, not battles".into())),
        Input::None => Err(Error::InvalidConfig("this command needs --input or --spec".into())),
    }
}

fn guarantee(b: Option<f64>, delta: Option<f64>) -> Result<Option<SquaredGuarantee>> {
    match (b, delta) {
        (Some(b), Some(delta)) => Ok(Some(SquaredGuarantee { b, delta })),
        (None, None) => Ok(None),
        _ => Err(Error::InvalidConfig("--b and --delta must be given together".into())),
    }
}

fn require(v: Option<f64>, flag: &str) -> Result<f64> {
    v.ok_or_else(|| Error::InvalidConfig(format!("missing required flag --{flag}")))
}

fn pipeline_outcome(mut run: PipelineRun, stream_warnings: Vec<String>) -> Result<Outcome> {
    run.warnings.extend(stream_warnings);
    let summary = run.summary();
    let mut out = Outcome::new(serde_json::to_value(&summary)?).file("metrics.csv", |b| run.write_metrics_csv(b))?;
    if !run.groups.is_empty() {
        out = out.file("groups.csv", |b| run.write_groups_csv(b))?;
    }
    out.bound_satisfaction_fraction = summary.bound_satisfaction_fraction;
    Ok(out)
}

fn dispatch(cmd: &Command, input: Input) -> Result<Outcome> {
    match cmd {
        Command::Debias(a) => {
            let s = expect_stream(input)?;
            let run = match a.kind {
                Kind::Regression => pipelines::debias_regression(&s.records, a.eta, guarantee(a.b, a.delta)?)?,
                Kind::Classification => pipelines::debias_classification(&s.records, a.eta, a.epsilon)?,
            };
            pipeline_outcome(run, s.warnings)
        }
        Command::Multigroup(a) => {
            let s = expect_stream(input)?;
            if s.labels.is_empty() {
                return Err(Error::Input {
                    row: 0,
                    message: "multigroup needs `group:*` or `z:*` columns".into(),
                });
            }
            let lambda = match (a.lambda, a.lambda_preset) {
                (Some(l), _) => Some(l),
                (None, Some(Preset::InvSqrtT)) => Some(pipelines::lambda_preset(LambdaPreset::InvSqrtT, s.records.len())),
                (None, Some(Preset::InvT)) => Some(pipelines::lambda_preset(LambdaPreset::InvT, s.records.len())),
                (None, None) => None,
            };
            let run = match (lambda, a.kind) {
                (Some(l), Kind::Regression) => pipelines::decorrelate_ridge(&s.records, a.eta, l, require(a.b, "b")?, require(a.c, "c")?)?,
                (Some(l), Kind::Classification) => pipelines::decorrelate_lasso_logistic(&s.records, a.eta, l, require(a.c, "c")?)?,
                (None, kind) => {
                    let layout = GroupLayout::new(s.labels.clone(), !a.overlapping);
                    match kind {
                        Kind::Regression => pipelines::multigroup_regression(&s.records, &layout, a.eta, guarantee(a.b, a.delta)?)?,
                        Kind::Classification => pipelines::multigroup_classification(&s.records, &layout, a.eta, a.epsilon)?,
                    }
                }
            };
            pipeline_outcome(run, s.warnings)
        }
        Command::TrackQuantile(a) => {
            let s = expect_stream(input)?;
            let run = pipelines::quantile_track(&s.records, a.tau, a.eta, a.b)?;
            pipeline_outcome(run, s.warnings)
        }
        Command::Ensemble(a) => {
            let s = expect_stream(input)?;
            let config = EnsembleConfig {
                tau: a.tau,
                nus: a.nus.clone(),
                nu_ens: a.nu_ens,
            };
            let ens = pipelines::quantile_ensemble(&s.records, &config)?;
            let extra = json!({
                "expert_rates": a.nus,
                "expert_coverage": ens.expert_coverage,
                "expert_coverage_gap": ens.expert_gaps(a.tau),
                "expert_pinball": ens.expert_pinball,
                "ensemble_pinball": ens.ensemble_pinball,
                "final_weights": ens.weights().last(),
            });
            let mut out = pipeline_outcome(ens.run.clone(), s.warnings)?;
            if let (Value::Object(m), Value::Object(e)) = (&mut out.result, extra) {
                m.extend(e);
            }
            out.file("experts.csv", |b| write_experts_csv(b, &ens))
        }
        Command::Elo(a) => {
            let bf = match input {
                Input::Battles(b) => b,
                _ => return Err(Error::InvalidConfig("elo needs a battle file or a bradley-terry spec".into())),
            };
            let run = pipelines::elo_run(&bf.battles, bf.names.len(), StepSchedule::constant(a.eta), a.lasso)?;
            let names = bf.names.clone();
            let models: Vec<Value> = (0..names.len())
                .map(|m| {
                    json!({
                        "model": names[m],
                        "score": run.table.scores[m],
                        "count": run.table.counts[m],
                        "signed_bias": run.table.signed_bias(m),
                        "raw_bias": run.table.raw_bias(m),
                    })
                })
                .collect();
            let max_signed = (0..names.len()).filter_map(|m| run.table.signed_bias(m)).map(f64::abs).reduce(f64::max);
            Outcome::new(json!({
                "battles": run.rows.len(),
                "max_abs_signed_bias": max_signed,
                "models": models,
            }))
            .file("metrics.csv", |b| run.write_metrics_csv(b, Some(&names)))?
            .file("elo.csv", |b| run.table.write_csv(b, Some(&names)))
        }
        Command::Diagnose(a) => diagnose(a, expect_stream(input)?),
        Command::Counterexample(a) => {
            let c = construction(a, input)?;
            let measured = c.measure()?;
            Outcome::new(json!({
                "name": c.name,
                "analytic": c.analytic,
                "measured": measured,
                "avg_gradient": measured.avg_gradient_norm,
                "avg_regret": measured.avg_regret,
            }))
            .file("metrics.csv", |b| c.trajectory().write_csv(b))
        }
        Command::Simulate(_) => match input {
            Input::Stream(s) => {
                let prefix = if s.groups { "group" } else { "z" };
                Outcome::new(json!({ "records": s.records.len(), "labels": s.labels }))
                    .file("stream.csv", |b| io::write_stream(b, &s.records, &s.labels, prefix))
            }
            Input::Battles(bf) => Outcome::new(json!({ "battles": bf.battles.len(), "models": bf.names.len() }))
                .file("battles.csv", |b| io::write_battles(b, &bf.battles, &bf.names)),
            Input::None => Err(Error::InvalidConfig("simulate needs --spec".into())),
        },
    }
}

fn write_experts_csv(out: &mut Vec<u8>, ens: &pipelines::EnsembleRun) -> Result<()> {
    let k = ens.expert_thetas.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("weight_{j}")));
    header.extend((1..=k).map(|j| format!("theta_{j}")));
    w.write_record(&header)?;
    for (i, (wt, th)) in ens.weights().iter().zip(&ens.expert_thetas).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(wt.iter().map(f64::to_string));
        row.extend(th.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn construction(a: &CounterexampleArgs, input: Input) -> Result<Construction> {
    match a.name {
        ConstructionName::NrNotGeqAbs => counterexamples::nr_not_geq_abs(a.t),
        ConstructionName::GeqNotNrAbs => counterexamples::geq_not_nr_abs(a.t, a.c),
        ConstructionName::NrNotGeqSquared => counterexamples::nr_not_geq_squared(a.a, a.b, a.n, a.m, a.reps),
        ConstructionName::ZeroRegretBias => {
            let s = expect_stream(input)?;
            let ys: Vec<f64> = s.records.iter().map(|r| r.y).collect();
            counterexamples::zero_regret_bias(&ys)
        }
        ConstructionName::Spiral => {
            let theta1: [f64; 2] = a
                .theta1
                .as_slice()
                .try_into()
                .map_err(|_| Error::InvalidConfig("--theta1 must have two entries for the spiral".into()))?;
            counterexamples::spiral_zero_curvature(theta1, a.eta, a.l, a.t)
        }
    }
}

fn diagnose_losses(a: &DiagnoseArgs, s: &StreamFile) -> Result<Vec<LossInstance>> {
    let penalty = match a.reg {
        RegArg::L1 => Some(Regularizer::L1 {
            lambda: require(a.lambda, "lambda")?,
        }),
        RegArg::L2Half => Some(Regularizer::L2Half {
            lambda: require(a.lambda, "lambda")?,
        }),
        RegArg::L2Full => Some(Regularizer::L2Full {
            lambda: require(a.lambda, "lambda")?,
        }),
        _ => None,
    };
    s.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let feature = || {
                r.z.clone().ok_or(Error::Input {
                    row: i + 1,
                    message: "GLM losses need `z:*` or `group:*` columns".into(),
                })
            };
            let loss = match a.loss {
                LossArg::Squared => LossInstance::squared(r.y),
                LossArg::Absolute => LossInstance::absolute(r.y),
                LossArg::Quantile => LossInstance::quantile(a.tau, r.y),
                LossArg::Logistic => LossInstance::gen_logistic(a.range_a, a.range_b, r.y),
                LossArg::GlmLinear => LossInstance::glm_linear(feature()?, r.y),
                LossArg::GlmLogistic => LossInstance::glm_logistic(a.range_a, a.range_b, feature()?, r.y),
            }
            .with_base(r.f);
            Ok(match penalty {
                Some(p) if !a.prox => loss.with_reg(p),
                _ => loss,
            })
        })
        .collect()
}

fn diagnose(a: &DiagnoseArgs, s: StreamFile) -> Result<Outcome> {
    let losses = diagnose_losses(a, &s)?;
    let dim = losses.first().map_or(1, LossInstance::dim);
    let schedule = match a.c {
        Some(c) => StepSchedule::polynomial(c, a.alpha),
        None => StepSchedule::constant(a.eta),
    };
    let mirror = match a.mirror {
        MirrorArg::Identity => MirrorMap::Identity,
        MirrorArg::Entropy => MirrorMap::NegativeEntropy,
    };
    let theta1 = match &a.theta1 {
        Some(t) => t.clone(),
        None if mirror == MirrorMap::NegativeEntropy => vec![1.0 / dim as f64; dim],
        None => vec![0.0; dim],
    };
    let state_reg = match a.reg {
        RegArg::Simplex => Regularizer::Simplex,
        RegArg::L2Ball => Regularizer::L2Ball {
            radius: require(a.radius, "radius")?,
        },
        RegArg::L1 if a.prox => Regularizer::L1 {
            lambda: require(a.lambda, "lambda")?,
        },
        RegArg::L2Half if a.prox => Regularizer::L2Half {
            lambda: require(a.lambda, "lambda")?,
        },
        RegArg::L2Full if a.prox => Regularizer::L2Full {
            lambda: require(a.lambda, "lambda")?,
        },
        _ => Regularizer::None,
    };
    let bound_id = a.bound.as_deref().map(str::parse::<BoundId>).transpose()?;
    if bound_id.is_some() && mirror == MirrorMap::NegativeEntropy && state_reg != Regularizer::Simplex {
        return Err(Error::Unsupported(
            "no bound is available for the entropic mirror map without the simplex constraint".into(),
        ));
    }
    let state = LearnerState::new(theta1, schedule).with_mirror(mirror).with_reg(state_reg);
    state.validate()?;

    let traj = run_stream(&losses, state)?;
    let mut report = equilibrium::avg_gradient(&traj)?;
    if let Some(id) = bound_id {
        let logistic = matches!(a.loss, LossArg::Logistic | LossArg::GlmLogistic);
        let params = BoundParams {
            eta: (a.c.is_none()).then_some(a.eta),
            lipschitz: a.lipschitz,
            horizon: a.horizon,
            a: logistic.then_some(a.range_a),
            b: a.b.or(logistic.then_some(a.range_b)),
            delta: a.delta,
            epsilon: a.epsilon,
            c: a.bound_c.or(a.c),
            alpha: a.c.is_some().then_some(a.alpha),
            lambda: a.lambda,
            dim: Some(dim as f64),
        };
        report.attach_bound(equilibrium::bound_eval(&traj, id, &params)?)?;
    }
    let regret = if a.regret {
        Some(equilibrium::regret(&traj, &losses)?)
    } else {
        None
    };
    let nmr = match a.nmr_radius {
        Some(r) => Some(equilibrium::nmr_estimate(&traj, &losses, r, a.nmr_grid)?),
        None => None,
    };
    let summary = report.summary();
    let mut out = Outcome::new(json!({
        "report": summary,
        "avg_gradient": equilibrium::mean_gradient(&traj.grads),
        "first_identity_violation": equilibrium::first_violation(&report.identity_residual, 1e-9),
        "final_theta": traj.last_theta(),
        "regret": regret,
        "nmr": nmr,
        "warnings": s.warnings,
    }))
    .file("metrics.csv", |b| report.write_csv(b))?
    .file("trajectory.csv", |b| traj.write_csv(b))?;
    out.bound_satisfaction_fraction = summary.bound_satisfaction_fraction;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("geq").chain(args.iter().copied()))
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flags_and_missing_values_are_rejected() {
        assert!(parse(&["debias", "--input", "x.csv", "--etaa", "0.1"]).is_err());
        assert!(parse(&["counterexample"]).is_err());
        assert!(parse(&["debias", "--input", "a", "--spec", "b"]).is_err());
        assert_eq!(main_with_args(["geq", "debias", "--bogus"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["geq", "debias"]), EXIT_CONFIG);
    }

    #[test]
    fn negative_values_parse() {
        let cli = parse(&["counterexample", "--name", "nr-not-geq-squared", "--a", "-1", "--b", "2"]).unwrap();
        match cli.command {
            Command::Counterexample(a) => {
                assert_eq!(a.a, -1.0);
                assert_eq!(a.name, ConstructionName::NrNotGeqSquared);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn failure_codes() {
        assert_eq!(Failure::classify(Error::InvalidParameter("x".into())).code, EXIT_CONFIG);
        assert_eq!(Failure::classify(Error::NonPositiveWeights.at(7)).code, EXIT_RUNTIME);
        assert_eq!(Failure::classify(Error::NonConvergence("x".into())).code, EXIT_RUNTIME);
    }

    #[test]
    fn config_echo_is_tagged() {
        let cli = parse(&["track-quantile", "--input", "s.csv", "--tau", "0.1"]).unwrap();
        let v = serde_json::to_value(&cli.command).unwrap();
        assert_eq!(v["command"], "track-quantile");
        assert_eq!(v["tau"], 0.1);
        assert_eq!(v["input"], "s.csv");
    }
}
