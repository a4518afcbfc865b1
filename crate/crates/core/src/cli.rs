//! The `seqconf` command line.
//!
//! Every command writes into an output directory together with a
//! `manifest.json` describing the invocation. `seqconf rerun <manifest>`
//! replays it; outputs are a pure function of flags, inputs and seed, so a
//! replay reproduces them byte for byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, CalibratedModel, ConformalConfig, Method};
use crate::datagen::{generate, read_jsonl, write_jsonl, GenConfig, PositionLaw};
use crate::domain::Trajectory;
use crate::error::{Error, Result};
use crate::eval::{self, RecoveryModel};
use crate::par;
use crate::rng;
use crate::scoring::{
    check_monotone, scorer_metrics, tune_scorer, AggregatorConfig, SyntheticScorerConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREADS_ENV: &str = "SEQCONF_THREADS";

/// Trajectories checked for monotonicity before calibrating a filtration.
const MONOTONE_PROBE: usize = 32;

#[derive(Parser, Debug, Clone, Serialize, Deserialize)]
#[command(
    name = "seqconf",
    version,
    about = "Conformal localization of decisive error steps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic labeled, scored dataset.
    Generate(GenerateArgs),
    /// Calibrate a conformal threshold on labeled data.
    Calibrate(CalibrateArgs),
    /// Predict sets with a calibrated model.
    Predict(PredictArgs),
    /// Repeated random-split evaluation.
    Evaluate(EvaluateArgs),
    /// Empirical coverage against target coverage over an α grid.
    CoverageCurve(CurveArgs),
    /// Simulated rollback against the Top-1 baseline.
    RollbackSim(RollbackArgs),
    /// Replay the command recorded in a manifest.
    Rerun(RerunArgs),
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_density(s: &str) -> std::result::Result<PositionLaw, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub len_min: usize,
    #[arg(long, default_value_t = 12)]
    pub len_max: usize,
    /// Where decisive errors fall: uniform, left, mid or right.
    #[arg(long, default_value = "uniform", value_parser = parse_density)]
    pub density: PositionLaw,
    /// Tune the synthetic scorer to this step-level AUROC.
    #[arg(long, conflicts_with = "near_oracle")]
    pub auroc: Option<f64>,
    /// Use an almost perfect scorer instead of a tuned one.
    #[arg(long)]
    pub near_oracle: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AggArgs {
    /// Interval aggregator: sum, max or lse.
    #[arg(long = "agg", default_value = "sum", value_parser = ["sum", "max", "lse"])]
    pub agg: String,
    /// Width penalty of the max aggregator.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Temperature of the log-sum-exp aggregator.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

impl AggArgs {
    pub fn config(&self) -> Result<AggregatorConfig> {
        let cfg = match self.agg.as_str() {
            "sum" => AggregatorConfig::SumNorm,
            "max" => AggregatorConfig::MaxPenalty {
                lambda: self.lambda,
            },
            "lse" => AggregatorConfig::LogSumExp { beta: self.beta },
            other => return Err(Error::Config(format!("unknown aggregator `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TuningArgs {
    #[command(flatten)]
    pub agg: AggArgs,
    /// Upper end of the tie-breaking jitter added to calibration scores.
    #[arg(long, default_value_t = crate::conformal::DEFAULT_JITTER)]
    pub jitter: f64,
    /// Evaluate every suffix/prefix instead of trusting monotonicity.
    #[arg(long)]
    pub no_monotone_shortcut: bool,
    /// Leave empty TWF sets empty.
    #[arg(long)]
    pub no_twf_fallback: bool,
}

impl TuningArgs {
    pub fn config(&self, method: Method, alpha: f64, seed: u64) -> Result<ConformalConfig> {
        let cfg = ConformalConfig {
            method,
            alpha,
            aggregator: self.agg.config()?,
            jitter_epsilon: self.jitter,
            seed,
            assume_monotone: !self.no_monotone_shortcut,
            twf_fallback: !self.no_twf_fallback,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Labeled JSONL calibration data.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub alpha: f64,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PredictArgs {
    /// JSONL trajectories with scores; labels are ignored.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model written by `calibrate`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 1000)]
    pub splits: usize,
    /// Fraction of each split used for calibration.
    #[arg(long, default_value_t = 0.5)]
    pub split_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// One or more methods, comma separated.
    #[arg(long = "method", value_delimiter = ',', default_value = "lf", value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub alpha: f64,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CurveArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "method", value_delimiter = ',', default_value = "vcp,lf,rf,twf", value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// α grid, comma separated. Defaults to 0.05, 0.10, …, 0.95.
    #[arg(long = "alpha", value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RollbackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "lf", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Simulated success probability when the rollback covers the error.
    #[arg(long, default_value_t = 0.85)]
    pub p_cov: f64,
    /// Simulated success probability otherwise.
    #[arg(long, default_value_t = 0.35)]
    pub p_uncov: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, enough to replay the run.
    pub argv: Vec<String>,
    pub config: Command,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_secs: f64,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Calibrate(_) => "calibrate",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::CoverageCurve(_) => "coverage-curve",
            Command::RollbackSim(_) => "rollback-sim",
            Command::Rerun(_) => "rerun",
        }
    }

    fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::Generate(a) => Some(&a.out),
            Command::Calibrate(a) => Some(&a.out),
            Command::Predict(a) => Some(&a.out),
            Command::Evaluate(a) => Some(&a.out),
            Command::CoverageCurve(a) => Some(&a.out),
            Command::RollbackSim(a) => Some(&a.out),
            Command::Rerun(_) => None,
        }
    }

    fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::Generate(a) => a.out = dir,
            Command::Calibrate(a) => a.out = dir,
            Command::Predict(a) => a.out = dir,
            Command::Evaluate(a) => a.out = dir,
            Command::CoverageCurve(a) => a.out = dir,
            Command::RollbackSim(a) => a.out = dir,
            Command::Rerun(_) => {}
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Generate(a) => Some(a.seed),
            Command::Calibrate(a) => Some(a.seed),
            Command::Evaluate(a) => Some(a.split.seed),
            Command::CoverageCurve(a) => Some(a.split.seed),
            Command::RollbackSim(a) => Some(a.split.seed),
            Command::Predict(_) | Command::Rerun(_) => None,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Generate(_) | Command::Rerun(_) => vec![],
            Command::Calibrate(a) => vec![a.input.clone()],
            Command::Predict(a) => vec![a.input.clone(), a.model.clone()],
            Command::Evaluate(a) => vec![a.input.clone()],
            Command::CoverageCurve(a) => vec![a.input.clone()],
            Command::RollbackSim(a) => vec![a.input.clone()],
        }
    }
}

/// Runs the CLI on full `argv` (program name first) and returns the exit code:
/// 0 on success, 2 on usage errors, 1 on runtime errors. Failures are reported
/// on stderr as one JSON object.
pub fn main_with_args(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_failure("usage", &e.render().to_string(), 2);
            return 2;
        }
    };
    if let Err(e) = configure_threads() {
        let code = exit_code(&e);
        report_failure(error_kind(&e), &e.to_string(), code);
        return code;
    }
    match run(cli.command, argv.get(1..).unwrap_or_default().to_vec()) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            report_failure(error_kind(&e), &e.to_string(), code);
            code
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Error::Config(format!(
            "{THREADS_ENV} must be a non-negative integer, got `{raw}`"
        ))
    })?;
    // A second initialization (e.g. several runs in one process) is harmless.
    if let Err(e) = par::init_threads(n) {
        log::debug!("worker pool already configured: {e}");
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "usage",
        Error::Precondition(_) => "precondition",
        Error::Unlabeled { .. } => "unlabeled",
        Error::MissingScores { .. } => "missing_scores",
        Error::Empty(_) => "empty",
        Error::OutOfBounds { .. } => "out_of_bounds",
        Error::Unattainable { .. } => "unattainable",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn report_failure(kind: &str, message: &str, code: i32) {
    let body =
        serde_json::json!({ "error": kind, "message": message.trim_end(), "exit_code": code });
    eprintln!("{body}");
}

/// Executes `command`. `argv` (without the program name) is recorded in the
/// manifest.
pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    if let Command::Rerun(args) = &command {
        return rerun(args);
    }
    let started = Instant::now();
    let out_dir = command
        .out_dir()
        .expect("non-rerun commands have an output")
        .to_path_buf();
    fs::create_dir_all(&out_dir)?;
    let outputs = match &command {
        Command::Generate(a) => cmd_generate(a)?,
        Command::Calibrate(a) => cmd_calibrate(a)?,
        Command::Predict(a) => cmd_predict(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::CoverageCurve(a) => cmd_coverage_curve(a)?,
        Command::RollbackSim(a) => cmd_rollback_sim(a)?,
        Command::Rerun(_) => unreachable!(),
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        argv,
        seed: command.seed(),
        inputs: command.inputs(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        config: command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)
}

fn rerun(args: &RerunArgs) -> Result<()> {
    let manifest: RunManifest = serde_json::from_reader(File::open(&args.manifest)?)?;
    let mut full = vec!["seqconf".to_string()];
    full.extend(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(&full)
        .map_err(|e| Error::Config(format!("manifest argv does not parse: {e}")))?;
    let mut command = cli.command;
    if matches!(command, Command::Rerun(_)) {
        return Err(Error::Config("a manifest cannot record a rerun".into()));
    }
    let mut argv = manifest.argv;
    if let Some(out) = &args.out {
        command.set_out_dir(out.clone());
        argv = replace_out(&argv, out);
    }
    run(command, argv)
}

/// `argv` with the value of `--out` swapped for `out`.
fn replace_out(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.to_string_lossy().into_owned();
    let mut res = Vec::with_capacity(argv.len());
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            res.push(a.clone());
            res.push(out.clone());
            it.next();
        } else if a.starts_with("--out=") {
            res.push(format!("--out={out}"));
        } else {
            res.push(a.clone());
        }
    }
    res
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_labeled(path: &Path) -> Result<Vec<Trajectory>> {
    let data = read_jsonl(path)?;
    for t in &data {
        t.require_label()?;
    }
    Ok(data)
}

/// Warns when a filtration assumes monotonicity that the data contradicts.
fn warn_if_not_monotone(cfg: &ConformalConfig, data: &[Trajectory]) -> Result<()> {
    if !cfg.assume_monotone || !matches!(cfg.method, Method::Lf | Method::Rf | Method::Twf) {
        return Ok(());
    }
    for t in data.iter().take(MONOTONE_PROBE) {
        let v = check_monotone(&cfg.aggregator, t)?;
        if let Some(first) = v.first() {
            warn!(
                "aggregator `{}` is not monotone on `{}` ({} ⊂ {} but {} > {}); \
                 {} with the monotone shortcut may lose coverage, consider --no-monotone-shortcut",
                cfg.aggregator.name(),
                t.id(),
                first.inner,
                first.outer,
                first.inner_score,
                first.outer_score,
                cfg.method
            );
            break;
        }
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<Vec<&'static str>> {
    let scorer = if a.near_oracle {
        SyntheticScorerConfig::near_oracle()
    } else if let Some(target) = a.auroc {
        tune_scorer(
            target,
            &mut rng::stream(rng::derive_seed_str(a.seed, "tune")),
        )?
    } else {
        SyntheticScorerConfig::default()
    };
    let cfg = GenConfig {
        n: a.n,
        len_min: a.len_min,
        len_max: a.len_max,
        position: a.density,
        scorer,
        seed: a.seed,
    };
    let data = generate(&cfg)?;
    write_jsonl(&data, a.out.join("data.jsonl"))?;
    let summary = serde_json::json!({ "config": cfg, "metrics": scorer_metrics(&data)? });
    write_json(&a.out.join("scorer.json"), &summary)?;
    Ok(vec!["data.jsonl", "scorer.json"])
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<Vec<&'static str>> {
    let cfg = a.tuning.config(a.method, a.alpha, a.seed)?;
    let data = load_labeled(&a.input)?;
    warn_if_not_monotone(&cfg, &data)?;
    let model = calibrate(&cfg, &data)?;
    write_json(&a.out.join("model.json"), &model)?;
    Ok(vec!["model.json"])
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    prediction: crate::conformal::Prediction,
}

fn cmd_predict(a: &PredictArgs) -> Result<Vec<&'static str>> {
    let model: CalibratedModel = serde_json::from_reader(File::open(&a.model)?)?;
    model.config.validate()?;
    let data = read_jsonl(&a.input)?;
    let preds = par::map_indexed(data.len(), |i| model.predict(&data[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(&a.out.join("predictions.jsonl"))?;
    for (t, p) in data.iter().zip(preds) {
        serde_json::to_writer(
            &mut w,
            &PredictionRecord {
                id: t.id(),
                prediction: p,
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(vec!["predictions.jsonl"])
}

fn check_split_args(s: &SplitArgs) -> Result<()> {
    if s.splits == 0 {
        return Err(Error::Config("--splits must be >= 1".into()));
    }
    if !(s.split_fraction > 0.0 && s.split_fraction < 1.0) {
        return Err(Error::Config(format!(
            "--split-fraction must lie in (0, 1), got {}",
            s.split_fraction
        )));
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<Vec<&'static str>> {
    check_split_args(&a.split)?;
    let cfgs = a
        .methods
        .iter()
        .map(|&m| a.tuning.config(m, a.alpha, a.split.seed))
        .collect::<Result<Vec<_>>>()?;
    let data = load_labeled(&a.input)?;
    let mut reports = Vec::with_capacity(cfgs.len());
    for cfg in &cfgs {
        warn_if_not_monotone(cfg, &data)?;
        reports.push(eval::split_eval(
            &data,
            cfg,
            a.split.splits,
            a.split.split_fraction,
            a.split.seed,
        )?);
    }
    let nfe: Vec<_> = eval::count_nfe(&reports)
        .into_iter()
        .map(|(method, nfe_mean)| serde_json::json!({ "method": method, "nfe_mean": nfe_mean }))
        .collect();
    write_json(
        &a.out.join("report.json"),
        &serde_json::json!({ "nfe": nfe, "reports": reports }),
    )?;
    eval::write_splits_csv(&reports, create(&a.out.join("splits.csv"))?)?;
    Ok(vec!["report.json", "splits.csv"])
}

fn cmd_coverage_curve(a: &CurveArgs) -> Result<Vec<&'static str>> {
    check_split_args(&a.split)?;
    let alphas = if a.alphas.is_empty() {
        eval::default_alpha_grid()
    } else {
        a.alphas.clone()
    };
    let methods = &a.methods;
    // Validate every combination before the long run starts.
    for &m in methods {
        for &alpha in &alphas {
            a.tuning.config(m, alpha, a.split.seed)?;
        }
    }
    let data = load_labeled(&a.input)?;
    let base = a.tuning.config(methods[0], alphas[0], a.split.seed)?;
    let points = eval::coverage_curve(
        &data,
        &base,
        methods,
        &alphas,
        a.split.splits,
        a.split.split_fraction,
        a.split.seed,
    )?;
    write_json(&a.out.join("curve.json"), &points)?;
    eval::write_curve_csv(&points, create(&a.out.join("curve.csv"))?)?;
    Ok(vec!["curve.json", "curve.csv"])
}

fn cmd_rollback_sim(a: &RollbackArgs) -> Result<Vec<&'static str>> {
    check_split_args(&a.split)?;
    let cfg = a.tuning.config(a.method, a.alpha, a.split.seed)?;
    let recovery = RecoveryModel {
        p_cov: a.p_cov,
        p_uncov: a.p_uncov,
    };
    recovery.validate()?;
    let data = load_labeled(&a.input)?;
    let reports = eval::rollback_sim(
        &data,
        &cfg,
        a.split.splits,
        a.split.split_fraction,
        &recovery,
        a.split.seed,
    )?;
    write_json(&a.out.join("rollback.json"), &reports)?;
    eval::write_rollback_csv(&reports, create(&a.out.join("rollback.csv"))?)?;
    Ok(vec!["rollback.json", "rollback.csv"])
}
