//! Command-line front end. Flags override the JSON config, which overrides
//! built-in defaults.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{BandwidthSpec, ExperimentConfig, Output, AR1_COVERAGE};
use crate::dataset::{parse_dataset, Dataset, DesignColumns};
use crate::design::{draw_assignment, AssignmentDesign, TreatmentKind};
use crate::error::{Error, ErrorKind, Result};
use crate::hac::{Bandwidth, HacConfig, Kernel};
use crate::harness::{fmt_f64, run_experiment, ExperimentSummary};
use crate::inference::{frt_sharp, InferenceReport};
use crate::regression::{estimate, RegressionSpec};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "SWITCHBACK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "switchback", version, about = "Lagged-effect estimation for switchback experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate lagged effects from a dataset.
    Analyze(AnalyzeArgs),
    /// Generate a dataset from a model config.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo replications of a config.
    Replicate(ExperimentArgs),
    /// Empirical coverage table (defaults to the bundled AR(1) config).
    Coverage(ExperimentArgs),
    /// Randomization test of the sharp null on a dataset.
    Frt(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of lags K.
    #[arg(long)]
    pub lags: Option<usize>,
    /// HAC bandwidth: an integer or "auto" for floor(T^(1/4)).
    #[arg(long)]
    pub bandwidth: Option<Bandwidth>,
    #[arg(long)]
    pub kernel: Option<Kernel>,
    /// Confidence level in (0, 1).
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with columns time, z, y and optionally p or mean, var.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated coefficient indices for the joint Wald test (default: all).
    #[arg(long, value_delimiter = ',')]
    pub joint_lags: Option<Vec<usize>>,
    /// Randomization-test draws (0 skips the test).
    #[arg(long)]
    pub frt_draws: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Horizon T (default: first entry of the config's lengths).
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Output directory; files go to <out>/<name>/.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

fn load_config(path: Option<&Path>, fallback: Option<&str>) -> Result<Option<ExperimentConfig>> {
    match (path, fallback) {
        (Some(p), _) => ExperimentConfig::load(p).map(Some),
        (None, Some(text)) => ExperimentConfig::from_json(text).map(Some),
        (None, None) => Ok(None),
    }
}

fn apply_common(cfg: &mut ExperimentConfig, c: &CommonArgs) -> Result<()> {
    if let Some(k) = c.lags {
        cfg.regression.lags = k;
    }
    if let Some(b) = c.bandwidth {
        cfg.hac.bandwidth = BandwidthSpec::from(b);
    }
    if let Some(k) = c.kernel {
        cfg.hac.kernel = k;
    }
    if let Some(l) = c.level {
        cfg.level = l;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes())?;
            o.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AnalyzeOutput {
    length: usize,
    /// Largest lag `K` in the regression.
    max_lag: usize,
    variant: &'static str,
    /// Mean outcome over control periods (`z = 0`).
    group_a: Option<f64>,
    /// Mean outcome over treated periods (`z = 1`).
    group_b: Option<f64>,
    condition_number: f64,
    #[serde(flatten)]
    report: InferenceReport,
}

fn group_means(ds: &Dataset) -> (Option<f64>, Option<f64>) {
    let mean = |want: f64| {
        let v: Vec<f64> = ds.z.iter().zip(&ds.y).filter(|(z, _)| **z == want).map(|(_, y)| *y).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    (mean(0.0), mean(1.0))
}

fn analysis_inputs(args: &AnalyzeArgs) -> Result<(Dataset, AssignmentDesign, RegressionSpec, HacConfig, f64, u64)> {
    let ds = parse_dataset(&args.data)?;
    let cfg = match load_config(args.common.config.as_deref(), None)? {
        Some(mut c) => {
            apply_common(&mut c, &args.common)?;
            Some(c)
        }
        None => None,
    };
    let design = match ds.design(None)? {
        Some(d) => d,
        None => match &cfg {
            Some(c) => c.design.build(ds.len())?,
            None => {
                return Err(Error::InvalidArgument(
                    "dataset has no p or mean/var columns; pass --config with a design".into(),
                ))
            }
        },
    };
    if design.kind() == TreatmentKind::Binary {
        ds.check_binary()?;
    }
    let spec = match &cfg {
        Some(c) => c.regression.build()?,
        None => {
            let k = args
                .common
                .lags
                .ok_or_else(|| Error::InvalidArgument("--lags is required without --config".into()))?;
            RegressionSpec::full(k)
        }
    };
    let hac = match &cfg {
        Some(c) => c.hac.build()?,
        None => HacConfig {
            bandwidth: args.common.bandwidth.unwrap_or(Bandwidth::FourthRoot),
            kernel: args.common.kernel.unwrap_or(Kernel::Bartlett),
        },
    };
    let level = cfg.as_ref().map_or(args.common.level.unwrap_or(0.95), |c| c.level);
    let seed = cfg.as_ref().map_or(args.common.seed.unwrap_or(0), |c| c.seed);
    Ok((ds, design, spec, hac, level, seed))
}

fn analyze(args: &AnalyzeArgs, force_frt: bool) -> Result<()> {
    let (ds, design, spec, hac, level, seed) = analysis_inputs(args)?;
    let path = ds.path();
    let est = estimate(&ds.y, &path, &design, &spec)?.with_hac(&hac)?;
    let all: Vec<usize> = (0..est.tau_hat.len()).collect();
    let joint = args.joint_lags.clone().unwrap_or(all);
    let mut report = InferenceReport::new(&est, level, Some(&joint))?;
    let draws = args.frt_draws.unwrap_or(if force_frt { 999 } else { 0 });
    if draws > 0 {
        report.frt = Some(frt_sharp(&ds.y, &path, &design, &spec, &hac, &joint, draws, seed)?);
    }
    let (a, b) = group_means(&ds);
    let out = AnalyzeOutput {
        length: ds.len(),
        max_lag: spec.lags,
        variant: spec.variant.name(),
        group_a: a,
        group_b: b,
        condition_number: est.condition_number,
        report,
    };
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&out)? + "\n",
        Format::Csv => analyze_csv(&out)?,
    };
    emit(args.out.as_deref(), &text)
}

fn analyze_csv(out: &AnalyzeOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "estimate", "std_error", "ci_low", "ci_high", "p_value", "degenerate"])?;
    for l in &out.report.lags {
        w.write_record([
            l.label.clone(),
            fmt_f64(l.estimate),
            fmt_f64(l.std_error),
            fmt_f64(l.ci_low),
            fmt_f64(l.ci_high),
            fmt_f64(l.p_value),
            l.degenerate.to_string(),
        ])?;
    }
    if let Some(j) = &out.report.joint {
        w.write_record(["joint_wald".into(), fmt_f64(j.statistic), String::new(), String::new(), String::new(), fmt_f64(j.p_value), String::new()])?;
    }
    if let Some(f) = &out.report.frt {
        w.write_record(["frt".into(), fmt_f64(f.observed), String::new(), String::new(), String::new(), fmt_f64(f.p_value), String::new()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = load_config(args.common.config.as_deref(), None)?
        .ok_or_else(|| Error::InvalidArgument("simulate needs --config".into()))?;
    apply_common(&mut cfg, &args.common)?;
    let len = args.length.unwrap_or(cfg.lengths[0]);
    let model = cfg.model.build(len)?;
    let design = cfg.design.build(len)?;
    let z = draw_assignment(&design, cfg.seed)?;
    let y = model.simulate(&z)?;
    let columns = match design.kind() {
        TreatmentKind::Binary => DesignColumns::Probability(design.means().to_vec()),
        TreatmentKind::Continuous => {
            DesignColumns::Moments { mean: design.means().to_vec(), var: design.variances().to_vec() }
        }
    };
    let ds = Dataset { z: z.values().to_vec(), y, design: columns };
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    emit(args.out.as_deref(), std::str::from_utf8(&buf).expect("utf-8"))
}

fn experiment(args: &ExperimentArgs, coverage: bool) -> Result<()> {
    let fallback = coverage.then_some(AR1_COVERAGE);
    let mut cfg = load_config(args.common.config.as_deref(), fallback)?
        .ok_or_else(|| Error::InvalidArgument("replicate needs --config".into()))?;
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    apply_common(&mut cfg, &args.common)?;
    if coverage && !cfg.wants(Output::Coverage) {
        cfg.outputs.push(Output::Coverage);
    }
    if !coverage && !cfg.wants(Output::Replications) {
        cfg.outputs.push(Output::Replications);
    }
    let summary = run_experiment(&cfg, args.out.as_deref())?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&summary)? + "\n",
        Format::Csv => summary_csv(&summary)?,
    };
    emit(None, &text)
}

fn summary_csv(s: &ExperimentSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["T", "bandwidth", "lag", "tau", "mean_estimate", "sd_estimate", "coverage"])?;
    for l in &s.lengths {
        for (j, label) in s.labels.iter().enumerate() {
            w.write_record([
                l.len.to_string(),
                l.bandwidth.to_string(),
                label.clone(),
                fmt_f64(l.tau[j]),
                fmt_f64(l.mean_tau_hat[j]),
                fmt_f64(l.sd_tau_hat[j]),
                l.coverage.as_ref().map_or(String::new(), |c| fmt_f64(c[j])),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Analyze(a) => analyze(a, false),
        Command::Frt(a) => analyze(a, true),
        Command::Simulate(a) => simulate(a),
        Command::Replicate(a) => experiment(a, false),
        Command::Coverage(a) => experiment(a, true),
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // a second initialization in the same process is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}
