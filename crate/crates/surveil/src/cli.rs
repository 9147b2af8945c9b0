//! Command-line interface. Every analysis subcommand writes a new run
//! directory and prints its manifest path.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use surveil_core::svn::Correction;

use crate::error::{AppError, AppResult};
use crate::jobs;
use crate::runs::{read_manifest, run_dir_of, run_root, Pipeline, RunConfig, RunStatus};

#[derive(Debug, Parser)]
#[command(name = "surveil", version, about = "Insider-trading surveillance on daily transaction panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a transaction CSV (and PSE registry) into a canonical snapshot.
    Ingest(RunArgs),
    /// Generate a synthetic panel with planted insiders.
    Synth(RunArgs),
    /// Dynamic k-means discontinuity detection.
    Kmeans(RunArgs),
    /// Statistically validated network ring detection.
    Svn(RunArgs),
    /// BiCM-validated networks, compared with the SVN clusters.
    Bicm(RunArgs),
    /// SVN with a validation-threshold sweep.
    Sweep(RunArgs),
    /// Merge suspects of completed runs into one ranking.
    Rank(RunArgs),
    /// Compare the cluster partitions of completed runs.
    Compare(RunArgs),
    /// k-means, SVN and BiCM in one run.
    Full(RunArgs),
    /// Re-execute a run from its manifest and check the artifacts match.
    Replay(RunArgs),
    /// Serve completed runs over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (or manifest) supplying inputs; repeat for `compare`.
    #[arg(long)]
    pub run: Vec<PathBuf>,
    /// Transaction CSV.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Trading calendar CSV (column `day`).
    #[arg(long)]
    pub calendar: Option<PathBuf>,
    /// PSE registry CSV.
    #[arg(long)]
    pub pse: Option<PathBuf>,
    /// Planted-truth JSON for precision/recall.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// ISIN of the stock to analyse.
    #[arg(long)]
    pub stock: Option<String>,
    /// bonferroni, fdr or fixed:<p>.
    #[arg(long, value_parser = parse_correction)]
    pub correction: Option<Correction>,
    /// Significance level of the network validation.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Directionality threshold separating buy/sell from mixed days.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Minimum active days for an investor to enter the network.
    #[arg(long)]
    pub min_days: Option<usize>,
    /// k-means window length in trading days.
    #[arg(long)]
    pub window: Option<usize>,
    /// k-means window step in trading days.
    #[arg(long)]
    pub step: Option<usize>,
    /// Seed for every randomized stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Malformed rows tolerated per input file.
    #[arg(long)]
    pub error_budget: Option<usize>,
    /// Run root (default: $SURV_HOME, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Run root (default: $SURV_HOME, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_correction(s: &str) -> Result<Correction, String> {
    s.parse().map_err(|e: surveil_core::Error| e.to_string())
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn require_positive(name: &str, v: f64) -> AppResult<f64> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(AppError::Usage(format!("--{name} must lie in (0, 1], got {v}")))
    }
}

/// Configuration file, then inputs of `--run`, then individual flags.
pub fn build_config(pipeline: Pipeline, args: &RunArgs) -> AppResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match pipeline {
        Pipeline::Rank | Pipeline::Compare => {
            if !args.run.is_empty() {
                cfg.sources = args.run.iter().map(|r| absolute(&run_dir_of(r))).collect();
            }
        }
        _ => {
            if args.run.len() > 1 {
                return Err(AppError::Usage(format!("{} takes a single --run", pipeline.as_str())));
            }
            if let Some(run) = args.run.first() {
                let dir = run_dir_of(run);
                let m = read_manifest(&dir)?;
                if m.status != RunStatus::Complete {
                    return Err(AppError::Data(format!("run {} is not complete", m.run_id)));
                }
                let pick = |name: &str| m.artifact(name).map(|_| absolute(&dir.join(name)));
                cfg.panel = Some(pick("panel.csv").ok_or_else(|| {
                    AppError::Data(format!("run {} holds no panel.csv (use an ingest or synth run)", m.run_id))
                })?);
                cfg.calendar = pick("calendar.csv");
                cfg.pse = pick("pse.csv").or(cfg.pse);
                cfg.truth = pick("truth.json");
            }
        }
    }
    if let Some(p) = &args.panel {
        cfg.panel = Some(p.clone());
    }
    if let Some(p) = &args.calendar {
        cfg.calendar = Some(p.clone());
    }
    if let Some(p) = &args.pse {
        cfg.pse = Some(p.clone());
    }
    if let Some(p) = &args.truth {
        cfg.truth = Some(p.clone());
    }
    for p in [&mut cfg.panel, &mut cfg.calendar, &mut cfg.pse, &mut cfg.truth].into_iter().flatten() {
        *p = absolute(p);
    }
    if let Some(s) = &args.stock {
        cfg.stock = Some(s.clone());
    }
    if let Some(c) = args.correction {
        cfg.svn.correction = c;
        cfg.bicm.correction = c;
    }
    if let Some(a) = args.alpha {
        let a = require_positive("alpha", a)?;
        cfg.svn.alpha = a;
        cfg.bicm.alpha = a;
    }
    if let Some(t) = args.theta {
        if !(0.0..1.0).contains(&t) {
            return Err(AppError::Usage(format!("--theta must lie in [0, 1), got {t}")));
        }
        cfg.svn.theta = t;
    }
    if let Some(d) = args.min_days {
        cfg.svn.min_days = d;
    }
    if let Some(w) = args.window {
        cfg.kmeans.window = w;
    }
    if let Some(s) = args.step {
        cfg.kmeans.step = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = args.error_budget {
        cfg.error_budget = b;
    }
    Ok(cfg.resolved())
}

/// Re-executes a completed run and lists artifacts whose bytes differ.
pub fn replay(run: &Path, out: Option<&Path>) -> AppResult<(PathBuf, Vec<String>)> {
    let dir = run_dir_of(run);
    let old = read_manifest(&dir)?;
    if old.status != RunStatus::Complete {
        return Err(AppError::Data(format!("run {} is not complete", old.run_id)));
    }
    for input in &old.inputs {
        let now = crate::runs::digest_file(&input.role, Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(AppError::Data(format!("input {} changed since run {}", input.path, old.run_id)));
        }
    }
    let root = match out {
        Some(p) => p.to_path_buf(),
        None => dir.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let path = jobs::execute(&root, old.pipeline, &old.config)?;
    let new = read_manifest(&path)?;
    let mut diffs = Vec::new();
    for a in &old.artifacts {
        if new.artifact(&a.path).map(|b| &b.sha256) != Some(&a.sha256) {
            diffs.push(a.path.clone());
        }
    }
    for b in &new.artifacts {
        if old.artifact(&b.path).is_none() {
            diffs.push(b.path.clone());
        }
    }
    Ok((path, diffs))
}

fn dispatch(cli: Cli) -> AppResult<()> {
    let (pipeline, args) = match cli.command {
        Command::Serve(s) => {
            let root = run_root(s.out.as_deref());
            let rt = tokio::runtime::Runtime::new().map_err(AppError::io("tokio runtime"))?;
            return rt.block_on(crate::service::serve(root, s.bind));
        }
        Command::Replay(a) => {
            let [run] = a.run.as_slice() else {
                return Err(AppError::Usage("replay takes exactly one --run".into()));
            };
            let (path, diffs) = replay(run, a.out.as_deref())?;
            println!("{}", path.display());
            if diffs.is_empty() {
                return Ok(());
            }
            return Err(AppError::Data(format!("replay differs in: {}", diffs.join(", "))));
        }
        Command::Ingest(a) => (Pipeline::Ingest, a),
        Command::Synth(a) => (Pipeline::Synth, a),
        Command::Kmeans(a) => (Pipeline::Kmeans, a),
        Command::Svn(a) => (Pipeline::Svn, a),
        Command::Bicm(a) => (Pipeline::Bicm, a),
        Command::Sweep(a) => (Pipeline::Sweep, a),
        Command::Rank(a) => (Pipeline::Rank, a),
        Command::Compare(a) => (Pipeline::Compare, a),
        Command::Full(a) => (Pipeline::Full, a),
    };
    let cfg = build_config(pipeline, &args)?;
    let root = run_root(args.out.as_deref());
    let path = jobs::execute(&root, pipeline, &cfg)?;
    println!("{}", path.display());
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
