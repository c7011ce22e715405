//! Command-line front end: `run`, `barycenter` and `check`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fairbads::central::{barycenter_update, pad_particles, weighted_mean_set, BarycenterConfig, Divergence, FChoice, KdeConfig};
use fairbads::io::{particles_to_csv, read_particles};
use fairbads::runner::ExperimentConfig;
use fairbads::theory::{bounds_suite, padding_suite, SuiteSummary};
use fairbads::{Experiment, ParticleSet};
use tempfile::NamedTempFile;

/// Failure of a command, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<fairbads::Error> for CliError {
    fn from(e: fairbads::Error) -> Self {
        use fairbads::Error as E;
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::Dimension { .. } | E::Size(_) => CliError::Config(e.to_string()),
            E::Io(_) | E::Load(_) => CliError::Io(e.to_string()),
            E::NonFinite(_) | E::NotCheckable(_) => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fairbads", version, about = "Fairness-aware Bayesian data selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one experiment and write its logs.
    Run(RunArgs),
    /// Compute a central particle set from particle CSV files.
    Barycenter(BarycenterArgs),
    /// Run the randomized bound and padding checkers.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub divergence: Option<String>,
    #[arg(long)]
    pub bias_amount: Option<String>,
    #[arg(long)]
    pub particles: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub lambda_fair: Option<String>,
    /// Train without the fairness term.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct BarycenterArgs {
    /// Comma-separated particle CSV files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "w2")]
    pub divergence: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 0.1)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_stab: f64,
    #[arg(long, default_value = "js")]
    pub f_choice: String,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// bounds, padding or all.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// KDE bandwidth used by the divergence estimators.
    #[arg(long, default_value_t = 0.1)]
    pub bandwidth: f64,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, &mut stdout),
        Command::Barycenter(a) => cmd_barycenter(&a, &mut stdout),
        Command::Check(a) => cmd_check(&a, &mut stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("FAIRBADS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("FAIRBADS_THREADS: {raw:?} is not a thread count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(contents).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Resolved configuration of `run`: the file, then flag overrides.
pub fn resolve_run_config(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(&args.config).map_err(|e| io_err(&args.config, e))?;
    let mut cfg = ExperimentConfig::parse_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let overrides = [
        ("divergence", &args.divergence),
        ("bias_amount", &args.bias_amount),
        ("particles", &args.particles),
        ("beta", &args.beta),
        ("epochs", &args.epochs),
        ("seed", &args.seed),
        ("lambda_fair", &args.lambda_fair),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)
                .map_err(|e| CliError::Config(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    if args.baseline {
        cfg.baseline = true;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_run(args: &RunArgs, out: &mut impl Write) -> CliResult<i32> {
    let cfg = resolve_run_config(args)?;
    let exp = Experiment::from_config(cfg.clone())?;
    fs::create_dir_all(args.out.join("particles_final")).map_err(|e| io_err(&args.out, e))?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut log = NamedTempFile::new_in(&args.out).map_err(|e| io_err(&metrics_path, e))?;
    let append = |line: String, log: &mut NamedTempFile| -> CliResult<()> {
        writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| io_err(&metrics_path, e))
    };

    let mut state = exp.init_run()?;
    append(state.history[0].to_json_line(), &mut log)?;
    let mut failure = None;
    for _ in 0..cfg.epochs {
        if let Err(e) = exp.train_epoch(&mut state) {
            failure = Some(CliError::Runtime(e.to_string()));
            break;
        }
        let line = state.history.last().expect("snapshot after each epoch").to_json_line();
        append(line, &mut log)?;
    }
    log.as_file().sync_all().map_err(|e| io_err(&metrics_path, e))?;
    log.persist(&metrics_path).map_err(|e| io_err(&metrics_path, e.error))?;
    write_atomic(&args.out.join("config_echo"), cfg.echo().as_bytes())?;
    if let Some(e) = failure {
        return Err(e);
    }

    for (s, group) in state.groups.iter().enumerate() {
        let path = args.out.join("particles_final").join(format!("group_{s}.csv"));
        write_atomic(&path, particles_to_csv(group).as_bytes())?;
    }
    write_atomic(&args.out.join("central.csv"), particles_to_csv(&state.central).as_bytes())?;
    let report = serde_json::to_string_pretty(&exp.report(&state))
        .map_err(|e| CliError::Runtime(format!("report: {e}")))?;
    write_atomic(&args.out.join("report.json"), report.as_bytes())?;

    if let Some(last) = state.history.last() {
        let _ = writeln!(
            out,
            "epoch {} acc {:.4} dp {:.4} eo {:.4} weight_distance {:.4}",
            last.epoch, last.acc, last.dp, last.eo, last.w2_weights
        );
    }
    Ok(0)
}

/// Pads every set with trailing zeros to the largest dimension among them.
pub fn pad_to_common_dim(sets: Vec<ParticleSet>) -> CliResult<Vec<ParticleSet>> {
    let min = sets.iter().map(|s| s.dim()).min().unwrap_or(0);
    let max = sets.iter().map(|s| s.dim()).max().unwrap_or(0);
    sets.iter()
        .map(|s| pad_particles(s, min, max - min).map_err(CliError::from))
        .collect()
}

pub fn cmd_barycenter(args: &BarycenterArgs, out: &mut impl Write) -> CliResult<i32> {
    let divergence: Divergence = args
        .divergence
        .parse()
        .map_err(|e: fairbads::Error| CliError::Config(format!("--divergence: {e}")))?;
    let f_choice: FChoice = args
        .f_choice
        .parse()
        .map_err(|e: fairbads::Error| CliError::Config(format!("--f-choice: {e}")))?;
    let kde = KdeConfig::new(args.bandwidth, args.eps_stab).map_err(|e| CliError::Config(e.to_string()))?;
    let sets = args
        .inputs
        .iter()
        .map(|p| read_particles::<f64>(p).map_err(|e| CliError::Config(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let m = sets[0].len();
    if let Some((path, s)) = args.inputs.iter().zip(&sets).find(|(_, s)| s.len() != m) {
        return Err(CliError::Config(format!(
            "{}: {} particles, but {} has {m}",
            path.display(),
            s.len(),
            args.inputs[0].display()
        )));
    }
    let groups = pad_to_common_dim(sets)?;
    let cfg = BarycenterConfig::new(divergence).with_iters(args.iters).with_step(args.step).with_f(f_choice);
    let start = weighted_mean_set(&groups, &cfg.weights(groups.len())?)?;
    let update = barycenter_update(&groups, &start, &cfg, &kde)?;
    if !update.central.is_finite() {
        return Err(CliError::Runtime("central particles became non-finite".into()));
    }
    write_atomic(&args.out, particles_to_csv(&update.central).as_bytes())?;
    let _ = writeln!(out, "objective {}", update.final_objective());
    Ok(0)
}

fn print_summary(out: &mut impl Write, name: &str, s: &SuiteSummary) {
    let _ = writeln!(out, "{name}: {} trials, {} PASS, {} FAIL", s.trials, s.passed, s.failed);
    if !s.failures.is_empty() {
        let _ = writeln!(out, "{name}: failing trials {:?}", s.failures);
    }
}

pub fn cmd_check(args: &CheckArgs, out: &mut impl Write) -> CliResult<i32> {
    let (bounds, padding) = match args.suite.as_str() {
        "bounds" => (true, false),
        "padding" => (false, true),
        "all" => (true, true),
        other => {
            return Err(CliError::Config(format!("--suite: unknown suite {other:?} (expected bounds|padding|all)")))
        }
    };
    if args.trials == 0 {
        return Err(CliError::Config("no trials".into()));
    }
    let kde = KdeConfig::new(args.bandwidth, 1e-3).map_err(|e| CliError::Config(format!("--bandwidth: {e}")))?;
    let mut failed = 0;
    if bounds {
        let (summary, _) = bounds_suite(args.trials, args.seed, &kde)?;
        print_summary(out, "bounds", &summary);
        failed += summary.failed;
    }
    if padding {
        let (summary, _) = padding_suite(args.trials, args.seed, &kde)?;
        print_summary(out, "padding", &summary);
        failed += summary.failed;
    }
    Ok(if failed == 0 { 0 } else { 2 })
}
