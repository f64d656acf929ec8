//! Command-line front end. Every flag can also be set through an
//! `EDGEDRIFT_*` environment variable (e.g. `EDGEDRIFT_SEED`).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::harness::{
    ablation, compare_strategies, gain_cdf, parse_rates, rate_sweep, run_scenario, write_run, write_summary_csv,
    ScenarioConfig, Strategy, StrategyKind,
};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MISSING_FILE: u8 = 3;
pub const EXIT_INVALID_CONFIG: u8 = 4;
pub const EXIT_NON_FINITE: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "edgedrift", version, about = "Edge-cloud drift adaptation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its metrics CSV.
    Run(RunArgs),
    /// Run the scenario once per sampling rate and write a summary CSV.
    Sweep(SweepArgs),
    /// Run the replay ablations and write a summary CSV.
    Ablate(CommonArgs),
    /// Check a scenario file and report every problem found.
    Validate(ValidateArgs),
    /// Run all five strategies and write a comparison plus gain CDF.
    Report(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file, or the name of a shipped scenario (drift_ab, stationary).
    #[arg(long, env = "EDGEDRIFT_SCENARIO")]
    pub scenario: String,
    #[arg(long, env = "EDGEDRIFT_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "EDGEDRIFT_OUT", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, env = "EDGEDRIFT_DURATION_FRAMES")]
    pub duration_frames: Option<u64>,
    #[arg(long, env = "EDGEDRIFT_NOISE_RATE")]
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// edge-only, cloud-only, prompt, ams-like or adaptive.
    #[arg(long, env = "EDGEDRIFT_STRATEGY")]
    pub strategy: Option<StrategyKind>,
    /// Pin the sampling rate (fps) instead of running the controller.
    #[arg(long, env = "EDGEDRIFT_FIXED_RATE")]
    pub fixed_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated rates; `adaptive` selects the controller.
    #[arg(long, env = "EDGEDRIFT_RATES", default_value = "0.1,0.2,0.4,0.8,1.6,2.0,adaptive")]
    pub rates: String,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, env = "EDGEDRIFT_SCENARIO")]
    pub scenario: String,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::Config(_) => EXIT_INVALID_CONFIG,
            Error::NonFinite(_) => EXIT_NON_FINITE,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_FILE,
            _ => EXIT_FAILURE,
        };
        CliError { code, message: e.to_string() }
    }
}

/// Resolves a path or shipped scenario name.
pub fn load_scenario(source: &str) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(source);
    if path.exists() {
        return Ok(ScenarioConfig::from_file(path)?);
    }
    match ScenarioConfig::shipped(source) {
        Some(cfg) => Ok(cfg?),
        None => Err(CliError { code: EXIT_MISSING_FILE, message: format!("scenario file not found: {source}") }),
    }
}

fn configure(common: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = load_scenario(&common.scenario)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = common.duration_frames {
        cfg.duration_frames = d;
    }
    if let Some(n) = common.noise_rate {
        cfg.teacher.noise_rate = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(Error::from)?))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut say = stdout.lock();
    match cli.command {
        Command::Validate(args) => {
            let cfg = load_scenario(&args.scenario)?;
            writeln!(say, "{}: ok ({} domains, {} frames)", cfg.name, cfg.schedule.domains().len(), cfg.duration_frames).ok();
        }
        Command::Run(args) => {
            let mut cfg = configure(&args.common)?;
            if let Some(kind) = args.strategy {
                cfg.strategy = Strategy::new(kind);
            }
            if args.fixed_rate.is_some() {
                cfg.strategy.fixed_rate = args.fixed_rate;
            }
            cfg.validate()?;
            let run = run_scenario(&cfg)?;
            let path = write_run(&args.common.out, &cfg, &run)?;
            let s = &run.summary;
            writeln!(
                say,
                "{} {}: accuracy {:.4}, up {:.3} kbps, down {:.3} kbps, {} sessions -> {}",
                cfg.name,
                s.strategy,
                s.mean_accuracy,
                s.up_kbps,
                s.down_kbps,
                s.sessions,
                path.display()
            )
            .ok();
        }
        Command::Sweep(args) => {
            let cfg = configure(&args.common)?;
            let rates = parse_rates(&args.rates).map_err(|m| CliError { code: EXIT_INVALID_CONFIG, message: m })?;
            let rows = rate_sweep(&cfg, &rates)?;
            let path = args.common.out.join(format!("{}_sweep.csv", cfg.name));
            let labeled: Vec<_> = rows.iter().map(|r| (r.rate.to_string(), &r.summary)).collect();
            write_summary_csv(create(&path)?, &labeled)?;
            for r in &rows {
                writeln!(say, "rate {:>8}: accuracy {:.4}, up {:.3} kbps", r.rate, r.summary.mean_accuracy, r.summary.up_kbps).ok();
            }
            writeln!(say, "-> {}", path.display()).ok();
        }
        Command::Ablate(common) => {
            let cfg = configure(&common)?;
            let rows = ablation(&cfg)?;
            let path = common.out.join(format!("{}_ablation.csv", cfg.name));
            let labeled: Vec<_> = rows.iter().map(|r| (r.variant.name().to_string(), &r.summary)).collect();
            write_summary_csv(create(&path)?, &labeled)?;
            for r in &rows {
                let s = &r.summary;
                writeln!(
                    say,
                    "{:>22}: accuracy {:.4}, forward {:.2}s, backward {:.2}s, overall {:.2}s",
                    r.variant.name(),
                    s.mean_accuracy,
                    s.forward_s,
                    s.backward_s,
                    s.overall_s
                )
                .ok();
            }
            writeln!(say, "-> {}", path.display()).ok();
        }
        Command::Report(common) => {
            let cfg = configure(&common)?;
            let summaries = compare_strategies(&cfg)?;
            let path = common.out.join(format!("{}_strategies.csv", cfg.name));
            let labeled: Vec<_> = summaries.iter().map(|s| (s.strategy.name().to_string(), s)).collect();
            write_summary_csv(create(&path)?, &labeled)?;
            for s in &summaries {
                writeln!(
                    say,
                    "{:>10}: accuracy {:.4}, up {:.3} kbps, down {:.3} kbps",
                    s.strategy, s.mean_accuracy, s.up_kbps, s.down_kbps
                )
                .ok();
            }
            let mut edge = cfg.clone();
            edge.strategy = Strategy::new(StrategyKind::EdgeOnly);
            let mut adaptive = cfg.clone();
            adaptive.strategy = Strategy::new(StrategyKind::Adaptive);
            let cdf = gain_cdf(&run_scenario(&adaptive)?.series, &run_scenario(&edge)?.series)?;
            let cdf_path = common.out.join(format!("{}_gain_cdf.csv", cfg.name));
            let mut w = create(&cdf_path)?;
            writeln!(w, "# schema: edgedrift-gain-cdf v1\ngain,cumulative_fraction").map_err(Error::from)?;
            for (g, f) in cdf {
                writeln!(w, "{},{}", crate::harness::metrics::fmt(g), crate::harness::metrics::fmt(f)).map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            writeln!(say, "-> {}\n-> {}", path.display(), cdf_path.display()).ok();
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs, and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
