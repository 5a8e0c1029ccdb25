//! Command-line experiment runner.
//!
//! Verbs: `run <config>` executes the strategy × seed grid of a TOML config,
//! `summarize <dir>` rebuilds `summary.csv` from trace files, and
//! `ground-truth <config>` precomputes and caches the reference field.
//! Exit codes: 0 full success, 2 when some runs failed but the grid
//! finished, 1 on configuration or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use statver::harness::{
    self, ExperimentConfig, SeedSpec, Summary,
};
use statver::sampling::Strategy;
use statver::{Error, Result};

#[derive(Parser)]
#[command(
    name = "statver",
    version,
    about = "Closed-loop statistical verification with GP surrogates and batch sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) pair described by a config file.
    Run(RunArgs),
    /// Aggregate the trace files in a directory into summary.csv.
    Summarize(SummarizeArgs),
    /// Precompute and cache the ground-truth field for a config.
    GroundTruth(GroundTruthArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Path to the experiment config (TOML).
    #[arg(value_name = "CONFIG")]
    config_pos: Option<PathBuf>,
    /// Alternative to the positional config path.
    #[arg(long = "config", value_name = "PATH")]
    config_flag: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, value_name = "N", default_value_t = 0)]
    threads: usize,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = match (&self.config_pos, &self.config_flag) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    field: "config",
                    message: "given both positionally and via --config; pass one".into(),
                })
            }
            (Some(p), None) | (None, Some(p)) => p,
            (None, None) => {
                return Err(Error::Config {
                    field: "config",
                    message: "a config path is required (positional or --config)".into(),
                })
            }
        };
        let mut config = ExperimentConfig::load(path)?;
        if let Some(dir) = &self.out {
            config.output.dir = dir.clone();
        }
        if self.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build_global()
                .map_err(|e| Error::Config {
                    field: "threads",
                    message: e.to_string(),
                })?;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Override the config's seeds: "1..20" (inclusive) or "3,5,8".
    #[arg(long, value_name = "SEEDS")]
    seeds: Option<String>,
    /// Override the config's strategies (comma-separated names).
    #[arg(long, value_name = "LIST")]
    strategies: Option<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Directory holding trace_*.json files.
    #[arg(value_name = "DIR")]
    dir: PathBuf,
}

#[derive(Args)]
struct GroundTruthArgs {
    #[command(flatten)]
    source: ConfigSource,
}

fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    list.split(',').map(|part| part.trim().parse()).collect()
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<26} {:>12} {:>12} {:>14} {:>13}",
        "strategy", "final MAE", "std", "vs proposed", "improvement"
    );
    let strategies: Vec<Strategy> = {
        let mut seen = Vec::new();
        for row in &summary.rows {
            if !seen.contains(&row.strategy) {
                seen.push(row.strategy);
            }
        }
        seen
    };
    for strategy in strategies {
        if let Some(row) = summary.final_row(strategy) {
            println!(
                "{:<26} {:>12.5} {:>12.5} {:>14.2} {:>12.1}%",
                strategy.name(),
                row.mean_mae,
                row.std_mae,
                row.outperform_or_match_vs_proposed,
                row.final_improvement_pct.unwrap_or(0.0)
            );
        }
    }
    println!(
        "(ratios and improvements are relative to `{}`)",
        summary.reference.name()
    );
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let mut config = args.source.load()?;
    if let Some(seeds) = &args.seeds {
        config.run.seeds = SeedSpec::List(harness::parse_seed_spec(seeds)?);
    }
    if let Some(list) = &args.strategies {
        config.run.strategies = parse_strategies(list)?;
    }
    config.validate()?;
    let outcome = harness::run_experiment(&config)?;
    if let Some(summary) = &outcome.summary {
        print_summary(summary);
    }
    println!(
        "{} run(s) complete, {} failed; outputs in {}",
        outcome.traces.iter().filter(|t| t.error.is_none()).count(),
        outcome.failures.len(),
        config.output.dir.display()
    );
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<ExitCode> {
    let traces = harness::load_traces(&args.dir)?;
    let complete: Vec<_> = traces.into_iter().filter(|t| t.error.is_none()).collect();
    let summary = harness::summarize(&complete)?;
    let path = args.dir.join("summary.csv");
    std::fs::write(&path, harness::summary_csv(&summary))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    print_summary(&summary);
    println!("{} trace(s) aggregated into {}", complete.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_ground_truth(args: &GroundTruthArgs) -> Result<ExitCode> {
    let config = args.source.load()?;
    config.validate()?;
    let system = config.system()?;
    let lattice = config.lattice()?;
    let field = harness::load_or_compute_ground_truth(&config, &system, &lattice)?;
    let mean = field.p_sat_true.iter().sum::<f64>() / field.p_sat_true.len() as f64;
    println!(
        "ground truth over {} lattice points cached in {} (mean p_sat {:.4})",
        field.p_sat_true.len(),
        config.output.dir.display(),
        mean
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version go to stdout and succeed; usage mistakes are
            // config errors.
            let code = if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::GroundTruth(args) => cmd_ground_truth(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
