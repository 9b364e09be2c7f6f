use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stagecp::synth::generate;
use stagecp::Seed;
use stagecp_harness::experiment::{run_repetitions, scenario_spec, summarize, sweep, sweep_csv, SweepParam};
use stagecp_harness::io::{read_diagnostics, read_results, write_diagnostics, write_raw_csv, write_results, write_text};
use stagecp_harness::report::emit_report;
use stagecp_harness::{ExperimentConfig, Overrides, Result, EXIT_ABSTAINED};

#[derive(Parser)]
#[command(name = "stagecp", version, about = "Stage-wise conformal prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one repetition's synthetic scenario as a raw triplet CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Repetition whose seed to use.
        #[arg(long, default_value_t = 0)]
        rep: u64,
        /// Destination file; defaults to `<output>/data.csv`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run every configured method and write results, diagnostics and a summary.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Also render SVG plots of repetition 0.
        #[arg(long)]
        plots: bool,
    },
    /// Repeat `run` over a grid of one parameter.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// One of tau, delta, gamma, eta, k.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Render SVG plots from a results file (and optional diagnostics).
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        coverage_window: usize,
    },
}

fn resolve(config: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn results_path(dir: &Path, rep: usize) -> PathBuf {
    dir.join(format!("results_{rep:03}.csv"))
}

fn diagnostics_path(dir: &Path, rep: usize) -> PathBuf {
    dir.join(format!("diagnostics_{rep:03}.csv"))
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Generate { config, overrides, rep, file } => {
            let cfg = resolve(config.as_deref(), &overrides)?;
            let points = generate(&scenario_spec(&cfg, Seed(cfg.seed).derive(rep))?)?;
            let path = file.unwrap_or_else(|| cfg.output.join("data.csv"));
            write_raw_csv(&path, &points)?;
            println!("wrote {} points to {}", points.len(), path.display());
            Ok(0)
        }
        Command::Run { config, overrides, plots } => {
            let cfg = resolve(config.as_deref(), &overrides)?;
            let runs = run_repetitions(&cfg)?;
            let summary = summarize(&cfg, &runs)?;
            let policy = cfg.abstention_policy()?;
            write_text(&cfg.output.join("config.toml"), &cfg.to_toml_string())?;
            for run in &runs {
                write_results(&results_path(&cfg.output, run.rep), &run.result_rows(policy))?;
                write_diagnostics(&diagnostics_path(&cfg.output, run.rep), &run.diagnostics)?;
            }
            write_text(&cfg.output.join("summary.csv"), &summary.to_csv())?;
            if plots {
                let run = &runs[0];
                emit_report(&cfg.output, &run.result_rows(policy), &run.diagnostics, cfg.coverage_window)?;
            }
            print!("{}", summary.to_table());
            if summary.any_abstained_everywhere() {
                eprintln!("a method abstained at every step: the stage models likely need retraining");
                return Ok(EXIT_ABSTAINED);
            }
            Ok(0)
        }
        Command::Sweep { config, overrides, param, values } => {
            let cfg = resolve(config.as_deref(), &overrides)?;
            let param = SweepParam::parse(&param)?;
            let table = sweep(&cfg, param, &values)?;
            let csv = sweep_csv(param, &table);
            write_text(&cfg.output.join(format!("sweep_{}.csv", param.name())), &csv)?;
            print!("{csv}");
            Ok(0)
        }
        Command::Report { results, diagnostics, output, coverage_window } => {
            let rows = read_results(&results)?;
            let diag = diagnostics.as_deref().map(read_diagnostics).transpose()?.unwrap_or_default();
            for path in emit_report(&output, &rows, &diag, coverage_window)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
