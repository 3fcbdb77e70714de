use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use speclab::harness::{emit_report, render_report, run_batch, ExperimentConfig, ExperimentId, ReportFormat};
use speclab::norms::{make_cutoffs, CUTOFF_SAMPLES, CUTOFF_TOL, DEFAULT_SAMPLE_RATE};

#[derive(Parser)]
#[command(name = "speclab", version, about = "Spectral multiplier experiments on finite grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments in a TOML config and write a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the experiment identifiers.
    ListExperiments,
    /// Self-test of the dyadic cutoff identities.
    CheckCutoffs,
}

fn run(config: PathBuf, out: Option<PathBuf>, format: ReportFormat, jobs: usize) -> speclab::Result<bool> {
    let cfgs = ExperimentConfig::load(&config)?;
    let rows = run_batch(&cfgs, jobs)?;
    let all_pass = rows.iter().all(|r| r.pass);
    match out.or_else(|| cfgs.iter().find_map(|c| c.output.clone())) {
        Some(path) => {
            emit_report(&rows, format, &path)?;
            log::info!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{}", render_report(&rows, format)?),
    }
    for r in rows.iter().filter(|r| !r.pass) {
        log::warn!("{} {} failed: measured {} vs {}", r.experiment, r.params, r.measured, r.predicted);
    }
    Ok(all_pass)
}

fn check_cutoffs() -> speclab::Result<bool> {
    let cut = make_cutoffs(DEFAULT_SAMPLE_RATE)?;
    let check = cut.verify(CUTOFF_SAMPLES);
    println!(
        "samples={} support_violation={:e} upper_error={:e} lower_error={:e}",
        check.samples, check.support_violation, check.upper_error, check.lower_error
    );
    Ok(check.worst() <= CUTOFF_TOL)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, format, jobs } => run(config, out, format, jobs),
        Command::ListExperiments => {
            for e in ExperimentId::ALL {
                println!("{e}\t{}", e.description());
            }
            Ok(true)
        }
        Command::CheckCutoffs => check_cutoffs(),
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
