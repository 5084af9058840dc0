//! Batch driver wiring environment synthesis, corrector solves, simulation
//! and diagnostics into reproducible pipelines.
//!
//! Exit codes: 0 when every verdict passes, 1 when a check fails, 2 on
//! execution errors (bad config, stale artifacts, I/O).

mod config;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipeline::{Pipeline, Stage};

#[derive(Parser)]
#[command(
    name = "dsre",
    about = "Doubly stochastic random environments: corrector solves, quenched walks, heat-kernel diagnostics"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Override the config's output directory (also: DSRE_OUTPUT_DIR).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the environment seed; recorded in the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and validate the environment.
    GenEnv,
    /// Solve the harmonic-coordinate system for the drift target.
    SolveCorrector,
    /// Evolve the quenched heat kernel over the diagnostic grid.
    HeatKernel,
    /// Sample scaled displacements of the quenched walk.
    Simulate,
    /// Test the sampled displacements against the Gaussian limit.
    VerifyClt,
    /// Entropy, moment and sublinearity diagnostics.
    NashDiag,
    /// Run every stage in dependency order.
    Full,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::GenEnv => Stage::GenEnv,
            Command::SolveCorrector => Stage::SolveCorrector,
            Command::HeatKernel => Stage::HeatKernel,
            Command::Simulate => Stage::Simulate,
            Command::VerifyClt => Stage::VerifyClt,
            Command::NashDiag => Stage::NashDiag,
            Command::Full => Stage::Full,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let config = match config::load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let output_dir = cli
        .output_dir
        .or_else(|| std::env::var_os("DSRE_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));

    let mut pipeline = match Pipeline::new(config, output_dir, cli.seed) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let result = pipeline.run(cli.command.stage());

    // the manifest is written regardless of how the run ended
    if let Err(e) = &result {
        pipeline.manifest.error = Some(format!("{e:#}"));
    }
    let output_dir = pipeline.output_dir().to_path_buf();
    if let Err(e) = pipeline
        .manifest
        .collect_files(&output_dir)
        .and_then(|()| pipeline.manifest.write(&output_dir))
    {
        eprintln!("error: writing manifest: {e:#}");
        return ExitCode::from(2);
    }

    match result {
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Ok(()) => {
            for v in &pipeline.manifest.verdicts {
                let status = if v.pass { "pass" } else { "FAIL" };
                println!(
                    "{status}  {:<22} statistic {:.6e}  threshold {:.6e}",
                    v.check, v.statistic, v.threshold
                );
            }
            if pipeline.manifest.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
