//! `crysgen`: ingest crystal datasets, train the proposer and the diffusion
//! model, sample hybrid generations and evaluate them.
//!
//! Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numeric
//! divergence.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crysgen::Execution;

use config::{Component, ConfigFile, InputFormat, Mode, ProposerChoice};
use error::CliError;

#[derive(Parser)]
#[command(name = "crysgen", version, about = "Hybrid proposer + diffusion crystal generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Run single-threaded regardless of --jobs.
    #[arg(long)]
    sequential: bool,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and write seeded 60/20/20 splits.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<InputFormat>,
        /// Size of the generated corpus for `--format synthetic`.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Train the Markov proposer and/or the denoiser.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Optimizer steps (overrides epochs).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum)]
        component: Option<Component>,
        #[arg(long)]
        markov_order: Option<usize>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Propose and refine crystals.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Directory holding the checkpoint and proposer sidecar.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Injection timestep.
        #[arg(long)]
        tau: Option<usize>,
        /// Reverse steps when starting from pure noise.
        #[arg(long)]
        steps: Option<usize>,
        /// `composition=<formula>` or `spacegroup=<number>`.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        proposer: Option<ProposerChoice>,
        #[arg(long)]
        proposer_file: Option<PathBuf>,
        /// Ground-truth records for `--mode csp`.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Write per-step chain diagnostics.
        #[arg(long)]
        trace: bool,
    },
    /// Compute the metrics report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gen: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Training records used to calibrate the coverage threshold.
        #[arg(long)]
        calibrate_from: Option<PathBuf>,
        /// One target formula per line for composition match.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        emit_hist: bool,
    },
}

fn execution(common: &Common) -> Execution {
    if let Some(n) = common.jobs {
        crysgen::par::set_max_workers(n.max(1));
    }
    if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            common,
            input,
            format,
            synthetic,
        } => {
            let mut cfg = ConfigFile::load(common.config.as_deref())?.ingest;
            cfg.input = input.or(cfg.input);
            cfg.format = format.unwrap_or(cfg.format);
            cfg.synthetic_size = synthetic.unwrap_or(cfg.synthetic_size);
            cfg.out = common.out.clone().unwrap_or(cfg.out);
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            execution(&common);
            commands::ingest(&cfg, common.force)
        }
        Command::Train {
            common,
            data,
            steps,
            component,
            markov_order,
            resume,
        } => {
            let mut cfg = ConfigFile::load(common.config.as_deref())?.train;
            cfg.data = data.unwrap_or(cfg.data);
            cfg.out = common.out.clone().unwrap_or(cfg.out);
            cfg.component = component.unwrap_or(cfg.component);
            cfg.markov_order = markov_order.unwrap_or(cfg.markov_order);
            if steps.is_some() {
                cfg.trainer.max_steps = steps;
            }
            cfg.trainer.seed = common.seed.unwrap_or(cfg.trainer.seed);
            let exec = execution(&common);
            commands::train(&cfg, resume, common.force, exec)
        }
        Command::Sample {
            common,
            model,
            n,
            tau,
            steps,
            condition,
            mode,
            proposer,
            proposer_file,
            targets,
            trace,
        } => {
            let mut cfg = ConfigFile::load(common.config.as_deref())?.sample;
            cfg.model = model.unwrap_or(cfg.model);
            cfg.out = common.out.clone().unwrap_or(cfg.out);
            cfg.n = n.unwrap_or(cfg.n);
            cfg.condition = condition.or(cfg.condition);
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.proposer = proposer.unwrap_or(cfg.proposer);
            cfg.proposer_file = proposer_file.or(cfg.proposer_file);
            cfg.targets = targets.or(cfg.targets);
            if tau.is_some() {
                cfg.sampler.tau = tau;
            }
            cfg.sampler.inference_steps = steps.unwrap_or(cfg.sampler.inference_steps);
            cfg.sampler.seed = common.seed.unwrap_or(cfg.sampler.seed);
            cfg.sampler.trace |= trace;
            let exec = execution(&common);
            commands::sample(&cfg, common.force, exec)
        }
        Command::Evaluate {
            common,
            gen,
            reference,
            mode,
            threshold,
            calibrate_from,
            targets,
            emit_hist,
        } => {
            let mut cfg = ConfigFile::load(common.config.as_deref())?.evaluate;
            cfg.gen = gen.unwrap_or(cfg.gen);
            cfg.reference = reference.unwrap_or(cfg.reference);
            cfg.out = common.out.clone().unwrap_or(cfg.out);
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.coverage_threshold = threshold.unwrap_or(cfg.coverage_threshold);
            cfg.calibrate_from = calibrate_from.or(cfg.calibrate_from);
            cfg.targets = targets.or(cfg.targets);
            cfg.emit_hist |= emit_hist;
            let exec = execution(&common);
            commands::evaluate(&cfg, common.force, exec)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crysgen: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
