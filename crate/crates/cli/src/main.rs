//! Benchmark harness for angular synchronization: generate synthetic
//! instances, run solvers, train the GNN pipeline, sweep configuration
//! grids to CSV, and run the sensor-network-localization application.
//!
//! Exit codes: 0 on success, 1 for usage/configuration errors, 2 for
//! numerical failures.

mod commands;
mod config;
mod record;

use clap::{Parser, Subcommand};
use commands::{parse_seed_list, prefix_path, CliError, Method, TrainOpts};
use angsync::gnn::LossKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "angsync",
    about = "Angular synchronization benchmark harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic offset graph and its hidden ground truth.
    Gen {
        /// Flat key=value configuration file (model, n, p, k, eta, option, seed).
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set eta=0.3 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Output prefix; writes <out>.graph and <out>.truth.
        #[arg(long)]
        out: String,
    },
    /// Run a classical solver (or the trained pipeline) on a graph file.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        /// spectral | spectral_rn | gpm | trivial | gnn-<loss>
        #[arg(long)]
        method: String,
        /// Number of angle sets; defaults to the graph header value.
        #[arg(long)]
        k: Option<usize>,
        /// Ground-truth file for evaluated metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the estimated angles here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a one-row CSV run record here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Seed for seeded methods (gnn training).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Record wall-clock runtime (off by default so reruns are
        /// byte-identical).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train the GNN pipeline on a graph file, one run per seed.
    Train {
        #[arg(long)]
        graph: PathBuf,
        /// upset | cycle | sum | weighted:<tau>
        #[arg(long, default_value = "upset")]
        loss: String,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Input feature angles (defaults to the row-normalized spectral
        /// estimate).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output prefix; writes <out>.seed<N>.angles and <out>.seed<N>.ckpt.
        #[arg(long)]
        out: String,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Cross-product benchmark sweep to a CSV file.
    Sweep {
        /// Grid configuration (lists: model, n, p, k, eta, option, seeds,
        /// methods; scalars: epochs, patience, pgd_steps, lr, weight_decay,
        /// timing).
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sensor-network localization on a synthetic point cloud.
    Snl {
        /// Configuration (shape, n, seed, k_patch, k_thres, eta, option,
        /// method, shift).
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Output prefix; writes <out>.cloud with an `# ane=` trailer.
        #[arg(long)]
        out: String,
        #[arg(long)]
        record: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct TrainFlags {
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    /// Projected gradient steps (0 disables them).
    #[arg(long = "pgd-steps")]
    pgd_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    /// Train without projected gradient steps, then apply them once as
    /// post-processing.
    #[arg(long = "post-process")]
    post_process: bool,
}

impl TrainFlags {
    fn into_opts(self) -> TrainOpts {
        let d = TrainOpts::default();
        TrainOpts {
            epochs: self.epochs.unwrap_or(d.epochs),
            patience: self.patience.unwrap_or(d.patience),
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            pgd_steps: self.pgd_steps.unwrap_or(d.pgd_steps),
            post_process: self.post_process,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, sets, out } => commands::cmd_gen(&config, &sets, &prefix_path(&out)),
        Command::Solve {
            graph,
            method,
            k,
            truth,
            out,
            record,
            seed,
            timing,
            train,
        } => {
            let method: Method = method.parse()?;
            commands::cmd_solve(
                &graph,
                &method,
                k,
                truth.as_deref(),
                out.as_deref(),
                record.as_deref(),
                &train.into_opts(),
                seed,
                timing,
            )
        }
        Command::Train {
            graph,
            loss,
            k,
            seeds,
            truth,
            features,
            out,
            record,
            timing,
            train,
        } => {
            let loss: LossKind = loss.parse().map_err(|e: angsync::Error| {
                CliError::Usage(e.to_string())
            })?;
            let seeds = parse_seed_list(&seeds).map_err(CliError::Usage)?;
            commands::cmd_train(
                &graph,
                loss,
                k,
                &seeds,
                truth.as_deref(),
                features.as_deref(),
                &prefix_path(&out),
                record.as_deref(),
                &train.into_opts(),
                timing,
            )
        }
        Command::Sweep { config, sets, out } => commands::cmd_sweep(&config, &sets, &out),
        Command::Snl {
            config,
            sets,
            out,
            record,
        } => commands::cmd_snl(&config, &sets, &prefix_path(&out), record.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version exit successfully; anything else is usage
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
