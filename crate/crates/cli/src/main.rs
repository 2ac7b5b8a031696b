//! `grinn`: run, compare, time and extrapolate the three solvers.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grinn_core::io::{load_config, parse_config, ConfigOverrides};
use grinn_core::units::{CaseConfig, CaseId, SolverKind};

use commands::{CommandError, CompareOptions, ExtrapolateOptions, RunOptions, ScaleOptions};

#[derive(Parser)]
#[command(
    name = "grinn",
    version,
    about = "Self-gravitating isothermal gas: network, finite-difference and linear-theory solvers",
    after_help = "Runs without --out go to a new directory under $GRINN_OUTPUT_ROOT (default ./runs)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and write snapshots at the requested times.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output times, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Snapshot points per axis for network and linear-theory output.
        #[arg(long)]
        snapshot_points: Option<usize>,
    },
    /// Run two solvers and write mismatch reports.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Solver pair `a,b`; mismatches are relative to `b`.
        #[arg(long, value_delimiter = ',', required = true)]
        solvers: Vec<SolverKind>,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Points along the x-axis cut.
        #[arg(long, default_value_t = 1000)]
        cut_points: usize,
        /// Value of the other coordinates on the cut.
        #[arg(long, default_value_t = 0.6)]
        transverse: f64,
        /// Compare on a uniform volume grid with this many points per axis
        /// instead of a cut.
        #[arg(long)]
        volume: Option<usize>,
    },
    /// Wall-clock scaling with dimension or integration time.
    Scale {
        #[arg(long, value_enum, default_value = "dimension")]
        mode: ScaleMode,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// FD cells per axis.
        #[arg(long, default_value_t = 64)]
        fd_grid: usize,
        /// Network loss-and-gradient evaluations per repetition.
        #[arg(long, default_value_t = 5)]
        grinn_iterations: usize,
        /// Interior collocation points (held fixed across dimensions).
        #[arg(long, default_value_t = 2000)]
        grinn_interior: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on `[0, train_to]`, predict to `predict_to`, compare with FD.
    /// The first-layer frequency defaults to 0.5 here unless --omega is given.
    Extrapolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_to: f64,
        #[arg(long)]
        predict_to: f64,
        /// Comparison times (default: the prediction time only).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Volume grid points per axis for the averaged mismatch.
        #[arg(long)]
        volume: Option<usize>,
    },
    /// Re-execute a recorded run from its manifest.
    Replay {
        /// Manifest file or run directory.
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScaleMode {
    Dimension,
    Time,
}

#[derive(Args)]
struct Common {
    /// TOML config; keys mirror the case recipe.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<CaseId>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    courant: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    n_interior: Option<usize>,
    #[arg(long)]
    n_boundary: Option<usize>,
    #[arg(long)]
    n_initial: Option<usize>,
    #[arg(long)]
    adam_epochs: Option<usize>,
    #[arg(long)]
    lbfgs_iterations: Option<usize>,
    /// First-layer frequency factor.
    #[arg(long)]
    omega: Option<f64>,
    /// Output directory (default: a fresh directory under $GRINN_OUTPUT_ROOT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<CaseConfig, CommandError> {
        let flags = ConfigOverrides {
            case: self.case,
            dim: self.dim,
            solver: self.solver,
            amplitude: self.amplitude,
            t_end: self.t_end,
            grid_points: self.grid_points,
            courant: self.courant,
            seed: self.seed,
            hidden_layers: self.hidden.clone(),
            n_interior: self.n_interior,
            n_boundary: self.n_boundary,
            n_initial: self.n_initial,
            adam_epochs: self.adam_epochs,
            lbfgs_iterations: self.lbfgs_iterations,
            first_layer_omega: self.omega,
        };
        Ok(match &self.config {
            Some(path) => load_config(path, &flags)?,
            None => parse_config(None, &flags)?,
        })
    }
}

fn out_dir(explicit: Option<PathBuf>, command: &str, label: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        grinn_core::io::default_output_root().join(format!("{command}-{label}-{stamp}"))
    })
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<PathBuf, CommandError> {
    match cli.command {
        Command::Run {
            common,
            times,
            snapshot_points,
        } => {
            let config = common.resolve()?;
            let dir = out_dir(common.out, "run", config.case.as_str());
            let opts = RunOptions { times, snapshot_points };
            commands::start("run", &argv, &config, &opts, &dir)?;
            commands::run(&config, &opts, &dir)?;
            Ok(dir)
        }
        Command::Compare {
            common,
            solvers,
            times,
            cut_points,
            transverse,
            volume,
        } => {
            if solvers.len() != 2 {
                return Err(CommandError::Invalid(format!("--solvers takes exactly two solvers, got {}", solvers.len())));
            }
            let config = common.resolve()?;
            let dir = out_dir(common.out, "compare", config.case.as_str());
            let opts = CompareOptions {
                solvers: (solvers[0], solvers[1]),
                times,
                cut_points,
                transverse,
                volume,
            };
            commands::start("compare", &argv, &config, &opts, &dir)?;
            commands::compare(&config, &opts, &dir)?;
            Ok(dir)
        }
        Command::Scale {
            mode,
            reps,
            fd_grid,
            grinn_iterations,
            grinn_interior,
            out,
        } => {
            let config = parse_config(None, &ConfigOverrides::default())?;
            let dir = out_dir(out, "scale", "case1");
            let opts = ScaleOptions {
                mode: match mode {
                    ScaleMode::Dimension => grinn_core::harness::ScalingMode::Dimension,
                    ScaleMode::Time => grinn_core::harness::ScalingMode::Time,
                },
                reps,
                fd_grid,
                grinn_iterations,
                grinn_interior,
            };
            commands::start("scale", &argv, &config, &opts, &dir)?;
            commands::scale(&opts, &dir)?;
            Ok(dir)
        }
        Command::Extrapolate {
            common,
            train_to,
            predict_to,
            times,
            volume,
        } => {
            let explicit_omega = common.omega.is_some();
            let mut config = common.resolve()?;
            if !explicit_omega {
                config.pinn.first_layer_omega = grinn_core::grinn::EXTRAPOLATION_OMEGA;
            }
            let dir = out_dir(common.out, "extrapolate", config.case.as_str());
            let opts = ExtrapolateOptions {
                train_to,
                predict_to,
                times: if times.is_empty() { vec![predict_to] } else { times },
                volume,
            };
            commands::start("extrapolate", &argv, &config, &opts, &dir)?;
            commands::extrapolate(&config, &opts, &dir)?;
            Ok(dir)
        }
        Command::Replay { manifest, out } => {
            commands::replay(&manifest, &argv, &out)?;
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match dispatch(cli, argv) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
