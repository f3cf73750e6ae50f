mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{LinearOp, DEFAULT_DEMO_SAMPLES, DEFAULT_LEVELS, DEFAULT_SEED, DEFAULT_TRIALS};
use error::CliResult;
use manifold_gauss::projnorm::ProjNormConfig;
use manifold_gauss::pushing::PushConfig;

/// Gaussian marginalization and conditioning onto linear and smooth manifolds.
#[derive(Parser, Debug)]
#[command(name = "mgauss", version, about, long_about = None)]
struct Args {
    /// Output directory, created if missing
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master random seed
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Marginalize and condition a 3-d Gaussian onto a plane and a line
    LinearDemo {
        /// Samples drawn from every Gaussian
        #[arg(long, default_value_t = DEFAULT_DEMO_SAMPLES)]
        samples: usize,
    },
    /// Compare the projected normal density with its tangent-line approximation
    Projnorm {
        /// JSON experiment settings; flags below override it
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated isotropic covariance scales
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        /// Number of angle grid points
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Planar-pushing covariance consistency sweep over odometry noise
    Pushing {
        /// JSON scenario settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated odometry noise multipliers
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
        levels: Vec<f64>,
        /// Trials per noise level
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
    },
    /// Condition a Gaussian onto S^T x = c read from JSON
    Condition {
        /// JSON file with `mean`, `cov`, `S` (n x m, row-major) and `c`
        #[arg(long)]
        input: PathBuf,
    },
    /// Marginalize a Gaussian onto S^T x = c read from JSON
    Marginalize {
        /// JSON file with `mean`, `cov`, `S` (n x m, row-major) and `c`
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(args: Args) -> CliResult<()> {
    let files = match args.command {
        Command::LinearDemo { samples } => commands::linear_demo(&args.out, args.seed, samples)?,
        Command::Projnorm {
            config,
            scales,
            grid_size,
        } => {
            let mut cfg: ProjNormConfig = match config {
                Some(path) => output::read_json(&path)?,
                None => ProjNormConfig::default(),
            };
            if let Some(scales) = scales {
                cfg.scales = scales;
            }
            if let Some(size) = grid_size {
                cfg.grid_size = size;
            }
            commands::projnorm(&args.out, &cfg)?
        }
        Command::Pushing {
            config,
            levels,
            trials,
        } => {
            let cfg: PushConfig = match config {
                Some(path) => output::read_json(&path)?,
                None => PushConfig::default(),
            };
            commands::pushing(&args.out, args.seed, &cfg, &levels, trials)?
        }
        Command::Condition { input } => {
            let (path, result) = commands::linear_op(&args.out, &input, LinearOp::Condition)?;
            println!("{}", serde_json::to_string(&result)?);
            vec![path]
        }
        Command::Marginalize { input } => {
            let (path, result) = commands::linear_op(&args.out, &input, LinearOp::Marginalize)?;
            println!("{}", serde_json::to_string(&result)?);
            vec![path]
        }
    };
    for file in files {
        eprintln!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
