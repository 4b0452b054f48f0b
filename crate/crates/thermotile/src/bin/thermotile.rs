//! Command-line front end. Exit codes: 0 success, 1 gradient-check
//! failure, 2 configuration error, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use thermotile::cli::{
    cmd_dataset, cmd_features, cmd_gradcheck, cmd_report, cmd_sweep, cmd_synth, cmd_train,
    describe_checkpoint, log_event, RunConfig,
};
use thermotile::Error;

#[derive(Parser)]
#[command(name = "thermotile", version, about = "Synthetic microclimate spatial-context experiments")]
struct Cli {
    /// Worker threads for raster generation; 1 is the deterministic
    /// reference mode (training is always single-threaded).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the sweep tile sizes, e.g. "9,31,63".
    #[arg(long)]
    sizes: Option<String>,
    /// Override the training epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Evaluate every interior pixel instead of the eval lattice.
    #[arg(long)]
    dense_eval: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(sizes) = &self.sizes {
            let parsed: Result<Vec<usize>, _> = sizes.split(',').map(|s| s.trim().parse()).collect();
            cfg.sweep.tile_sizes =
                parsed.map_err(|e| Error::config(format!("bad --sizes list: {e}")))?;
        }
        if let Some(epochs) = self.epochs {
            cfg.sweep.epochs = epochs;
        }
        if self.dense_eval {
            cfg.sweep.eval_grid_stride = 1;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic flights and the flights.json index.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute derived feature layers inside a scene directory.
    Features {
        /// A scene directory written by `synth`.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Build per-size tile datasets from saved scenes.
    Dataset {
        #[command(flatten)]
        config: ConfigArgs,
        /// Path to flights.json.
        #[arg(long)]
        flights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a dataset directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// One datasets/kNN directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full tile-size sweep: datasets, training, evaluation, report.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        flights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Run in f32 at the looser documented tolerance (1e-2).
        #[arg(long)]
        f32: bool,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Summarize a stored report.json or checkpoint.
    Report {
        /// Path to report/report.json.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Path to a checkpoint file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode, (u8, Error)> {
    // Configuration problems exit 2, downstream stage failures exit 3.
    let stage = |e: Error| -> (u8, Error) {
        match &e {
            Error::Config(_) => (2, e),
            _ => (3, e),
        }
    };
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = config.resolve().map_err(|e| (2, e))?;
            cmd_synth(&cfg, &out).map_err(stage)?;
        }
        Command::Features { scene } => {
            cmd_features(&scene).map_err(stage)?;
        }
        Command::Dataset { config, flights, out } => {
            let cfg = config.resolve().map_err(|e| (2, e))?;
            cmd_dataset(&cfg, &flights, &out).map_err(stage)?;
        }
        Command::Train { config, dataset, out } => {
            let cfg = config.resolve().map_err(|e| (2, e))?;
            cmd_train(&cfg, &dataset, &out).map_err(stage)?;
        }
        Command::Sweep { config, flights, out } => {
            let cfg = config.resolve().map_err(|e| (2, e))?;
            cmd_sweep(&cfg, &flights, &out).map_err(stage)?;
        }
        Command::Gradcheck { f32, seed } => {
            let report = cmd_gradcheck(f32, seed);
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { report, checkpoint } => {
            match (report, checkpoint) {
                (Some(path), _) => {
                    let text = cmd_report(&path).map_err(stage)?;
                    print!("{text}");
                }
                (None, Some(path)) => {
                    let text = describe_checkpoint(&path).map_err(stage)?;
                    println!("{text}");
                }
                (None, None) => {
                    return Err((2, Error::config("report needs --report or --checkpoint")));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 1 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    } else {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err((code, e)) => {
            log_event("error", &e.to_string());
            ExitCode::from(code)
        }
    }
}
