mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use salbench::Error;

use config::{parse_channels, CommandKind, RunConfig};
use run::Outcome;

#[derive(Parser)]
#[command(name = "salbench", version, about = "RGB-thermal salient object detection benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Score saliency maps against the test split of an index.
    Eval {
        #[arg(long)]
        index: PathBuf,
        /// Directory holding `<id>.pgm` for every test entry.
        #[arg(long)]
        saliency_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Challenge co-occurrence, object-size histogram and dataset validation.
    Stats {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Only count tags; the referenced images need not exist.
        #[arg(long)]
        annotations_only: bool,
    },
    /// Run the toy network on one RGB-thermal pair.
    Infer {
        /// Trained weights; without them the network is initialised from --seed.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        thermal: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_channels)]
        channels: Option<[usize; 5]>,
    },
    /// Train the toy network on the synthetic hot-square corpus.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_grad_norm: Option<f64>,
        /// Take every step at the full learning rate.
        #[arg(long, conflicts_with = "max_grad_norm")]
        no_clip: bool,
        #[arg(long, value_parser = parse_channels)]
        channels: Option<[usize; 5]>,
        /// Image side of the synthetic corpus.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Kernel oracles, gradient checks and metric equivalence.
    Selfcheck {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_laplace: bool,
    },
    /// Write a seeded synthetic dataset with an index, for trying the other commands.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        entries: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Also write test-split saliency maps to `<out>/saliency`.
        #[arg(long, value_parser = ["perfect", "noisy"])]
        saliency: Option<String>,
    },
    /// Re-run the command recorded in a config echo.
    Replay {
        #[arg(long)]
        config: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn to_config(cmd: Cmd) -> Result<RunConfig, Error> {
    let cfg = match cmd {
        Cmd::Eval {
            index,
            saliency_dir,
            out,
        } => RunConfig {
            index_path: Some(index),
            saliency_dir: Some(saliency_dir),
            ..RunConfig::new(CommandKind::Eval, out)
        },
        Cmd::Stats {
            index,
            out,
            bins,
            annotations_only,
        } => {
            let mut cfg = RunConfig::new(CommandKind::Stats, out);
            cfg.index_path = Some(index);
            cfg.stats.bins = bins;
            cfg.stats.annotations_only = annotations_only;
            cfg
        }
        Cmd::Infer {
            weights,
            rgb,
            thermal,
            out,
            id,
            seed,
            channels,
        } => {
            let mut cfg = RunConfig::new(CommandKind::Infer, out).with_seed(seed);
            cfg.infer.weights = weights;
            cfg.infer.rgb = Some(rgb);
            cfg.infer.thermal = Some(thermal);
            cfg.infer.id = id;
            if let Some(c) = channels {
                cfg.net.channels = c;
            }
            cfg
        }
        Cmd::TrainToy {
            out,
            seed,
            steps,
            lr,
            batch_size,
            max_grad_norm,
            no_clip,
            channels,
            size,
        } => {
            let mut cfg = RunConfig::new(CommandKind::TrainToy, out).with_seed(seed);
            let t = &mut cfg.trainer;
            t.steps = steps.unwrap_or(t.steps);
            t.lr = lr.unwrap_or(t.lr);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            if no_clip {
                t.max_grad_norm = None;
            } else if max_grad_norm.is_some() {
                t.max_grad_norm = max_grad_norm;
            }
            if let Some(c) = channels {
                cfg.net.channels = c;
            }
            cfg.corpus.size = size.unwrap_or(cfg.corpus.size);
            cfg
        }
        Cmd::Selfcheck {
            out,
            seed,
            corrupt_laplace,
        } => {
            let mut cfg = RunConfig::new(CommandKind::Selfcheck, out).with_seed(seed);
            cfg.selfcheck.corrupt_laplace = corrupt_laplace;
            cfg
        }
        Cmd::Fixture {
            out,
            seed,
            entries,
            size,
            saliency,
        } => {
            let mut cfg = RunConfig::new(CommandKind::Fixture, out).with_seed(seed);
            cfg.fixture.entries = entries;
            cfg.fixture.size = size;
            cfg.fixture_saliency = saliency;
            cfg
        }
        Cmd::Replay { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            cfg
        }
    };
    Ok(cfg)
}

/// 2 input error, 3 validation failure, 4 numerical failure.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) => 3,
        Error::Numerical(_) => 4,
        Error::Entry { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match to_config(cli.command).and_then(|cfg| run::run(&cfg)) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::SelfcheckFailed(cases)) => {
            eprintln!("salbench: selfcheck failed: {}", cases.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("salbench: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
