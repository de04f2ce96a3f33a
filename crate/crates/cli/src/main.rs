//! `motionbench`: command-line front end for the motion evaluation toolkit.
//!
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 for
//! I/O failures, 3 for numerical failures.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{Ctx, SensitivityMetric, SynthArgs};
use config::RunConfig;
use motionbench::bench::{CorruptionMode, Level, SynthKind, SynthParams};
use motionbench::{Error, ErrorClass};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "motionbench", version, about = "Track-based motion metrics for generated video")]
struct Cli {
    /// key=value configuration file (default: $MOTIONBENCH_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, repeatable: --set model.channels=64
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for per-video work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the trajectory autoencoder on TRK1 clips.
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-step loss as CSV.
        #[arg(long)]
        loss_out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Encode clips and store pooled latents (LAT1).
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Per-video reconstruction Average Jaccard.
    Aj {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Worst frame and worst points of an AJ report.
    Localize {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fréchet distance between two latent stores.
    Frechet {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unbiased squared MMD between two latent stores.
    Mmd {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// L2 distance between the latents of two clips.
    Pairdist {
        #[arg(long)]
        checkpoint: PathBuf,
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// 9216-dimensional motion histogram of a 16-frame 64×64 track grid.
    Histogram {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-track length and radius.
    MotionStats {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Warp error and flow magnitude over consecutive frame pairs.
    Warp {
        /// IMG1 frames in order.
        #[arg(long, num_args = 2.., required = true)]
        frames: Vec<PathBuf>,
        /// FLO1 fields, one per consecutive pair.
        #[arg(long, num_args = 1.., required = true)]
        flows: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a track-space deformation to a clip.
    Corrupt {
        input: PathBuf,
        #[arg(long)]
        level: String,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spatial versus spatiotemporal corruption sensitivity of a metric.
    Sensitivity {
        #[arg(long, value_enum, default_value_t = SensitivityMetric::Aj)]
        metric: SensitivityMetric,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Comma-separated level tags (default: all five).
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Rank correlation of metric scores with z-scored human ratings.
    Correlate {
        #[arg(long)]
        ratings: PathBuf,
        /// CSV with header video_id,score.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        question: String,
        /// CSV with header video_id,label (0 or 1) for ROC-AUC.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic TRK1 clips.
    Synth {
        #[arg(long, default_value = "pan")]
        kind: String,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 128)]
        tracks: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        vx: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        vy: f64,
        #[arg(long, default_value_t = 0.02, allow_hyphen_values = true)]
        omega: f64,
        #[arg(long, default_value_t = 1.01)]
        zoom: f64,
        #[arg(long, default_value_t = 1.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        /// Write this many clips with random motion into the directory `out`.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train { .. } => "train",
        Command::Embed { .. } => "embed",
        Command::Aj { .. } => "aj",
        Command::Localize { .. } => "localize",
        Command::Frechet { .. } => "frechet",
        Command::Mmd { .. } => "mmd",
        Command::Pairdist { .. } => "pairdist",
        Command::Histogram { .. } => "histogram",
        Command::MotionStats { .. } => "motion-stats",
        Command::Warp { .. } => "warp",
        Command::Corrupt { .. } => "corrupt",
        Command::Sensitivity { .. } => "sensitivity",
        Command::Correlate { .. } => "correlate",
        Command::Synth { .. } => "synth",
    }
}

fn run(cli: Cli, argv: Vec<String>) -> motionbench::Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.set)?;
    if let Command::Train { seed, .. } = &cli.command {
        cfg.train.seed = *seed;
    }
    for p in all_inputs(&cli.command) {
        if !p.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input {} does not exist", p.display()),
            )));
        }
    }
    let ctx = Ctx {
        cfg,
        args: vec![
            ("command".into(), command_name(&cli.command).into()),
            ("argv".into(), argv.join("\u{1f}").replace(' ', "%20").replace('\u{1f}', " ")),
        ],
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| dispatch(&ctx, cli.command))
}

fn all_inputs(c: &Command) -> Vec<&PathBuf> {
    match c {
        Command::Train { inputs, .. } | Command::MotionStats { inputs, .. } => inputs.iter().collect(),
        Command::Embed { checkpoint, inputs, .. } | Command::Aj { checkpoint, inputs, .. } => {
            std::iter::once(checkpoint).chain(inputs).collect()
        }
        Command::Localize { report, .. } => vec![report],
        Command::Frechet { a, b, .. } | Command::Mmd { a, b, .. } => vec![a, b],
        Command::Pairdist { checkpoint, a, b, .. } => vec![checkpoint, a, b],
        Command::Histogram { input, .. } | Command::Corrupt { input, .. } => vec![input],
        Command::Warp { frames, flows, .. } => frames.iter().chain(flows).collect(),
        Command::Sensitivity { checkpoint, inputs, .. } => checkpoint.iter().chain(inputs).collect(),
        Command::Correlate { ratings, scores, labels, .. } => [ratings, scores].into_iter().chain(labels).collect(),
        Command::Synth { .. } => Vec::new(),
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> motionbench::Result<()> {
    match command {
        Command::Train { out, loss_out, inputs, .. } => commands::train(ctx, &inputs, &out, loss_out.as_deref()),
        Command::Embed { checkpoint, out, inputs } => commands::embed(ctx, &checkpoint, &inputs, &out),
        Command::Aj { checkpoint, seed, out, inputs } => commands::aj(ctx, &checkpoint, seed, &inputs, &out),
        Command::Localize { report, window, out } => commands::localize_cmd(ctx, &report, window, &out),
        Command::Frechet { a, b, out } => commands::frechet(ctx, &a, &b, &out),
        Command::Mmd { a, b, out } => commands::mmd(ctx, &a, &b, &out),
        Command::Pairdist { checkpoint, a, b, out } => commands::pairdist(ctx, &checkpoint, &a, &b, &out),
        Command::Histogram { input, out } => commands::histogram(ctx, &input, &out),
        Command::MotionStats { out, inputs } => commands::motion_stats(ctx, &inputs, &out),
        Command::Warp { frames, flows, out } => commands::warp(ctx, &frames, &flows, &out),
        Command::Corrupt { input, level, mode, seed, out } => {
            commands::corrupt(ctx, &input, level.parse()?, mode.parse::<CorruptionMode>()?, seed, &out)
        }
        Command::Sensitivity { metric, checkpoint, seed, levels, out, inputs } => {
            let levels = match levels {
                None => Level::ALL.to_vec(),
                Some(s) => s.split(',').map(|l| l.trim().parse()).collect::<motionbench::Result<Vec<Level>>>()?,
            };
            commands::sensitivity(ctx, checkpoint.as_deref(), metric, seed, &levels, &inputs, &out)
        }
        Command::Correlate { ratings, scores, question, labels, out } => {
            commands::correlate(ctx, &ratings, &scores, &question, labels.as_deref(), &out)
        }
        Command::Synth { kind, frames, tracks, seed, width, height, vx, vy, omega, zoom, jitter, margin, count, out } => {
            let args = SynthArgs {
                kind: kind.parse::<SynthKind>()?,
                frames,
                tracks,
                seed,
                params: SynthParams {
                    width,
                    height,
                    velocity: [vx, vy],
                    omega,
                    zoom,
                    jitter_std: jitter,
                    margin,
                },
                count,
            };
            commands::synth(ctx, &args, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Io => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
