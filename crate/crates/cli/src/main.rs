use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use conda_core::pipeline::{self, Precision, RunConfig, Split, SweepAxis};
use conda_core::{Error, ErrorKind};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "conda-rv", version, about = "Domain adaptation for range-view LiDAR segmentation")]
struct Cli {
    /// JSON run configuration; missing keys come from its preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads; results are identical for any count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the source, target and held-out target sets as PCRV files.
    SynthGen,
    /// Project one PCRV cloud to a range image.
    Project {
        #[arg(long)]
        input: PathBuf,
    },
    /// Source-only training; writes w_r0.ckpt.
    Pretrain,
    /// Two-round self-training from a pre-trained checkpoint; writes w_r2.ckpt.
    Selftrain {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "target_val")]
        split: String,
        /// Write correctness overlays for the first N scenes.
        #[arg(long, default_value_t = 0)]
        overlay: usize,
    },
    /// One self-training run per value of a hyperparameter.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// k, sigma, varpi or template.
        #[arg(long)]
        axis: String,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Render source, target and concatenated range images.
    ConcatDemo,
    /// Occupancy statistics of the configured domains.
    Stats,
}

/// Summary to stdout; a closed pipe (e.g. `| head`) is not a failure.
fn print_json<T: Serialize>(v: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(v)?;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::warn!("could not write summary: {e}");
        }
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(&cli.preset)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        pipeline::configure_threads(n)?;
    }
    let cfg = resolve(&cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::SynthGen => print_json(&pipeline::cmd_synth_gen(&cfg, out)?),
        Command::Project { input } => print_json(&pipeline::cmd_project(&cfg, input, out)?),
        Command::Pretrain => print_json(&pipeline::cmd_pretrain(&cfg, out)?.target_val),
        Command::Selftrain { checkpoint } => print_json(&pipeline::cmd_selftrain(&cfg, checkpoint, out)?.target_val),
        Command::Eval {
            checkpoint,
            split,
            overlay,
        } => {
            let split: Split = split.parse()?;
            print_json(&pipeline::cmd_eval(&cfg, checkpoint, split, out, *overlay)?)
        }
        Command::Sweep {
            checkpoint,
            axis,
            values,
        } => {
            let axis: SweepAxis = axis.parse()?;
            print_json(&pipeline::cmd_sweep(&cfg, checkpoint, axis, values, out)?)
        }
        Command::ConcatDemo => print_json(&pipeline::cmd_concat_demo(&cfg, out)?),
        Command::Stats => print_json(&pipeline::cmd_stats(&cfg, out)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
