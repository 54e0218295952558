//! `gcndance` command-line front end.

mod commands;
mod config;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gcndance::audio::StyleLabel;

use crate::commands::StyleSource;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "gcndance", version, about = "Audio-conditioned dance motion synthesis")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Ballet,
    Mj,
    Salsa,
}

impl From<StyleArg> for StyleLabel {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Ballet => StyleLabel::Ballet,
            StyleArg::Mj => StyleLabel::MJ,
            StyleArg::Salsa => StyleLabel::Salsa,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic three-style fixture corpus and its manifest.
    SynthCorpus,
    /// Train the audio style classifier with k-fold cross-validation.
    TrainClassifier,
    /// Train the motion GAN on the corpus training split.
    TrainGan {
        /// Trainer checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate a motion for a style or for the styles heard in an audio file.
    Generate {
        #[arg(long, value_enum, conflicts_with = "audio", required_unless_present = "audio")]
        style: Option<StyleArg>,
        #[arg(long)]
        audio: Option<PathBuf>,
        /// Frames to generate; a multiple of 16.
        #[arg(long, default_value_t = 64)]
        length: usize,
        /// Also render SVG frames and a GIF.
        #[arg(long)]
        frames: bool,
    },
    /// Compute FID, GAN-train and GAN-test of generated against real motions.
    Evaluate,
    /// Write the augmented training windows and dataset statistics.
    Augment,
    /// Render a motion file to per-frame SVG stick figures and a GIF.
    Render {
        motion: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Command::Render { motion } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| base.paths.out_dir.clone());
        let n = commands::render(motion, &out)?;
        println!("rendered {n} frames to {}", out.display());
        return Ok(());
    }
    let cfg = base.finish(cli.seed, cli.out)?;
    match cli.command {
        Command::SynthCorpus => {
            let p = commands::synth_corpus(&cfg)?;
            println!("manifest {}", p.display());
        }
        Command::TrainClassifier => {
            let p = commands::train_audio_classifier(&cfg)?;
            println!("report {}", p.display());
        }
        Command::TrainGan { resume } => {
            commands::train_gan(&cfg, resume.as_deref())?;
        }
        Command::Generate { style, audio, length, frames } => {
            let source = match (&audio, style) {
                (Some(a), _) => StyleSource::Audio(a),
                (None, Some(s)) => StyleSource::Fixed(s.into()),
                (None, None) => return Err(CliError::Config("one of --style or --audio is required".into())),
            };
            let (motion, record) = commands::generate(&cfg, source, length)?;
            let p = commands::write_generation(&cfg, &motion, &record, frames)?;
            let seq: Vec<&str> = record.styles.iter().map(|s| s.as_str()).collect();
            println!("styles {}", seq.join(","));
            println!("motion {}", p.display());
        }
        Command::Evaluate => {
            let p = commands::evaluate(&cfg)?;
            println!("report {}", p.display());
        }
        Command::Augment => {
            let p = commands::augment(&cfg)?;
            println!("windows {}", p.display());
        }
        Command::Render { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
