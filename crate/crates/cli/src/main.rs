use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maskvid::config::resolve_config;
use maskvid::run::{execute, Command, OUT_ENV};

/// Text-to-video generation on the moving-shapes world with a masked video
/// transformer.
#[derive(Parser, Debug)]
#[command(name = "maskvid", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run config; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (same as `seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training steps (same as `train.steps=N`).
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Prompt (same as `generate.text=...`).
    #[arg(long, global = true)]
    text: Option<String>,
    /// PNG frame whose non-black patches are kept fixed as the first frame.
    #[arg(long, global = true)]
    partial_image: Option<PathBuf>,
    /// Output root for run directories.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Dotted-key overrides, e.g. `sampler.B=5`.
    #[arg(global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Render the training clips.
    GenData,
    /// Fit the patch codebook on the dataset.
    FitCodebook,
    /// Train the transformer.
    Train,
    /// Generate one video from a prompt.
    Generate,
    /// Generate a long video by sliding the window forward.
    Extrapolate,
    /// Generate a video, then fill in a frame between every pair.
    Interpolate,
    /// Score generations with the pixel oracle.
    Eval,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GenData => Command::GenData,
            Cmd::FitCodebook => Command::FitCodebook,
            Cmd::Train => Command::Train,
            Cmd::Generate => Command::Generate,
            Cmd::Extrapolate => Command::Extrapolate,
            Cmd::Interpolate => Command::Interpolate,
            Cmd::Eval => Command::Eval,
        }
    }
}

fn toml_string(s: &str) -> String {
    format!("{s:?}")
}

fn run(cli: Cli) -> maskvid::Result<()> {
    let mut overrides = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(s) = cli.steps {
        overrides.push(format!("train.steps={s}"));
    }
    if let Some(t) = &cli.text {
        overrides.push(format!("generate.text={}", toml_string(t)));
    }
    if let Some(p) = &cli.partial_image {
        overrides.push(format!("generate.partial_image={}", toml_string(&p.to_string_lossy())));
    }
    overrides.extend(cli.overrides.iter().cloned());
    let cfg = resolve_config(cli.config.as_deref(), &overrides)?;
    let report = execute(cli.command.into(), cfg, &cli.out)?;
    println!("{}", report.summary.trim_end());
    println!("run directory: {}", report.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
