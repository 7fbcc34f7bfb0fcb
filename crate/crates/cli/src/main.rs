//! `fluidrecon`: synthetic scenes, training, mesh extraction, matching and
//! evaluation from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluidrecon_core::Error;

#[derive(Parser, Debug)]
#[command(name = "fluidrecon", version, about = "4D surface reconstruction with fluid priors")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Training configuration (TOML).
    #[arg(long, global = true, env = "FLUIDRECON_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "FLUIDRECON_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FLUIDRECON_THREADS")]
    pub threads: Option<usize>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true, env = "FLUIDRECON_OUT", default_value = "fluidrecon-out")]
    pub out: PathBuf,
    /// Config override such as `optimizer.lr=1e-3` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic frame sequence and its manifest.
    GenScene(commands::GenSceneArgs),
    /// Fit the geometry and velocity networks to a frame sequence.
    Train(commands::TrainArgs),
    /// Extract meshes from a checkpoint.
    Reconstruct(commands::ReconstructArgs),
    /// Match points between two times by flowing them through the velocity.
    Match(commands::MatchArgs),
    /// Chamfer distance between two meshes or point sets.
    Eval(commands::EvalArgs),
}

/// Exit status and category of a failure.
fn classify(err: &Error) -> (u8, &'static str) {
    match err {
        Error::Domain(_) => (64, "usage"),
        Error::Config(_) | Error::Shape(_) => (65, "config"),
        Error::Io { .. } | Error::Ingest { .. } | Error::Checkpoint(_) => (66, "io"),
        Error::Numerical(_) => (70, "numerical"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("fluidrecon: error category=usage code=64: cannot size thread pool: {e}");
            return ExitCode::from(64);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = classify(&err);
            let msg = err.to_string().replace('\n', " ");
            eprintln!("fluidrecon: error category={category} code={code}: {msg}");
            ExitCode::from(code)
        }
    }
}
