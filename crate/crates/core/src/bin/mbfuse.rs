use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mbfuse::cli::{cmd_degrade, cmd_fim, cmd_fuse, cmd_metrics, Experiment};

#[derive(Parser)]
#[command(name = "mbfuse", version, about = "Multiband image fusion driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade the reference scene into the configured products.
    Degrade(Common),
    /// Fuse the degraded products.
    Fuse(Common),
    /// Score estimates against the reference.
    Metrics(Common),
    /// Fisher-information identifiability report on a small crop.
    Fim(Common),
}

fn threads() -> Result<usize, String> {
    match std::env::var("MBFUSE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("MBFUSE_THREADS must be a non-negative integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> mbfuse::Result<()> {
    let (Command::Degrade(c) | Command::Fuse(c) | Command::Metrics(c) | Command::Fim(c)) = &cli.command;
    let exp = Experiment::load(&c.config, c.out.as_deref())?;
    let written = match cli.command {
        Command::Degrade(_) => cmd_degrade(&exp)?,
        Command::Fuse(_) => cmd_fuse(&exp)?,
        Command::Metrics(_) => cmd_metrics(&exp)?,
        Command::Fim(_) => {
            print!("{}", cmd_fim(&exp)?);
            return Ok(());
        }
    };
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let n = match threads() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
