use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nameprobe::audit::{self, AuditConfig};
use nameprobe::Error;

/// Audit a language model for given-name grounding artifacts.
#[derive(Parser)]
#[command(name = "nameprobe", version)]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Replace every remote endpoint with the bundled scripted mocks.
    #[arg(long, global = true)]
    mock: bool,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the config's worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Last-name prediction tables.
    Grounding,
    /// Given-name recovery scores.
    Recovery,
    /// Negative-sentiment ranking.
    Sentiment,
    /// Name-swap flip rates.
    Swap,
    /// Every probe enabled in the config.
    All,
    /// Re-check a finished run directory against its detail rows.
    Verify {
        /// Run directory; defaults to the one `all` would write.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Grounding => "grounding",
            Command::Recovery => "recovery",
            Command::Sentiment => "sentiment",
            Command::Swap => "swap",
            Command::All => "all",
            Command::Verify { .. } => "verify",
        }
    }
}

fn config_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let config = match &cli.config {
        Some(p) => AuditConfig::load(p),
        None => Ok(AuditConfig::default()),
    };
    let mut config = match config {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if let Some(dir) = cli.output_dir {
        config.output_dir = dir;
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }

    if let Command::Verify { run_dir } = &cli.command {
        let bank = match config.bank() {
            Ok(b) => b,
            Err(e) => return config_error(&Error::Config(e.to_string())),
        };
        let dir = match run_dir {
            Some(d) => d.clone(),
            None => match audit::probes_for("all", &config) {
                Ok(p) => config.run_dir(&config.run_id(&p, cli.mock, &bank)),
                Err(e) => return config_error(&e),
            },
        };
        return match audit::verify(&dir, &bank) {
            Ok(found) if found.is_empty() => {
                println!("{}: consistent", dir.display());
                ExitCode::SUCCESS
            }
            Ok(found) => {
                for d in &found {
                    println!("{d}");
                }
                ExitCode::from(1)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }

    let probes = match audit::probes_for(cli.command.name(), &config) {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    match audit::run(&config, &probes, cli.mock) {
        Ok(outcome) => {
            println!("{}", outcome.run_dir.display());
            match outcome.failure {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => config_error(&e),
    }
}
