use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use darw::cli::{self, CliError, Overrides, Report};

#[derive(Parser)]
#[command(name = "darw", version, about = "Incremental forgery-detection experiments with generative replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy over every seed.
    Run(Common),
    /// Run several strategies on identical streams and seeds.
    Compare(Common),
    /// Run the cartesian grid of the `[ablate]` section.
    Ablate(Common),
    /// Check a config without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

fn overrides(c: &Common) -> Result<Overrides, CliError> {
    Ok(Overrides {
        out: c.out.clone(),
        seeds: c.seeds.as_deref().map(cli::parse_seeds).transpose()?,
        jobs: c.jobs,
    })
}

fn dispatch(command: &Command) -> Result<Report, CliError> {
    match command {
        Command::Run(c) => cli::cmd_run(&c.config, &overrides(c)?),
        Command::Compare(c) => cli::cmd_compare(&c.config, &overrides(c)?),
        Command::Ablate(c) => cli::cmd_ablate(&c.config, &overrides(c)?),
        Command::Validate(c) => cli::cmd_validate(&c.config, &overrides(c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    match dispatch(&args.command) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            if let Some(out) = &report.out {
                println!("outputs in {}", out.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
