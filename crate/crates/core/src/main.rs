use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tdsynth::cli::{self, CliError, GenerateArgs};
use tdsynth::powerflow::SolverOptions;

#[derive(Parser)]
#[command(name = "tdsynth", version, about = "Combined transmission and distribution network synthesis")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a combined case from a config file.
    Generate {
        config: PathBuf,
        /// Directory holding the template bundles named in the config.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value = "output")]
        out: PathBuf,
        /// Overrides `rng_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the replica stage.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Validate and solve a case bundle.
    Inspect { case_dir: PathBuf },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Generate {
            config,
            templates,
            out,
            seed,
            jobs,
        } => {
            let args = GenerateArgs {
                config,
                templates: templates.unwrap_or_else(cli::default_templates),
                out,
                seed,
                jobs,
            };
            let (dir, summary) = cli::generate(&args)?;
            print!("{}", summary.render());
            println!("wrote {}", dir.display());
        }
        Command::Inspect { case_dir } => {
            let report = cli::inspect(&case_dir, &SolverOptions::default())?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
