//! `satpi` command-line tool. Every subcommand takes a TOML run config and
//! writes its results under the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satpi::commands::{cmd_analyze, cmd_certify, cmd_simulate, cmd_sweep, exit_code, write_manifest, Overrides};

#[derive(Parser)]
#[command(name = "satpi", version, about = "PI control with a saturating integrator: simulate, analyze, certify")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "satpi.toml")]
    config: PathBuf,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed; overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for campaigns. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate one closed-loop run.
    Simulate,
    /// Check the standing assumptions on the plant.
    Analyze,
    /// Run the gain, dwell-time and far-start campaigns.
    Certify,
    /// Far-start convergence sweep and windup comparison.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let over = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
    };
    let run = match cli.command {
        Command::Simulate => cmd_simulate,
        Command::Analyze => cmd_analyze,
        Command::Certify => cmd_certify,
        Command::Sweep => cmd_sweep,
    };
    match run(&cli.config, &over) {
        Ok(outcome) => {
            if let Err(e) = write_manifest(&outcome) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.code != 0 {
                eprintln!("claim not supported; see {}", outcome.out_dir.display());
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
