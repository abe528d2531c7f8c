use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use hopflayer_cli::{execute, exit_code, Command};

#[derive(Parser)]
#[command(version, about = "Layered viscosity solutions of u_t + H(t, Du) = 0")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(clap::Args)]
struct Io {
    /// Problem file (JSON, schema hopflayer/1)
    #[arg(long)]
    spec: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the problem file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Tabulate u and the maximizer-set diameter on the (t, x) grid
    Solve(Io),
    /// Hopf comparison, semiconvexity, PDE residual and gluing checks
    Verify(Io),
    /// Forward strips and backward characteristic search
    Chars(Io),
    /// Singular points, gradient sets and singular arcs
    Singular(Io),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, io) = match cli.command {
        Verb::Solve(io) => (Command::Solve, io),
        Verb::Verify(io) => (Command::Verify, io),
        Verb::Chars(io) => (Command::Chars, io),
        Verb::Singular(io) => (Command::Singular, io),
    };
    let start = Instant::now();
    let result = execute(command, &io.spec, &io.out, io.seed);
    match &result {
        Ok(report) => {
            eprintln!("wrote {} to {}", report.outputs.join(", "), io.out.display());
            for f in &report.failures {
                eprintln!("tolerance failure: {f}");
            }
        }
        Err(e) => eprintln!("error: {e:#}"),
    }
    eprintln!("wall time {:.3} s", start.elapsed().as_secs_f64());
    ExitCode::from(exit_code(&result) as u8)
}
