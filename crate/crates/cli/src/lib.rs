//! File formats and commands of the `hopflayer` binary.

pub mod emit;
pub mod run;
pub mod spec;

use std::path::Path;

use emit::RunReport;
use spec::{ProblemSpec, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    Chars,
    Singular,
}

/// Process exit status for a finished or failed run.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const TOLERANCE: i32 = 3;
}

/// Loads the problem, applies the seed override, writes
/// `spec.resolved.json` and the command outputs into `out`, and returns the
/// report (already written as `report.json`).
pub fn execute(command: Command, spec_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<RunReport> {
    let mut spec = ProblemSpec::load(spec_path)?;
    if let Some(s) = seed {
        spec.seed = Some(s);
    }
    let problem = spec.resolve()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("spec.resolved.json"), problem.spec.to_json())?;
    let mut report = match command {
        Command::Solve => run::solve(&problem, out),
        Command::Verify => run::verify(&problem, out),
        Command::Chars => run::chars(&problem, out),
        Command::Singular => run::singular(&problem, out),
    }?;
    report.outputs.insert(0, "spec.resolved.json".to_owned());
    report.write(out)?;
    Ok(report)
}

/// Exit status for the outcome of [`execute`].
pub fn exit_code(result: &anyhow::Result<RunReport>) -> i32 {
    match result {
        Ok(r) if r.failures.is_empty() => exit::OK,
        Ok(_) => exit::TOLERANCE,
        Err(e) if e.downcast_ref::<ValidationError>().is_some() => exit::VALIDATION,
        Err(_) => exit::ERROR,
    }
}
