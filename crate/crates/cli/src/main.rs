//! `isopt`: weights, estimates, comparisons and optimizer runs from JSON
//! experiment configs.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime or support error,
//! 4 non-convergence under `optimize --strict`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isopt::bench::{cmd_compare, cmd_estimate, cmd_optimize, cmd_weights, BenchError, ConfigFile};

const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "isopt", version, about = "Variance-optimal importance sampling weights and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Moments, l1 and optimal weights with their analytic variances.
    Weights(Common),
    /// Run the configured estimator for every seed.
    Estimate(Common),
    /// CSV comparison of all methods; summary JSON on stdout.
    Compare(Common),
    /// Minimize the variance over overlapping bases, with the lattice oracle.
    Optimize(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment or case-list JSON; the bundled catalog when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace every case's seed list with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (the CSV for `compare`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 4 when the optimizer does not converge.
    #[arg(long)]
    strict: bool,
}

fn load(common: &Common) -> Result<ConfigFile, BenchError> {
    let mut file = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
            ConfigFile::parse(&text)?
        }
        None => ConfigFile::catalog(),
    };
    if let Some(seed) = common.seed {
        file.override_seed(seed);
    }
    Ok(file)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), BenchError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| BenchError::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| BenchError::Runtime(format!("stdout: {e}")))
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<u8, BenchError> {
    match cli.command {
        Command::Weights(c) => {
            let v = cmd_weights(&load(&c)?)?;
            write_out(c.out.as_deref(), &pretty(&v))?;
        }
        Command::Estimate(c) => {
            let v = cmd_estimate(&load(&c)?)?;
            write_out(c.out.as_deref(), &pretty(&v))?;
        }
        Command::Compare(c) => {
            let out = cmd_compare(&load(&c)?)?;
            match &c.out {
                Some(path) => {
                    write_out(Some(path), &out.to_csv())?;
                    write_out(None, &pretty(&out.summary_json()))?;
                }
                None => {
                    write_out(None, &out.to_csv())?;
                    eprint!("{}", pretty(&out.summary_json()));
                }
            }
        }
        Command::Optimize(c) => {
            let (v, converged) = cmd_optimize(&load(&c)?)?;
            write_out(c.out.as_deref(), &pretty(&v))?;
            if c.strict && !converged {
                eprintln!("optimizer did not converge");
                return Ok(EXIT_NOT_CONVERGED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("isopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
