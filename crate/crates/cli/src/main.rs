//! `cir-chaos` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a computation or validation check fails,
//! 2 on invalid input. Errors go to stderr as `error[Name]: message`.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cir-chaos", version, about = "CIR bond pricing through Fredholm operators and Wiener chaos")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command; each overrides the matching config key.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config with sections model, grid, mc and task.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write results to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub c: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_bar: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub r0: Option<f64>,
    /// Quadrature nodes of the operator discretization.
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    /// gauss_legendre or trapezoid (used by `spectrum`).
    #[arg(long, global = true)]
    pub rule: Option<String>,
    #[arg(long, global = true)]
    pub n_paths: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Zero-coupon bond price as JSON.
    Price(commands::PriceArgs),
    /// Operator and closed-form prices over a maturity sweep, as CSV.
    Curve(commands::CurveArgs),
    /// Chaos coefficients on time tuples, as CSV.
    Chaos(commands::ChaosArgs),
    /// Exponential-quadratic expectation of a finite-rank functional, as JSON.
    Expquad(commands::ExpquadArgs),
    /// Run the acceptance checks.
    Validate(commands::ValidateArgs),
    /// Dump simulated paths as CSV.
    Simulate(commands::SimulateArgs),
    /// Eigenvalues of the discretized kernel, as CSV.
    Spectrum(commands::SpectrumArgs),
}

/// A failure with its exit code and structured name.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub name: &'static str,
    pub message: String,
}

impl CliError {
    pub fn input(name: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: 2,
            name,
            message: message.into(),
        }
    }

    pub fn failure(name: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: 1,
            name,
            message: message.into(),
        }
    }
}

impl From<cir_chaos::Error> for CliError {
    fn from(e: cir_chaos::Error) -> Self {
        use cir_chaos::Error as E;
        let code = match e {
            E::InvalidParameter { .. } | E::NonIntegerDimension { .. } | E::InvalidTimeOrder { .. } | E::OutOfDomain { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            name: e.name(),
            message: e.to_string(),
        }
    }
}

/// Output of a successful command: the payload and whether all checks passed.
pub struct Outcome {
    pub text: String,
    pub ok: bool,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let file = config::FileConfig::load(cli.common.config.as_deref())?;
    let ctx = commands::Context::new(&cli.common, file);
    match cli.command {
        Command::Price(args) => commands::price(&ctx, &args),
        Command::Curve(args) => commands::curve(&ctx, &args),
        Command::Chaos(args) => commands::chaos(&ctx, &args),
        Command::Expquad(args) => commands::expquad(&ctx, &args),
        Command::Validate(args) => commands::validate(&ctx, &args),
        Command::Simulate(args) => commands::simulate(&ctx, &args),
        Command::Spectrum(args) => commands::spectrum(&ctx, &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.common.out.clone();
    let start = Instant::now();
    let result = run(cli);
    eprintln!("elapsed {:.3}s", start.elapsed().as_secs_f64());
    match result {
        Ok(outcome) => {
            let written = match &out {
                Some(path) => std::fs::write(path, &outcome.text),
                None => std::io::stdout().write_all(outcome.text.as_bytes()),
            };
            if let Err(e) = written {
                eprintln!("error[OutputError]: {e}");
                return ExitCode::from(1);
            }
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.name, e.message);
            ExitCode::from(e.code)
        }
    }
}
