//! `cap-trade`: runs a scenario through the library and writes JSON/CSV
//! results into an output directory.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CAP_TRADE_OUT";

#[derive(Debug, Parser)]
#[command(name = "cap-trade", version, about = "Cap-and-trade equilibrium and regulator scenarios")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scenario file (JSON) or preset name.
    #[arg(long, global = true, default_value = cap_trade::scenario::EU_NETZERO_2050)]
    pub scenario: String,
    /// Number of identical firms when --scenario names a preset.
    #[arg(long, global = true)]
    pub n_firms: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $CAP_TRADE_OUT, then the scenario's
    /// output_dir, then ./cap-trade-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Equilibrium price, sensitivities and (optionally) a simulated ensemble.
    Equilibrium {
        /// Closed-form outputs only.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Optimal price and allocation of the regulator, with optional sweeps.
    Regulator {
        /// Ratio surface over weight factors, e.g. `ymu=1/50..50 ypi=1/50..50`.
        #[arg(long, num_args = 1..=2)]
        sweep: Vec<String>,
        /// Points per swept axis, log-spaced.
        #[arg(long, default_value_t = 5)]
        sweep_points: usize,
        /// Cost-curve variations, e.g. `ymu/10 ypi*1e5`.
        #[arg(long, num_args = 1..)]
        curves: Vec<String>,
        /// Upper end of the cost-curve price grid, €/tCO₂ (default: twice the net-zero price).
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long, default_value_t = 1001)]
        x_points: usize,
    },
    /// Inflation caused by the permit price.
    Inflation,
    /// Closed-form calibration from the scenario's calibration section.
    Calibrate,
    /// Monte Carlo ensemble of the equilibrium.
    Simulate {
        #[arg(long, hide = true, default_value_t = 1.0)]
        inject_fault: f64,
    },
    /// Runs the brute-force checks; exits 2 if any fails.
    Verify {
        /// Comma-separated subset of foc, minimizer, ensemble, jensen.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
        /// Number of random allocations in the Jensen check.
        #[arg(long, default_value_t = 100)]
        allocations: usize,
        /// Multiplies f(t) in the simulated price; anything but 1 must fail.
        #[arg(long, hide = true, default_value_t = 1.0)]
        inject_fault: f64,
    },
}

/// What went wrong, mapped onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Verification(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Verification(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "error: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<cap_trade::Error> for Failure {
    fn from(e: cap_trade::Error) -> Self {
        match e {
            cap_trade::Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.code())
        }
    }
}
