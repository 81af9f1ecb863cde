//! `gfmp`: design, impedance, simulation, scan and spectrum experiments.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gfmp", version, about = "Virtual-admittance grid-forming inverter experiments")]
pub struct Cli {
    /// TOML configuration; missing keys take the reference defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "gfmp-out")]
    pub out: PathBuf,
    /// Also write a matplotlib script next to every CSV.
    #[arg(long, global = true)]
    pub plot_scripts: bool,
    /// Do not list defaulted config keys on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Ideal,
    Closed,
    Delay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VaArg {
    #[value(alias = "conventional")]
    Conv,
    #[value(alias = "proposed")]
    Prop,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parallel-resistor admittance design at the fundamental.
    Design,
    /// Bode data, passivity bands and return-ratio crossovers.
    Impedance {
        #[arg(long, value_enum, default_value = "delay")]
        variant: Variant,
        #[arg(long, value_enum, default_value = "prop")]
        va: VaArg,
        /// `scr=4,xr=4` or `r=0.98,l=0.0104` (ohm, henry).
        #[arg(long)]
        grid_spec: Option<String>,
        /// Fit K_cc,p to the target gain and phase crossovers.
        #[arg(long)]
        calibrate: bool,
    },
    /// Time-domain run with an admittance schedule.
    Simulate {
        /// `proposed@0,conventional@0.4,proposed@0.5`, or a single mode.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Small-signal impedance measured by series voltage injection.
    Scan {
        /// Explicit comma-separated list in Hz.
        #[arg(long, value_delimiter = ',')]
        frequencies: Option<Vec<f64>>,
    },
    /// Spectrum of one channel of a trace CSV.
    Fft {
        trace: PathBuf,
        #[arg(long)]
        channel: Option<String>,
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        t1: Option<f64>,
    },
}

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        Self::Input(e.into())
    }

    pub fn numeric(e: impl Into<anyhow::Error>) -> Self {
        Self::Numeric(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("numeric failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
