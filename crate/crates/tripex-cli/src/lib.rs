// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Command-line front end for the `tripex` simulation library.
//!
//! Four subcommands cover the workflow: `spectrum` (static levels),
//! `exchange-report` (coherence survival across a functional benchmark
//! table), `evolve` (time traces with optional decay), and `echo`
//! (integrated Hahn-echo tau sweeps).  All of them share the same flags:
//!
//! ```text
//! --config PATH      key = value configuration file
//! --preset table1    built-in configuration for the bundled dataset
//! --out PATH|-       output destination (default stdout)
//! --format csv|json  output encoding (default csv)
//! --seed N           override the echo ensemble seed
//! ```
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! numerical failures.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tripex::error::{Error, Result};

use commands::CommandOutput;
use config::{parse_config, preset_table1, RunConfig};
use output::{OutFormat, OutTarget};

/// Spin-exciton coherence toolkit: spectra, exchange screening, time
/// evolution, and spin-echo simulation for a triplet-exciton / spin-1/2
/// pair.
#[derive(Debug, Parser)]
#[command(name = "tripex", version, about, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Print the static energy levels with their degeneracies.
    Spectrum(CommonArgs),
    /// Score a functional benchmark table for coherence survival.
    #[command(name = "exchange-report")]
    ExchangeReport(CommonArgs),
    /// Evolve an initial product state and print observable traces.
    Evolve(CommonArgs),
    /// Sweep a Hahn-echo delay and print integrated echo amplitudes.
    Echo(CommonArgs),
}

impl Cmd {
    fn common(&self) -> &CommonArgs {
        match self {
            Cmd::Spectrum(args)
            | Cmd::ExchangeReport(args)
            | Cmd::Evolve(args)
            | Cmd::Echo(args) => args,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file (key = value with [section] headers).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output destination; `-` means stdout.
    #[arg(long, value_name = "PATH|-")]
    pub out: Option<String>,

    /// Output encoding.
    #[arg(long, value_enum, value_name = "csv|json")]
    pub format: Option<FormatArg>,

    /// Random-number seed override for the echo detuning ensemble.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Built-in configuration (mutually exclusive with --config).
    #[arg(long, value_enum, value_name = "NAME")]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutFormat {
    fn from(value: FormatArg) -> Self {
        match value {
            FormatArg::Csv => OutFormat::Csv,
            FormatArg::Json => OutFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Table1,
}

/// Resolve the effective configuration from `--preset` / `--config`.
fn build_config(args: &CommonArgs) -> Result<RunConfig> {
    match (&args.preset, &args.config) {
        (Some(_), Some(_)) => Err(Error::InvalidInput(
            "--preset and --config are mutually exclusive; pick one".into(),
        )),
        (Some(Preset::Table1), None) => Ok(preset_table1()),
        (None, Some(path)) => parse_config(path),
        (None, None) => Ok(RunConfig::default()),
    }
}

fn execute(cmd: &Cmd) -> Result<(CommandOutput, OutTarget)> {
    let args = cmd.common();
    let cfg = build_config(args)?;
    let format: OutFormat = args
        .format
        .map(OutFormat::from)
        .or(cfg.output.format)
        .unwrap_or(OutFormat::Csv);
    let target = OutTarget::parse(
        args.out
            .as_deref()
            .or(cfg.output.out.as_deref())
            .unwrap_or("-"),
    );
    let output = match cmd {
        Cmd::Spectrum(_) => commands::cmd_spectrum(&cfg, format)?,
        Cmd::ExchangeReport(_) => commands::cmd_exchange_report(&cfg, format)?,
        Cmd::Evolve(_) => commands::cmd_evolve(&cfg, format)?,
        Cmd::Echo(_) => commands::cmd_echo(&cfg, format, args.seed)?,
    };
    Ok((output, target))
}

/// Exit code for an error: 1 for usage/configuration problems, 2 for
/// numerical failures.
pub fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::ParseError { .. }
        | Error::Io { .. }
        | Error::InvalidInput(_)
        | Error::InvalidValue { .. }
        | Error::DimensionMismatch { .. }
        | Error::UnresolvedTauGrid { .. }
        | Error::FrameNotCommuting { .. } => 1,
        Error::NumericalFailure(_)
        | Error::EigensolverNoConvergence { .. }
        | Error::StepTooLarge { .. }
        | Error::NotHermitian { .. }
        | Error::InvalidState(_) => 2,
    }
}

/// Run a parsed command line to completion and return the process exit
/// code.  Warnings go to stderr; the document goes to the configured
/// target.
pub fn run(cli: &Cli) -> i32 {
    match execute(&cli.command) {
        Ok((output, target)) => {
            for warning in &output.warnings {
                eprintln!("warning: {warning}");
            }
            match target.write(&output.body) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_for(&e)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_and_config_are_mutually_exclusive() {
        let args = CommonArgs {
            config: Some(PathBuf::from("anything.cfg")),
            out: None,
            format: None,
            seed: None,
            preset: Some(Preset::Table1),
        };
        let err = build_config(&args).unwrap_err();
        assert_eq!(exit_code_for(&err), 1);
    }

    #[test]
    fn usage_errors_and_numerical_errors_use_distinct_exit_codes() {
        assert_eq!(
            exit_code_for(&Error::InvalidInput("x".into())),
            1
        );
        assert_eq!(
            exit_code_for(&Error::NumericalFailure("x".into())),
            2
        );
    }

    #[test]
    fn cli_parses_the_documented_subcommands() {
        let cli = Cli::try_parse_from(["tripex", "spectrum", "--format", "json"]).unwrap();
        match cli.command {
            Cmd::Spectrum(args) => assert_eq!(args.format, Some(FormatArg::Json)),
            _ => panic!("expected spectrum"),
        }
        let cli =
            Cli::try_parse_from(["tripex", "exchange-report", "--preset", "table1"]).unwrap();
        match cli.command {
            Cmd::ExchangeReport(args) => assert_eq!(args.preset, Some(Preset::Table1)),
            _ => panic!("expected exchange-report"),
        }
        assert!(Cli::try_parse_from(["tripex", "nonsense"]).is_err());
        assert!(Cli::try_parse_from(["tripex"]).is_err());
    }
}
