//! `conjoint`: generate, run, simulate, analyze, report.
//!
//! Exit codes: 0 ok, 2 config, 3 auth, 4 empty data, 5 unfinished schedule
//! (transport retries exhausted or other terminal failures), 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use conjoint_core::config::ExperimentConfig;
use conjoint_core::pipeline;
use conjoint_core::stats::{FixedEffect, GroupBy, PValueReference};
use conjoint_core::PipelineError;

#[derive(Parser, Debug)]
#[command(name = "conjoint", version, about = "Factorial conjoint experiments on LLM policy scores")]
struct Cli {
    /// Experiment config (TOML). Without one, the built-in design and
    /// default settings are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the request, shuffle and oracle seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate vignettes and write them with their rendered prompts.
    Generate,
    /// Query the configured live model, resuming any existing run log.
    Run,
    /// Answer the schedule with the simulated respondent.
    Simulate,
    /// Estimate summary and regression tables from run logs.
    Analyze {
        /// Run logs; defaults to the configured model's log.
        logs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        group_by: Option<Grouping>,
        #[arg(long, value_enum)]
        fixed_effect: Option<Fe>,
        #[arg(long, value_enum)]
        p_reference: Option<Reference>,
    },
    /// Re-render tables from a previous analysis.
    Report,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Grouping {
    Scenario,
    Model,
    Pooled,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Fe {
    None,
    Scenario,
    Model,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Reference {
    T,
    Normal,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.override_out_dir(std::path::absolute(dir).unwrap_or_else(|_| dir.clone()));
    }
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<String, PipelineError> {
    let mut cfg = load(cli)?;
    match &cli.command {
        Command::Generate => pipeline::cmd_generate(&cfg),
        Command::Run => pipeline::cmd_run(&cfg),
        Command::Simulate => pipeline::cmd_simulate(&cfg),
        Command::Analyze {
            logs,
            group_by,
            fixed_effect,
            p_reference,
        } => {
            if let Some(g) = group_by {
                cfg.analysis.group_by = match g {
                    Grouping::Scenario => GroupBy::Scenario,
                    Grouping::Model => GroupBy::Model,
                    Grouping::Pooled => GroupBy::Pooled,
                };
            }
            if let Some(fe) = fixed_effect {
                cfg.analysis.fixed_effect = Some(match fe {
                    Fe::None => FixedEffect::None,
                    Fe::Scenario => FixedEffect::Scenario,
                    Fe::Model => FixedEffect::Model,
                });
            }
            if let Some(r) = p_reference {
                cfg.analysis.p_reference = match r {
                    Reference::T => PValueReference::StudentT,
                    Reference::Normal => PValueReference::StandardNormal,
                };
            }
            pipeline::cmd_analyze(&cfg, logs)
        }
        Command::Report => pipeline::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
