//! Structural-priming pipeline driver: generate stimuli, score them through
//! the configured backends, and turn the caches into metrics, preference
//! tables, and regression fits.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod pipeline;

use config::RunConfig;
use pipeline::{config_error, Ctx, Failure};

#[derive(Parser)]
#[command(name = "primelens", version, about = "Structural-priming measurement pipeline")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "primelens.toml")]
    config: PathBuf,
    /// Override the corpus generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict the run to these model ids (comma-separated).
    #[arg(long, global = true)]
    models: Option<String>,
    /// Restrict the run to these conditions (comma-separated).
    #[arg(long, global = true)]
    conditions: Option<String>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Omit wall-clock fields so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic_output: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the stimulus corpus and re-check every item.
    Generate,
    /// Score every leg the run needs, populating the caches.
    Score,
    /// Compute metrics, preferences, and regressions from the caches.
    Analyze,
    /// Verb structural preferences and their rank correlations only.
    Prefs,
    /// The mixed-model regression only.
    Regress,
    /// Summarize a previous analyze into one text report.
    Report,
}

fn build_ctx(cli: &Cli) -> Result<Ctx, Failure> {
    let config = RunConfig::load(&cli.config).map_err(config_error)?;
    let conditions = config.selected_conditions(cli.conditions.as_deref()).map_err(config_error)?;
    let models = config
        .selected_backends(cli.models.as_deref())
        .map_err(config_error)?
        .into_iter()
        .cloned()
        .collect();
    let out = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    let seed = cli.seed.unwrap_or(config.corpus.seed);
    let deterministic = cli.deterministic_output || config.deterministic_output;
    Ok(Ctx { config, out, conditions, models, seed, deterministic })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let ctx = build_ctx(cli)?;
    match cli.command {
        Command::Generate => commands::cmd_generate(&ctx),
        Command::Score => commands::cmd_score(&ctx),
        Command::Analyze => commands::cmd_analyze(&ctx),
        Command::Prefs => commands::cmd_prefs(&ctx),
        Command::Regress => commands::cmd_regress(&ctx),
        Command::Report => commands::cmd_report(&ctx),
    }
}

fn main() -> ExitCode {
    // Usage mistakes share exit code 4 with other configuration errors;
    // code 2 stays reserved for invariant violations.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let usage = !matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            return if usage { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.inner());
            ExitCode::from(failure.code() as u8)
        }
    }
}
