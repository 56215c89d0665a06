use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use comit_core::simnet::{demo, run_scenario, validate_scenario, Report, Scenario, ScenarioError, DEMOS};

/// Runs cross-chain payment scenarios and checks their invariants.
#[derive(Parser)]
#[command(name = "comit-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and emit its report.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Run one of the bundled scenarios.
    Demo {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(DEMOS.iter().map(|(n, _)| *n)))]
        name: String,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, report, format } => load(&scenario).and_then(|mut s| {
            if let Some(seed) = seed {
                s.seed = seed;
            }
            emit(&run_scenario(&s), format, report.as_deref())
        }),
        Command::Validate { scenario } => load(&scenario).map(|s| {
            println!(
                "ok: {} chains, {} actors, {} channels, {} payments, {} faults",
                s.chains.len(),
                s.actors.len(),
                s.channels.len(),
                s.payments.len(),
                s.faults.len()
            );
            true
        }),
        Command::Demo { name, report, format } => {
            let text = demo(&name).expect("clap restricts demo names");
            parse(&name, text).and_then(|s| emit(&run_scenario(&s), format, report.as_deref()))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&path.display().to_string(), &text)
}

fn parse(name: &str, text: &str) -> Result<Scenario, String> {
    validate_scenario(text).map_err(|errs: Vec<ScenarioError>| {
        let lines: Vec<String> = errs.iter().map(|e| format!("{name}: {e}")).collect();
        lines.join("\n")
    })
}

/// Writes the report; returns whether every invariant held.
fn emit(report: &Report, format: Format, path: Option<&Path>) -> Result<bool, String> {
    let body = match format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    };
    match path {
        Some(p) => std::fs::write(p, &body).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{body}"),
    }
    Ok(report.is_clean())
}
