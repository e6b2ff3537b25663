use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use embserve::scenario::Scenario;
use embserve::service;
use embserve::sim::{self, report_bytes, trace::Trace};

#[derive(Parser)]
#[command(name = "embserve", version, about = "Versioned embeddings serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded interleaving and check every invariant.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a range of seeds (`a..b` or `a..=b`) and aggregate the verdicts.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-execute a recorded trace; fails if any step diverges.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the engine with the linear-scan reference on random queries.
    OracleCheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1000)]
        instances: u64,
    },
    /// Serve the orchestrator line protocol.
    ServeEo {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        source: service::SourceArgs,
    },
    /// Serve the recommendation line protocol.
    ServeRecs {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        source: service::SourceArgs,
    },
}

fn emit(bytes: &[u8], path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { scenario, seed, trace, report } => {
            let scenario = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let out = sim::run_scenario(&scenario, seed)?;
            if let Some(path) = &trace {
                out.trace.save(path)?;
            }
            emit(&out.report_bytes(), report.as_ref())?;
            Ok(verdict(out.summary.passed))
        }
        Command::Sweep { scenario, seeds, report } => {
            let scenario = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let out = sim::sweep(&scenario, sim::parse_seed_range(&seeds)?)?;
            emit(&report_bytes(&out.report), report.as_ref())?;
            Ok(verdict(out.passed()))
        }
        Command::Replay { trace, report } => {
            let trace = Trace::load(&trace).with_context(|| format!("loading {}", trace.display()))?;
            let out = sim::replay(&trace)?;
            emit(&out.report_bytes(), report.as_ref())?;
            Ok(verdict(out.summary.passed))
        }
        Command::OracleCheck { scenario, instances } => {
            let scenario = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let out = sim::oracle_check(&scenario, instances)?;
            emit(&report_bytes(&out.to_json()), None)?;
            Ok(verdict(out.passed()))
        }
        Command::ServeEo { port, host, source } => {
            service::serve_eo(&format!("{host}:{port}"), source.deployment()?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ServeRecs { port, host, source } => {
            service::serve_recs(&format!("{host}:{port}"), source.deployment()?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
