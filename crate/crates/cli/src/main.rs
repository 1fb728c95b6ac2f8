use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use evsched::experiment::{run_scenario, sensitivity_sweep, Mode};
use evsched::oracle::OracleOutcome;
use evsched::report::{write_report, write_sweep_file};
use evsched::scenario::{DemandLevel, ScenarioConfig};

#[derive(Parser)]
#[command(name = "evsched", version, about = "EV charging-spot scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the CSV report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "consensus", value_parser = ["consensus", "priority", "both", "oracle"])]
        mode: String,
    },
    /// Repeat consensus runs while varying one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// alpha_over, iota, lookahead, iterations, xi or demand_level.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Solve a micro-scenario exactly.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Check a config and report what it describes.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the parallel sections.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = ["low", "medium", "high"])]
    demand_level: Option<String>,
}

enum Failure {
    Validation(anyhow::Error),
    Audit(Vec<String>),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Validation(e.into())
    }
}

fn load(c: &Common) -> Result<ScenarioConfig, Failure> {
    if let Some(n) = c.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("setting up the worker pool")?;
    }
    let mut cfg = ScenarioConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(level) = &c.demand_level {
        cfg.demand_level = level.parse::<DemandLevel>()?;
    }
    cfg.build()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { common, mode } => {
            let cfg = load(&common)?;
            let mode: Mode = mode.parse()?;
            report(&cfg, mode, &common)
        }
        Command::Oracle { common } => {
            let cfg = load(&common)?;
            report(&cfg, Mode::Oracle, &common)
        }
        Command::Sweep {
            common,
            parameter,
            values,
        } => {
            let cfg = load(&common)?;
            let rows = match sensitivity_sweep(&cfg, &parameter, &values) {
                Err(evsched::Error::Contract(msg)) => return Err(Failure::Audit(vec![msg])),
                other => other?,
            };
            write_sweep_file(&common.out, &rows)?;
            for r in &rows {
                println!(
                    "{} = {}: travel {:.2}, charging+penalty {:.2}, total {:.2}",
                    r.parameter,
                    r.value,
                    r.costs.travel,
                    r.charging_penalty(),
                    r.total
                );
            }
            Ok(())
        }
        Command::Validate { common } => {
            let cfg = load(&common)?;
            let model = cfg.build()?;
            let spots: u32 = model.net.capacities().iter().sum();
            println!(
                "{}: {} periods, {} lots, {} charging spots, seed {}",
                if cfg.name.is_empty() { "scenario" } else { &cfg.name },
                cfg.horizon,
                model.net.facilities.len(),
                spots,
                cfg.seed
            );
            Ok(())
        }
    }
}

fn report(cfg: &ScenarioConfig, mode: Mode, common: &Common) -> Result<(), Failure> {
    let result = run_scenario(cfg, mode)?;
    let net = cfg.build()?.net;
    write_report(&common.out, &result, &net)?;
    for run in &result.runs {
        println!("{}: total {:.2} ({:.2}s)", run.mode, run.total(), run.cpu_seconds);
    }
    if let Some(o) = &result.oracle {
        match &o.outcome {
            OracleOutcome::Optimal { cost, .. } => println!("oracle: total {cost:.2}"),
            OracleOutcome::Infeasible { blocking_user } => {
                println!("oracle: infeasible, user {blocking_user} cannot reach its threshold")
            }
        }
    }
    let audit = result.audit();
    if audit.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit(audit))
    }
}

fn exit_code(result: Result<(), Failure>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(Failure::Audit(items)) => {
            eprintln!("audit failed:");
            for i in items {
                eprintln!("  {i}");
            }
            2
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(exit_code(execute(Cli::parse())))
}
