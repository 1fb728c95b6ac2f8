//! Scenario runs in each mode and one-parameter sensitivity sweeps.

use serde::{Deserialize, Serialize};

use crate::benchmark::PriorityScheduler;
use crate::engine::{simulate, ConsensusScheduler, RunLog, Stopwatch};
use crate::error::{Error, Result};
use crate::oracle::{brute_force, MicroScenario, OracleOutcome};
use crate::scenario::{DemandLevel, ScenarioConfig};
use crate::user_opt::CostBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Consensus,
    Priority,
    Both,
    Oracle,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consensus" => Ok(Mode::Consensus),
            "priority" => Ok(Mode::Priority),
            "both" => Ok(Mode::Both),
            "oracle" => Ok(Mode::Oracle),
            _ => Err(Error::invalid("mode", format!("expected consensus, priority, both or oracle, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub outcome: OracleOutcome,
    pub cpu_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub seed: u64,
    pub runs: Vec<RunLog>,
    pub oracle: Option<OracleRun>,
}

impl RunReport {
    pub fn run(&self, mode: &str) -> Option<&RunLog> {
        self.runs.iter().find(|r| r.mode == mode)
    }

    pub fn audit(&self) -> Vec<String> {
        self.runs
            .iter()
            .flat_map(|r| r.audit.iter().map(move |a| format!("{}: {a}", r.mode)))
            .collect()
    }
}

/// Simulates the scenario for the configured seed. `both` runs the two
/// schedulers against identical exogenous streams.
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode) -> Result<RunReport> {
    let model = cfg.build()?;
    let mut report = RunReport {
        seed: cfg.seed,
        runs: Vec::new(),
        oracle: None,
    };
    if matches!(mode, Mode::Consensus | Mode::Both) {
        report.runs.push(simulate(&model, cfg.seed, &mut ConsensusScheduler)?);
    }
    if matches!(mode, Mode::Priority | Mode::Both) {
        report.runs.push(simulate(&model, cfg.seed, &mut PriorityScheduler::new())?);
    }
    if mode == Mode::Oracle {
        if cfg.users.is_empty() {
            return Err(Error::invalid("users", "oracle mode needs a fixed user list"));
        }
        if !model.rates.is_deterministic() {
            return Err(Error::invalid("rates.sd_frac", "oracle mode needs deterministic rates (sd_frac = 0)"));
        }
        let ms = MicroScenario {
            net: model.net.clone(),
            users: cfg.users.clone(),
            horizon: cfg.horizon,
        };
        let clock = Stopwatch::start();
        let outcome = brute_force(&ms, &model.weights)?;
        report.oracle = Some(OracleRun {
            outcome,
            cpu_seconds: clock.seconds(),
        });
    }
    Ok(report)
}

/// Parameters a sweep can vary.
pub const SWEEP_PARAMETERS: [&str; 6] = ["alpha_over", "iota", "lookahead", "iterations", "xi", "demand_level"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub costs: CostBreakdown,
    pub total: f64,
}

impl SweepRow {
    pub fn charging_penalty(&self) -> f64 {
        self.costs.charging + self.costs.penalty
    }
}

fn parse<T: std::str::FromStr>(name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::invalid(format!("sweep.{name}"), format!("cannot parse value {v:?}")))
}

/// Copy of `cfg` with one parameter replaced.
pub fn with_parameter(cfg: &ScenarioConfig, name: &str, value: &str) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match name {
        "alpha_over" => c.weights.alpha_over = parse(name, value)?,
        "iota" => c.mcts.iota = parse(name, value)?,
        "lookahead" => c.mcts.horizon = parse(name, value)?,
        "iterations" => c.mcts.iterations = parse(name, value)?,
        "xi" => c.mcts.xi = parse(name, value)?,
        "demand_level" => c.demand_level = value.parse::<DemandLevel>()?,
        _ => return Err(Error::UnknownParameter(name.to_string())),
    }
    Ok(c)
}

/// Consensus runs at the base seed, one per value.
pub fn sensitivity_sweep(cfg: &ScenarioConfig, name: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    if !SWEEP_PARAMETERS.contains(&name) {
        return Err(Error::UnknownParameter(name.to_string()));
    }
    values
        .iter()
        .map(|v| {
            let report = run_scenario(&with_parameter(cfg, name, v)?, Mode::Consensus)?;
            let run = &report.runs[0];
            if !run.passed_audit() {
                return Err(Error::Contract(format!("audit failed at {name} = {v}: {}", run.audit.join("; "))));
            }
            Ok(SweepRow {
                parameter: name.to_string(),
                value: v.clone(),
                costs: run.costs,
                total: run.total(),
            })
        })
        .collect()
}
