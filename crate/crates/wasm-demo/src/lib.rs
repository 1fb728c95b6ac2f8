//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string the page draws on a canvas. The `*_json` functions are the
//! native-testable cores.

use evsched::experiment::{run_scenario, Mode};
use evsched::network::{ChargerPool, ChargerType, Facility};
use evsched::report::iteration_rows;
use evsched::rng::stream;
use evsched::scenario::{DemandLevel, ScenarioConfig};
use evsched::sh::{shoot_traced, RateModel};
use evsched::state::waiting_time;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const HYPOTHETICAL: &str = include_str!("../../../presets/hypothetical.cfg");

#[derive(Serialize)]
struct Point {
    load: u32,
    wait: f64,
}

pub fn waiting_curve_json(search_time: f64, awareness: f64, capacity: u32, w_max: f64) -> Result<String, String> {
    let pool = ChargerPool {
        capacity,
        search_time,
        awareness,
        prices: vec![0.0],
    };
    let fac = Facility {
        lot: 0,
        pools: [pool.clone(), pool],
    };
    let points = (0..=capacity)
        .map(|load| {
            waiting_time(&fac, ChargerType::Slow, load, 0, w_max)
                .map(|wait| Point { load, wait })
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Fan {
    paths: Vec<Vec<f64>>,
    survived: Vec<bool>,
    mean: Option<Vec<f64>>,
    survival: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn shoot_fan_json(soc: f64, periods: u32, threshold: f64, fast: bool, shots: usize, sd_frac: f64, seed: u64) -> Result<String, String> {
    if periods == 0 || periods > 48 || shots > 500 {
        return Err("periods must be 1..=48 and shots at most 500".into());
    }
    let model = RateModel {
        sd_frac,
        ..RateModel::default()
    };
    model.validate().map_err(|e| e.to_string())?;
    let kind = if fast { ChargerType::Fast } else { ChargerType::Slow };
    let mut paths = Vec::new();
    let mut survived = Vec::new();
    let mut rng = stream(seed, "demo.shoot");
    let out = shoot_traced(soc, periods, threshold, kind, shots, f64::INFINITY, &model, &mut rng, |p| {
        let mut full = vec![soc];
        full.extend_from_slice(p);
        survived.push(*p.last().unwrap() >= threshold);
        paths.push(full);
    });
    let fan = Fan {
        paths,
        survived,
        mean: out.trajectory.map(|t| std::iter::once(soc).chain(t).collect()),
        survival: out.survival,
    };
    serde_json::to_string(&fan).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TracePoint {
    iter: usize,
    total: f64,
    travel: f64,
    charging: f64,
    penalty: f64,
}

#[derive(Serialize)]
struct Trace {
    iterations: Vec<TracePoint>,
    realized: f64,
    users: usize,
}

pub fn consensus_trace_json(level: &str, seed: u64) -> Result<String, String> {
    let mut cfg = ScenarioConfig::from_toml(HYPOTHETICAL).map_err(|e| e.to_string())?;
    cfg.demand_level = level.parse::<DemandLevel>().map_err(|e| e.to_string())?;
    cfg.seed = seed;
    cfg.mcts.enabled = false;
    let report = run_scenario(&cfg, Mode::Consensus).map_err(|e| e.to_string())?;
    let log = &report.runs[0];
    let trace = Trace {
        iterations: iteration_rows(&log.traces)
            .into_iter()
            .map(|r| TracePoint {
                iter: r.iter,
                total: r.total_obj,
                travel: r.costs.travel,
                charging: r.costs.charging,
                penalty: r.costs.penalty,
            })
            .collect(),
        realized: log.total(),
        users: log.schedule.len(),
    };
    serde_json::to_string(&trace).map_err(|e| e.to_string())
}

/// Expected wait against occupancy for one charger pool.
#[wasm_bindgen]
pub fn waiting_curve(search_time: f64, awareness: f64, capacity: u32, w_max: f64) -> Result<String, JsError> {
    waiting_curve_json(search_time, awareness, capacity, w_max).map_err(|e| JsError::new(&e))
}

/// Sampled SOC paths from one shooting run.
#[wasm_bindgen]
pub fn shoot_fan(soc: f64, periods: u32, threshold: f64, fast: bool, shots: usize, sd_frac: f64, seed: u32) -> Result<String, JsError> {
    shoot_fan_json(soc, periods, threshold, fast, shots, sd_frac, u64::from(seed)).map_err(|e| JsError::new(&e))
}

/// Whole-day consensus objective per iteration on the hypothetical network.
#[wasm_bindgen]
pub fn consensus_trace(level: &str, seed: u32) -> Result<String, JsError> {
    consensus_trace_json(level, u64::from(seed)).map_err(|e| JsError::new(&e))
}
