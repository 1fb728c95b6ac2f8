//! CSV emission. Headers are fixed; floats are written with six decimals so
//! identical runs produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::engine::RunLog;
use crate::error::{Error, Result};
use crate::experiment::{RunReport, SweepRow};
use crate::gne::ConsensusTrace;
use crate::network::{Network, PoolId};
use crate::oracle::{Assignment, OracleOutcome};
use crate::user_opt::CostBreakdown;

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn io(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn table<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One point of the whole-horizon consensus curve.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iter: usize,
    pub total_obj: f64,
    pub costs: CostBreakdown,
    pub max_violation: f64,
}

/// Sums each iteration's objective over all periods. Periods that stopped
/// early contribute their final row to later iterations.
pub fn iteration_rows(traces: &[(usize, ConsensusTrace)]) -> Vec<IterationRow> {
    let depth = traces.iter().map(|(_, t)| t.rows.len()).max().unwrap_or(0);
    (1..=depth)
        .map(|k| {
            let mut row = IterationRow {
                iter: k,
                total_obj: 0.0,
                costs: CostBreakdown::default(),
                max_violation: f64::NEG_INFINITY,
            };
            for (_, t) in traces {
                if let Some(r) = t.rows.get(k.min(t.rows.len()) - 1) {
                    row.total_obj += r.total_obj;
                    row.costs.add(&r.costs);
                    row.max_violation = row.max_violation.max(r.max_violation);
                }
            }
            row
        })
        .collect()
}

pub fn write_iterations<W: Write>(out: W, log: &RunLog) -> Result<()> {
    table(
        out,
        &["iter", "total_obj", "travel", "charging", "penalty", "max_violation"],
        iteration_rows(&log.traces).into_iter().map(|r| {
            vec![
                r.iter.to_string(),
                f(r.total_obj),
                f(r.costs.travel),
                f(r.costs.charging),
                f(r.costs.penalty),
                f(r.max_violation),
            ]
        }),
    )
}

pub fn write_occupancy<W: Write>(out: W, log: &RunLog, net: &Network) -> Result<()> {
    let mut rows = Vec::new();
    for (t, trace) in &log.traces {
        for r in &trace.rows {
            for (p, occ) in r.occupancy.iter().enumerate() {
                let pool = PoolId::from_index(p);
                rows.push(vec![
                    r.iter.to_string(),
                    t.to_string(),
                    net.lot_of(pool).to_string(),
                    pool.kind.label().to_string(),
                    occ.to_string(),
                    r.marginal.as_ref().map_or(String::new(), |m| m[p].to_string()),
                ]);
            }
        }
    }
    table(out, &["iter", "t", "lot", "type", "occupancy", "marginal"], rows)
}

pub fn write_schedule<W: Write>(out: W, log: &RunLog) -> Result<()> {
    table(
        out,
        &["user", "t", "lot", "type", "n", "wait_periods", "cost", "served_flag"],
        log.schedule.iter().map(|r| {
            vec![
                r.user.to_string(),
                r.t.to_string(),
                r.lot.map_or(String::new(), |l| l.to_string()),
                r.kind.map_or(String::new(), |k| k.label().to_string()),
                r.n.to_string(),
                r.wait_periods.to_string(),
                f(r.cost),
                u8::from(r.served).to_string(),
            ]
        }),
    )
}

pub fn write_soc<W: Write>(out: W, log: &RunLog) -> Result<()> {
    table(
        out,
        &["t", "lot", "mean_soc"],
        log.soc.iter().map(|r| vec![r.t.to_string(), r.lot.to_string(), f(r.mean_soc)]),
    )
}

pub fn write_histogram<W: Write>(out: W, log: &RunLog) -> Result<()> {
    let mut rows = Vec::new();
    for (t, s) in &log.search {
        for h in &s.histogram {
            rows.push(vec![t.to_string(), h.kind.label().to_string(), h.duration.to_string(), h.visits.to_string()]);
        }
    }
    table(out, &["t", "type", "n", "visits"], rows)
}

pub fn write_comparison<W: Write>(out: W, report: &RunReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|r| vec![r.mode.clone(), f(r.total()), f(r.cpu_seconds)])
        .collect();
    if let Some(o) = &report.oracle {
        if let Some(c) = o.outcome.cost() {
            rows.push(vec!["oracle".into(), f(c), f(o.cpu_seconds)]);
        }
    }
    table(out, &["mode", "total_obj", "cpu_seconds"], rows)
}

pub fn write_oracle<W: Write>(out: W, outcome: &OracleOutcome, net: &Network) -> Result<()> {
    let header = ["user", "t", "lot", "type", "n", "cost"];
    match outcome {
        OracleOutcome::Infeasible { .. } => table(out, &header, Vec::new()),
        OracleOutcome::Optimal {
            schedule, user_costs, ..
        } => table(
            out,
            &header,
            schedule.iter().zip(user_costs).map(|((id, a), c)| {
                let (t, lot, kind, n) = match a {
                    Assignment::Charge { start, pool, duration } => (
                        start.to_string(),
                        net.lot_of(*pool).to_string(),
                        pool.kind.label().to_string(),
                        duration.to_string(),
                    ),
                    Assignment::Leave | Assignment::Unserved => (String::new(), String::new(), String::new(), "0".into()),
                };
                vec![id.to_string(), t, lot, kind, n, f(*c)]
            }),
        ),
    }
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    table(
        out,
        &["parameter", "value", "travel", "waiting", "charging_penalty", "total"],
        rows.iter().map(|r| {
            vec![
                r.parameter.clone(),
                r.value.clone(),
                f(r.costs.travel),
                f(r.costs.waiting),
                f(r.charging_penalty()),
                f(r.total),
            ]
        }),
    )
}

/// Writes every CSV for `report` into `dir`. With two runs the first keeps
/// the plain file names and the second gets a `_<mode>` suffix.
pub fn write_report(dir: &Path, report: &RunReport, net: &Network) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(format!("{}: {e}", dir.display())))?;
    let file = |name: &str| -> Result<std::io::BufWriter<fs::File>> {
        let path = dir.join(name);
        fs::File::create(&path)
            .map(std::io::BufWriter::new)
            .map_err(|e| io(format!("{}: {e}", path.display())))
    };
    for (i, run) in report.runs.iter().enumerate() {
        let suffix = if i == 0 { String::new() } else { format!("_{}", run.mode) };
        write_schedule(file(&format!("schedule{suffix}.csv"))?, run)?;
        write_soc(file(&format!("soc{suffix}.csv"))?, run)?;
        if !run.traces.is_empty() || run.mode == "consensus" {
            write_iterations(file(&format!("iterations{suffix}.csv"))?, run)?;
            write_occupancy(file(&format!("occupancy{suffix}.csv"))?, run, net)?;
        }
        if !run.search.is_empty() {
            write_histogram(file(&format!("mcts_histogram{suffix}.csv"))?, run)?;
        }
    }
    if let Some(o) = &report.oracle {
        write_oracle(file("oracle.csv")?, &o.outcome, net)?;
    }
    write_comparison(file("comparison.csv")?, report)
}

pub fn write_sweep_file(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(format!("{}: {e}", dir.display())))?;
    let path = dir.join("sweep.csv");
    let file = fs::File::create(&path).map_err(|e| io(format!("{}: {e}", path.display())))?;
    write_sweep(std::io::BufWriter::new(file), rows)
}
