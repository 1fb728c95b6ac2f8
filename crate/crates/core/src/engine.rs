//! Period-by-period simulation driving any scheduler against the same
//! exogenous streams, with realized-cost accounting and audits.

use std::collections::{BTreeMap, HashMap};

use crate::demand::{ArrivalStream, EvUser, Period, UserId};
use crate::error::Result;
use crate::gne::{run_gne, ConsensusTrace};
use crate::mcts::{run_mcts, HistogramRow};
use crate::network::{ChargerType, NodeId, PoolId};
use crate::rng::stream;
use crate::sim::{period_costs, realized_rates, terminal_penalty, Model};
use crate::state::{advance, ExogenousInfo, SystemState};
use crate::user_opt::{CostBreakdown, Decision};

/// What a scheduler decided for one period, plus anything worth logging.
/// Wall-clock timer; reads zero on wasm, which has no clock.
pub(crate) struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Self(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        return Self();
    }

    pub(crate) fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

#[derive(Debug, Clone, Default)]
pub struct PeriodPlan {
    pub decisions: Vec<(UserId, Decision)>,
    pub trace: Option<ConsensusTrace>,
    pub search: Option<SearchStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchStats {
    pub value: f64,
    pub lower_bound: f64,
    pub root_visits: u32,
    pub rejection_rate: f64,
    pub histogram: Vec<HistogramRow>,
}

pub trait Scheduler {
    fn name(&self) -> &'static str;

    /// Decisions for the users pending in `state` (arrivals already admitted).
    fn decide(&mut self, model: &Model, state: &SystemState, seed: u64) -> Result<PeriodPlan>;

    /// Scheduler-specific audit findings for the finished run.
    fn audit(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Per-period consensus followed, when enabled, by the lookahead search
/// seeded with the consensus profile.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConsensusScheduler;

impl Scheduler for ConsensusScheduler {
    fn name(&self) -> &'static str {
        "consensus"
    }

    fn decide(&mut self, model: &Model, state: &SystemState, seed: u64) -> Result<PeriodPlan> {
        let users: Vec<EvUser> = state.pending.iter().map(|p| p.user.clone()).collect();
        if users.is_empty() {
            return Ok(PeriodPlan::default());
        }
        let gne = run_gne(state, &model.net, &users, &model.weights, &model.gne)?;
        let mut plan = PeriodPlan {
            decisions: gne.actions(&users),
            trace: Some(gne.trace),
            search: None,
        };
        if model.mcts.enabled {
            let prior: HashMap<UserId, Decision> = plan.decisions.iter().copied().collect();
            let out = run_mcts(model, state, &prior, seed)?;
            plan.decisions = out.decisions;
            plan.search = Some(SearchStats {
                value: out.value,
                lower_bound: out.lower_bound,
                root_visits: out.root_visits,
                rejection_rate: out.rejection_rate,
                histogram: out.histogram,
            });
        }
        Ok(plan)
    }
}

/// One line per user: where and when it charged, how long it waited and
/// what it paid in total.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub user: UserId,
    /// Start of charging, or the arrival period for users that never charged.
    pub t: Period,
    pub lot: Option<NodeId>,
    pub kind: Option<ChargerType>,
    pub n: u32,
    pub wait_periods: u32,
    pub cost: f64,
    pub served: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocRow {
    pub t: Period,
    pub lot: NodeId,
    pub mean_soc: f64,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub mode: String,
    pub seed: u64,
    pub schedule: Vec<ScheduleRow>,
    pub soc: Vec<SocRow>,
    pub traces: Vec<(Period, ConsensusTrace)>,
    pub search: Vec<(Period, SearchStats)>,
    pub costs: CostBreakdown,
    pub audit: Vec<String>,
    pub cpu_seconds: f64,
}

impl RunLog {
    pub fn total(&self) -> f64 {
        self.costs.total()
    }

    pub fn passed_audit(&self) -> bool {
        self.audit.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Record {
    arrival: Period,
    start: Option<Period>,
    pool: Option<PoolId>,
    n: u32,
    waited: u32,
    cost: CostBreakdown,
    served: bool,
}

/// Checks a period's decisions against capacity and the SOC threshold at
/// nominal rates. Returns one message per violation.
pub fn audit_decisions(model: &Model, state: &SystemState, decisions: &[(UserId, Decision)]) -> Vec<String> {
    let mut out = Vec::new();
    let mut load = state.occupancy.clone();
    for (id, d) in decisions {
        let Decision::Charge { pool, duration } = *d else {
            continue;
        };
        load[pool.index()] += 1;
        if let Some(p) = state.pending_user(*id) {
            let u = &p.user;
            let reach = u.soc + model.weights.pi * pool.kind.rate_multiplier() * f64::from(duration);
            if reach < u.soc_threshold - 1e-9 {
                out.push(format!("t={} user {id}: {duration} periods cannot reach the threshold", state.t));
            }
            if duration > u.parking_duration || state.t + duration as usize > state.horizon {
                out.push(format!("t={} user {id}: duration {duration} exceeds the stay", state.t));
            }
        }
    }
    for (p, (&l, &c)) in load.iter().zip(&state.capacity).enumerate() {
        if l > c {
            let pool = PoolId::from_index(p);
            out.push(format!(
                "t={} capacity exceeded at lot {} {}: {l} > {c}",
                state.t,
                model.net.lot_of(pool),
                pool.kind.label()
            ));
        }
    }
    out
}

/// Runs `scheduler` for the whole horizon. Arrivals come from the seed's
/// "demand" stream and rates from per-(user, period) draws, so two
/// schedulers given the same seed face identical exogenous information.
pub fn simulate(model: &Model, seed: u64, scheduler: &mut dyn Scheduler) -> Result<RunLog> {
    let clock = Stopwatch::start();
    let w = &model.weights;
    let mut arrivals = ArrivalStream::new(&model.arrivals, stream(seed, "demand"));
    let mut state = model.initial_state();
    let mut records: BTreeMap<UserId, Record> = BTreeMap::new();
    let first = arrivals.next_period(&model.net, 0);
    note_arrivals(&mut records, &first);
    state.admit(first);

    let mut log = RunLog {
        mode: scheduler.name().to_string(),
        seed,
        schedule: Vec::new(),
        soc: Vec::new(),
        traces: Vec::new(),
        search: Vec::new(),
        costs: CostBreakdown::default(),
        audit: Vec::new(),
        cpu_seconds: 0.0,
    };

    for t in 0..model.horizon {
        let plan = scheduler.decide(model, &state, seed)?;
        let found = audit_decisions(model, &state, &plan.decisions);
        if !found.is_empty() {
            log.audit.extend(found);
            break;
        }
        let by_user: HashMap<UserId, Decision> = plan.decisions.iter().copied().collect();
        let users: Vec<EvUser> = state.pending.iter().map(|p| p.user.clone()).collect();
        let decisions: Vec<Decision> = users
            .iter()
            .map(|u| by_user.get(&u.id).copied().unwrap_or(Decision::Defer))
            .collect();
        let costs = period_costs(&state, &model.net, &users, &decisions, w)?;
        for ((u, d), c) in users.iter().zip(&decisions).zip(costs) {
            let r = records.get_mut(&u.id).expect("every pending user was recorded on arrival");
            r.cost.add(&c);
            match *d {
                Decision::Charge { pool, duration } => {
                    r.start = Some(t);
                    r.pool = Some(pool);
                    r.n = duration;
                    r.served = true;
                }
                Decision::NoCharge => r.served = true,
                Decision::Defer => r.waited += 1,
            }
        }
        if let Some(trace) = plan.trace {
            log.traces.push((t, trace));
        }
        if let Some(s) = plan.search {
            log.search.push((t, s));
        }

        let applied: Vec<(UserId, Decision)> = users.iter().map(|u| u.id).zip(decisions).collect();
        let exo = ExogenousInfo {
            arrivals: if t + 1 < model.horizon {
                arrivals.next_period(&model.net, t + 1)
            } else {
                Vec::new()
            },
            rates: realized_rates(&model.rates, seed, &state, &applied),
        };
        note_arrivals(&mut records, &exo.arrivals);
        let tr = advance(&state, &model.net, &applied, &exo, w)?;

        let mut per_lot: BTreeMap<NodeId, (f64, u32)> = BTreeMap::new();
        for (pool, soc) in tr
            .state
            .commitments
            .iter()
            .map(|c| (c.pool, c.user.soc))
            .chain(tr.departures.iter().map(|d| (d.pool, d.user.soc)))
        {
            let e = per_lot.entry(model.net.lot_of(pool)).or_default();
            e.0 += soc;
            e.1 += 1;
        }
        log.soc.extend(per_lot.into_iter().map(|(lot, (s, k))| SocRow {
            t,
            lot,
            mean_soc: s / f64::from(k),
        }));
        for d in &tr.departures {
            if d.shortfall {
                let r = records.get_mut(&d.user.id).expect("departing users were recorded");
                r.cost.penalty += w.alpha_over * f64::from(d.user.parking_duration);
            }
        }
        if let Err(e) = tr.state.check_invariants() {
            log.audit.push(format!("t={t}: {e}"));
        }
        state = tr.state;
    }

    for p in &state.pending {
        if p.user.needs_charge() {
            if let Some(r) = records.get_mut(&p.user.id) {
                r.cost.waiting += terminal_penalty(w);
            }
        }
    }
    log.audit.extend(scheduler.audit());
    for (user, r) in records {
        log.costs.add(&r.cost);
        log.schedule.push(ScheduleRow {
            user,
            t: r.start.unwrap_or(r.arrival),
            lot: r.pool.map(|p| model.net.lot_of(p)),
            kind: r.pool.map(|p| p.kind),
            n: r.n,
            wait_periods: r.waited,
            cost: r.cost.total(),
            served: r.served,
        });
    }
    log.cpu_seconds = clock.seconds();
    Ok(log)
}

fn note_arrivals(records: &mut BTreeMap<UserId, Record>, users: &[EvUser]) {
    for u in users {
        records.insert(
            u.id,
            Record {
                arrival: u.arrival_period,
                start: None,
                pool: None,
                n: 0,
                waited: 0,
                cost: CostBreakdown::default(),
                served: false,
            },
        );
    }
}
