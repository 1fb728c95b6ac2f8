//! Pieces shared by every scheduler: the assembled model, realized
//! per-period costs, common-random-number rate draws, the greedy default
//! policy and the value lower bound.

use rand_distr::{Distribution, StandardNormal};

use crate::demand::{ArrivalModel, EvUser, Period, UserId};
use crate::error::Result;
use crate::gne::GneConfig;
use crate::mcts::MctsConfig;
use crate::network::{Network, PoolId};
use crate::rng::substream;
use crate::sh::RateModel;
use crate::state::{pool_wait, RateRealization, SystemState};
use crate::user_opt::{charge_cost, duration_range, CostBreakdown, CostWeights, Decision};

/// Everything a run needs besides the seed.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub horizon: Period,
    pub weights: CostWeights,
    pub rates: RateModel,
    pub arrivals: ArrivalModel,
    pub gne: GneConfig,
    pub mcts: MctsConfig,
}

impl Model {
    pub fn initial_state(&self) -> SystemState {
        SystemState::initial(&self.net, self.horizon, &self.weights)
    }

    /// True when both arrivals and charging rates are fixed.
    pub fn is_deterministic(&self) -> bool {
        self.rates.is_deterministic() && self.arrivals.is_deterministic()
    }
}

impl RateModel {
    /// Delivered energy from a standard-normal draw `z`, so that every
    /// scheduler facing the same `z` sees the same relative deviation.
    pub fn from_standard(&self, kind: crate::network::ChargerType, z: f64) -> f64 {
        let mean = self.mean(kind);
        let steps = (1.0 / self.quantum).round().max(1.0);
        ((mean + self.sd_frac * mean * z).max(0.0) * steps).round() / steps
    }
}

/// Standard-normal draw shared by every scheduler for (user, period).
pub fn rate_draw(seed: u64, user: UserId, t: Period) -> f64 {
    StandardNormal.sample(&mut substream(seed, "rates", &[user, t as u64]))
}

/// Realized delivered energy for everyone charging during `state.t` once
/// `decisions` are applied.
pub fn realized_rates(rates: &RateModel, seed: u64, state: &SystemState, decisions: &[(UserId, Decision)]) -> RateRealization {
    if rates.is_deterministic() {
        return RateRealization::Nominal;
    }
    let t = state.t;
    let charging = state
        .commitments
        .iter()
        .map(|c| (c.user.id, c.pool))
        .chain(decisions.iter().filter_map(|(id, d)| d.pool().map(|p| (*id, p))));
    RateRealization::Sampled(
        charging
            .map(|(id, p)| ((id, t), rates.from_standard(p.kind, rate_draw(seed, id, t))))
            .collect(),
    )
}

/// Realized cost of each decision in the period: the wait counts the other
/// users starting at the same pool, deferral costs one period of waiting.
pub fn period_costs(state: &SystemState, net: &Network, users: &[EvUser], decisions: &[Decision], w: &CostWeights) -> Result<Vec<CostBreakdown>> {
    let mut starting = vec![0u32; state.capacity.len()];
    for d in decisions {
        if let Some(p) = d.pool() {
            starting[p.index()] += 1;
        }
    }
    users
        .iter()
        .zip(decisions)
        .map(|(u, d)| match *d {
            Decision::Charge { pool, duration } => {
                let wait = pool_wait(net.pool(pool), state.occupancy[pool.index()], starting[pool.index()] - 1, w.w_max);
                charge_cost(u, pool, duration, state.t, net, w, wait)
            }
            Decision::NoCharge => Ok(CostBreakdown::default()),
            Decision::Defer => Ok(CostBreakdown {
                waiting: w.theta_wait,
                ..Default::default()
            }),
        })
        .collect()
}

/// Increase in the period's realized cost from adding one more user at
/// `pool` when `already` users have chosen it this period.
pub fn marginal_charge_cost(
    user: &EvUser,
    pool: PoolId,
    duration: u32,
    already: u32,
    state: &SystemState,
    net: &Network,
    w: &CostWeights,
) -> Result<f64> {
    let p = net.pool(pool);
    let occ = state.occupancy[pool.index()];
    let own = pool_wait(p, occ, already, w.w_max);
    let mut c = charge_cost(user, pool, duration, state.t, net, w, own)?.total();
    if already > 0 {
        let before = pool_wait(p, occ, already - 1, w.w_max);
        c += w.theta_wait * f64::from(already) * (own - before);
    }
    Ok(c)
}

/// Cost a user pays for ending the horizon without a charger.
pub fn terminal_penalty(w: &CostWeights) -> f64 {
    w.theta_wait * w.w_max
}

/// Charging options for `user` given the spots already handed out this
/// period (`assigned`), in enumeration order.
pub fn admissible_charges(user: &EvUser, state: &SystemState, net: &Network, assigned: &[u32], w: &CostWeights) -> Vec<Decision> {
    let mut out = Vec::new();
    for pool in net.pools() {
        let p = pool.index();
        if state.capacity[p] == 0 || state.capacity[p] - state.occupancy[p] <= assigned[p] {
            continue;
        }
        for duration in duration_range(user, pool, state.t, state.horizon, w) {
            out.push(Decision::Charge { pool, duration });
        }
    }
    out
}

/// Cheapest admissible charge by the user's own cost, ignoring everyone
/// else's pending choices beyond `assigned`; defers only when nothing fits.
pub fn greedy_decision(user: &EvUser, state: &SystemState, net: &Network, assigned: &[u32], w: &CostWeights) -> Result<Decision> {
    if !user.needs_charge() {
        return Ok(Decision::NoCharge);
    }
    let mut best = (Decision::Defer, f64::INFINITY);
    for d in admissible_charges(user, state, net, assigned, w) {
        if let Decision::Charge { pool, duration } = d {
            let wait = pool_wait(net.pool(pool), state.occupancy[pool.index()], assigned[pool.index()], w.w_max);
            let c = charge_cost(user, pool, duration, state.t, net, w, wait)?.total();
            if c < best.1 {
                best = (d, c);
            }
        }
    }
    Ok(best.0)
}

/// Greedy decisions for a whole set of users, in order.
pub fn greedy_profile(state: &SystemState, net: &Network, users: &[EvUser], w: &CostWeights) -> Result<Vec<Decision>> {
    let mut assigned = vec![0u32; state.capacity.len()];
    users
        .iter()
        .map(|u| {
            let d = greedy_decision(u, state, net, &assigned, w)?;
            if let Some(p) = d.pool() {
                assigned[p.index()] += 1;
            }
            Ok(d)
        })
        .collect()
}

/// Per-user lower bound on the cost still to be paid from `state.t` on:
/// the cheapest of charging now at the current occupancy, charging at a
/// later period against an empty lot after waiting for it, or never being
/// served. Users already above their threshold cost nothing. Competition is
/// ignored, so the sum never exceeds any realized cost.
pub fn user_lower_bound(user: &EvUser, state: &SystemState, net: &Network, w: &CostWeights) -> Result<f64> {
    if !user.needs_charge() {
        return Ok(0.0);
    }
    let from = state.t.max(user.arrival_period);
    let mut best = w.theta_wait * (state.horizon.saturating_sub(from)) as f64 + terminal_penalty(w);
    for s in from..state.horizon {
        let delay = w.theta_wait * (s - from) as f64;
        for pool in net.pools() {
            if net.capacity(pool) == 0 {
                continue;
            }
            let occ = if s == state.t { state.occupancy[pool.index()] } else { 0 };
            let wait = pool_wait(net.pool(pool), occ, 0, w.w_max);
            for n in duration_range(user, pool, s, state.horizon, w) {
                let c = delay + charge_cost(user, pool, n, s, net, w, wait)?.total();
                best = best.min(c);
            }
        }
    }
    Ok(best)
}

pub fn lower_bound_value(state: &SystemState, net: &Network, users: &[EvUser], w: &CostWeights) -> Result<f64> {
    users.iter().map(|u| user_lower_bound(u, state, net, w)).sum()
}
