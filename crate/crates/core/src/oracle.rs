//! Exhaustive solver for tiny deterministic instances. Every user is given a
//! start period, a pool and a duration (or is left unserved for the whole
//! horizon); the joint schedule minimizing the realized system cost wins.

use crate::demand::{EvUser, Period, UserId};
use crate::error::{Error, Result};
use crate::network::{Network, PoolId};
use crate::state::pool_wait;
use crate::sim::terminal_penalty;
use crate::user_opt::{charge_cost, duration_range, CostWeights};

/// Refuse to enumerate more joint schedules than this.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Assignment {
    /// Start charging at `start` for `duration` periods.
    Charge { start: Period, pool: PoolId, duration: u32 },
    /// Already above the threshold: leaves on arrival.
    Leave,
    Unserved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroScenario {
    pub net: Network,
    pub users: Vec<EvUser>,
    pub horizon: Period,
}

impl MicroScenario {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.users.len() > 4 {
            return Err(Error::invalid("users", "at most 4 users"));
        }
        if self.net.facilities.len() > 3 {
            return Err(Error::invalid("facilities", "at most 3 facilities"));
        }
        if self.horizon > 4 {
            return Err(Error::invalid("horizon", "at most 4 periods"));
        }
        for u in &self.users {
            u.validate(self.horizon)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    Optimal {
        schedule: Vec<(UserId, Assignment)>,
        cost: f64,
        user_costs: Vec<f64>,
    },
    /// Some user has no way to reach its threshold within the horizon.
    Infeasible { blocking_user: UserId },
}

impl OracleOutcome {
    pub fn cost(&self) -> Option<f64> {
        match self {
            OracleOutcome::Optimal { cost, .. } => Some(*cost),
            OracleOutcome::Infeasible { .. } => None,
        }
    }
}

fn options(ms: &MicroScenario, user: &EvUser, w: &CostWeights) -> Vec<Assignment> {
    if !user.needs_charge() {
        return vec![Assignment::Leave];
    }
    let mut out = Vec::new();
    for start in user.arrival_period..ms.horizon {
        for pool in ms.net.pools() {
            if ms.net.capacity(pool) == 0 {
                continue;
            }
            for duration in duration_range(user, pool, start, ms.horizon, w) {
                out.push(Assignment::Charge { start, pool, duration });
            }
        }
    }
    out
}

/// Realized cost of a joint schedule, per user, or `None` if it breaks
/// capacity in some period.
pub fn schedule_cost(ms: &MicroScenario, schedule: &[Assignment], w: &CostWeights) -> Result<Option<Vec<f64>>> {
    let pools = ms.net.pool_count();
    let t_len = ms.horizon;
    // running[t][p]: users started before t and still charging at t.
    let mut running = vec![vec![0u32; pools]; t_len];
    let mut starting = vec![vec![0u32; pools]; t_len];
    for a in schedule {
        if let Assignment::Charge { start, pool, duration } = *a {
            starting[start][pool.index()] += 1;
            for t in start + 1..(start + duration as usize).min(t_len) {
                running[t][pool.index()] += 1;
            }
        }
    }
    for t in 0..t_len {
        for p in 0..pools {
            if running[t][p] + starting[t][p] > ms.net.capacity(PoolId::from_index(p)) {
                return Ok(None);
            }
        }
    }
    let mut costs = Vec::with_capacity(schedule.len());
    for (u, a) in ms.users.iter().zip(schedule) {
        costs.push(match *a {
            Assignment::Leave => 0.0,
            Assignment::Unserved => {
                w.theta_wait * ms.horizon.saturating_sub(u.arrival_period) as f64 + terminal_penalty(w)
            }
            Assignment::Charge { start, pool, duration } => {
                let p = pool.index();
                let wait = pool_wait(ms.net.pool(pool), running[start][p], starting[start][p] - 1, w.w_max);
                w.theta_wait * (start - u.arrival_period) as f64
                    + charge_cost(u, pool, duration, start, &ms.net, w, wait)?.total()
            }
        });
    }
    Ok(Some(costs))
}

/// Minimum-cost joint schedule. Schedules are visited in lexicographic
/// order of per-user options and only a strictly cheaper one replaces the
/// incumbent.
pub fn brute_force(ms: &MicroScenario, w: &CostWeights) -> Result<OracleOutcome> {
    ms.validate()?;
    let mut per_user = Vec::with_capacity(ms.users.len());
    for u in &ms.users {
        let mut opts = options(ms, u, w);
        if opts.is_empty() {
            return Ok(OracleOutcome::Infeasible { blocking_user: u.id });
        }
        if u.needs_charge() {
            opts.push(Assignment::Unserved);
        }
        per_user.push(opts);
    }
    let size = per_user.iter().fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128));
    if size > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }

    let mut best: Option<(f64, Vec<Assignment>, Vec<f64>)> = None;
    let mut pick = vec![0usize; per_user.len()];
    loop {
        let schedule: Vec<Assignment> = pick.iter().zip(&per_user).map(|(i, o)| o[*i]).collect();
        if let Some(costs) = schedule_cost(ms, &schedule, w)? {
            let total: f64 = costs.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                best = Some((total, schedule, costs));
            }
        }
        // Odometer with the last user varying fastest.
        let mut k = per_user.len();
        loop {
            if k == 0 {
                let (cost, schedule, user_costs) = best.expect("the all-unserved schedule is always feasible");
                return Ok(OracleOutcome::Optimal {
                    schedule: ms.users.iter().map(|u| u.id).zip(schedule).collect(),
                    cost,
                    user_costs,
                });
            }
            k -= 1;
            pick[k] += 1;
            if pick[k] < per_user[k].len() {
                break;
            }
            pick[k] = 0;
        }
    }
}
