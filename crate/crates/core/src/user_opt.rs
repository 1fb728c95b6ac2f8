//! Per-user cost model and exact best response over the finite action set.

use serde::{Deserialize, Serialize};

use crate::demand::{EvUser, UserId};
use crate::error::{Error, Result};
use crate::network::{Network, PoolId};
use crate::state::{pool_wait, SystemState, DEFAULT_W_MAX};

/// Cap on the exponent of the penalty term.
pub const EXP_CAP: f64 = 50.0;

/// A user's choice for one period. `choice: None` means no charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub user: UserId,
    pub choice: Option<PoolId>,
    pub duration: u32,
}

impl Action {
    pub fn charge(user: UserId, pool: PoolId, duration: u32) -> Self {
        Self {
            user,
            choice: Some(pool),
            duration,
        }
    }

    pub fn no_charge(user: UserId) -> Self {
        Self {
            user,
            choice: None,
            duration: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.choice, self.duration) {
            (Some(_), 0) => Err(Error::Contract(format!("user {}: charge with zero duration", self.user))),
            (None, d) if d > 0 => Err(Error::Contract(format!("user {}: duration without a charger", self.user))),
            _ => Ok(()),
        }
    }

    pub fn decision(&self) -> Decision {
        match self.choice {
            Some(pool) => Decision::Charge {
                pool,
                duration: self.duration,
            },
            None => Decision::NoCharge,
        }
    }
}

/// What happens to a pending user this period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    Charge { pool: PoolId, duration: u32 },
    NoCharge,
    /// Unserved this period; the user stays pending.
    Defer,
}

impl Decision {
    pub fn pool(&self) -> Option<PoolId> {
        match self {
            Decision::Charge { pool, .. } => Some(*pool),
            _ => None,
        }
    }

    pub fn action(&self, user: UserId) -> Option<Action> {
        match *self {
            Decision::Charge { pool, duration } => Some(Action::charge(user, pool, duration)),
            Decision::NoCharge => Some(Action::no_charge(user)),
            Decision::Defer => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    /// Travel time to money.
    pub theta: f64,
    /// Waiting (per period) to money.
    pub theta_wait: f64,
    pub alpha: f64,
    /// Overstay penalty factor.
    pub alpha_over: f64,
    /// Nominal slow rate, kWh per period.
    pub pi: f64,
    pub big_m: f64,
    pub w_max: f64,
    pub exp_cap: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            theta: 0.1,
            theta_wait: 1.0,
            alpha: 1.0,
            alpha_over: 0.1,
            pi: 6.2,
            big_m: 1e3,
            w_max: DEFAULT_W_MAX,
            exp_cap: EXP_CAP,
        }
    }
}

impl CostWeights {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let fields = [
            ("theta", self.theta),
            ("theta_wait", self.theta_wait),
            ("alpha", self.alpha),
            ("alpha_over", self.alpha_over),
            ("pi", self.pi),
            ("big_m", self.big_m),
            ("w_max", self.w_max),
            ("exp_cap", self.exp_cap),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("weights.{name}"), "must be finite and non-negative"));
            }
        }
        if self.pi <= 0.0 {
            return Err(Error::invalid("weights.pi", "must be positive"));
        }
        if self.big_m < horizon as f64 {
            return Err(Error::invalid("weights.big_m", "must be at least the horizon"));
        }
        Ok(())
    }

    /// Smallest whole number of periods that lifts `soc` to `threshold` at
    /// the nominal rate of `pool`; 1 when no energy is needed.
    pub fn min_duration(&self, soc: f64, threshold: f64, pool: PoolId) -> u32 {
        let gap = threshold - soc;
        if gap <= 0.0 {
            return 1;
        }
        let n = (gap / (self.pi * pool.kind.rate_multiplier()) - 1e-9).ceil();
        (n as u32).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub travel: f64,
    pub waiting: f64,
    pub charging: f64,
    pub penalty: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.travel + self.waiting + self.charging + self.penalty
    }

    pub fn add(&mut self, o: &CostBreakdown) {
        self.travel += o.travel;
        self.waiting += o.waiting;
        self.charging += o.charging;
        self.penalty += o.penalty;
    }
}

/// Cost terms for charging at `pool` for `n` periods at period `t` with a
/// given perceived wait.
pub fn charge_cost(user: &EvUser, pool: PoolId, n: u32, t: usize, net: &Network, w: &CostWeights, wait: f64) -> Result<CostBreakdown> {
    let lot = net.lot_of(pool);
    let trip = net.drive_to(user.origin, lot)? + net.drive_from(lot, user.destination)?;
    Ok(CostBreakdown {
        travel: w.theta * trip,
        waiting: w.theta_wait * wait,
        charging: w.alpha * net.pool(pool).price(t) * f64::from(n),
        penalty: w.alpha_over * f64::from(user.parking_duration.saturating_sub(n)),
    })
}

fn others_at(others: &[u32], pool: PoolId) -> u32 {
    others.get(pool.index()).copied().unwrap_or(0)
}

/// Cost to the user of `a` when `others[p]` other users declare pool `p`.
/// Leaving without a charge costs nothing if the threshold is met and is
/// infinite otherwise.
pub fn user_cost(user: &EvUser, a: &Action, state: &SystemState, net: &Network, others: &[u32], w: &CostWeights) -> Result<CostBreakdown> {
    match a.choice {
        None if user.needs_charge() => Ok(CostBreakdown {
            penalty: f64::INFINITY,
            ..Default::default()
        }),
        None => Ok(CostBreakdown::default()),
        Some(pool) => {
            let wait = pool_wait(net.pool(pool), state.occupancy[pool.index()], others_at(others, pool), w.w_max);
            charge_cost(user, pool, a.duration, state.t, net, w, wait)
        }
    }
}

/// Relaxed capacity constraint at `pool`: positive when oversubscribed.
pub fn constraint_violation(a: &Action, others: &[u32], state: &SystemState, pool: PoolId) -> f64 {
    let y = u32::from(a.choice == Some(pool));
    let free = state.capacity[pool.index()] - state.occupancy[pool.index()];
    f64::from(y + others_at(others, pool)) - f64::from(free)
}

/// The slice of multiplier state one user sees.
#[derive(Debug, Clone, Copy)]
pub struct MultiplierView<'a> {
    pub rho: f64,
    /// `u` per pool index.
    pub u: &'a [f64],
}

/// Exponential penalty term for holding `pool` at violation `g`.
pub fn penalty_term(mult: &MultiplierView<'_>, pool: PoolId, g: f64, w: &CostWeights) -> f64 {
    let u = mult.u.get(pool.index()).copied().unwrap_or(0.0);
    if u == 0.0 {
        return 0.0;
    }
    u / mult.rho * (mult.rho * g).min(w.exp_cap).exp()
}

pub fn penalized_cost(
    user: &EvUser,
    a: &Action,
    state: &SystemState,
    net: &Network,
    others: &[u32],
    w: &CostWeights,
    mult: &MultiplierView<'_>,
) -> Result<f64> {
    let base = user_cost(user, a, state, net, others, w)?.total();
    Ok(match a.choice {
        None => base,
        Some(pool) => base + penalty_term(mult, pool, constraint_violation(a, others, state, pool), w),
    })
}

/// Feasible durations at `pool` for a user at period `t`.
pub fn duration_range(user: &EvUser, pool: PoolId, t: usize, horizon: usize, w: &CostWeights) -> std::ops::RangeInclusive<u32> {
    let n_min = w.min_duration(user.soc, user.soc_threshold, pool);
    let left = u32::try_from(horizon.saturating_sub(t)).unwrap_or(u32::MAX);
    n_min..=user.parking_duration.min(left)
}

/// Every admissible action for `user` in enumeration order: no charge first
/// (when allowed), then pools by index and durations ascending.
pub fn action_set(user: &EvUser, state: &SystemState, net: &Network, w: &CostWeights) -> Vec<Action> {
    let mut out = Vec::new();
    if !user.needs_charge() {
        out.push(Action::no_charge(user.id));
    }
    for pool in net.pools() {
        if net.capacity(pool) == 0 {
            continue;
        }
        for n in duration_range(user, pool, state.t, state.horizon, w) {
            out.push(Action::charge(user.id, pool, n));
        }
    }
    out
}

/// Minimizer of the penalized cost, or `None` when the user cannot be
/// served this period. Ties go to the earliest action in enumeration order.
pub fn best_response(
    user: &EvUser,
    state: &SystemState,
    net: &Network,
    others: &[u32],
    w: &CostWeights,
    mult: &MultiplierView<'_>,
) -> Result<Option<(Action, f64)>> {
    let mut best: Option<(Action, f64)> = None;
    for a in action_set(user, state, net, w) {
        let c = penalized_cost(user, &a, state, net, others, w, mult)?;
        if best.as_ref().is_none_or(|(_, b)| c < *b) {
            best = Some((a, c));
        }
    }
    Ok(best)
}
