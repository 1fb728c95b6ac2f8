//! The DP system state, the occupancy-driven waiting-time model and the
//! period-to-period transition.

use std::collections::{BTreeMap, BTreeSet};

use crate::demand::{EvUser, Period, UserId};
use crate::error::{Error, Result};
use crate::network::{ChargerPool, ChargerType, Facility, Network, PoolId};
use crate::user_opt::{CostWeights, Decision};

/// Waiting time reported at (or beyond) full occupancy, in periods.
pub const DEFAULT_W_MAX: f64 = 1e3;

/// Expected wait at a charger pool given its occupancy `σ` and the number of
/// other users currently declaring it.
///
/// `e·β / (1 − (σ + pending)/c)` below saturation, `w_max` at or above it.
pub fn waiting_time(fac: &Facility, kind: ChargerType, occupancy: u32, pending: u32, w_max: f64) -> Result<f64> {
    let pool = fac.pool(kind);
    if pool.capacity == 0 {
        return Err(Error::NoSuchPool { lot: fac.lot, kind });
    }
    Ok(pool_wait(pool, occupancy, pending, w_max))
}

/// [`waiting_time`] for a pool already known to exist; a zero-capacity pool
/// is treated as saturated.
pub(crate) fn pool_wait(pool: &ChargerPool, occupancy: u32, pending: u32, w_max: f64) -> f64 {
    let load = occupancy + pending;
    if load >= pool.capacity {
        return w_max;
    }
    let c = f64::from(pool.capacity);
    pool.search_time * pool.awareness / (1.0 - f64::from(load) / c)
}

/// A user holding a charger.
#[derive(Debug, Clone, PartialEq)]
pub struct Commitment {
    pub user: EvUser,
    pub pool: PoolId,
    /// Committed duration `n`.
    pub duration: u32,
    /// Periods of the commitment still to run.
    pub remaining: u32,
    /// Periods parked so far.
    pub parked: u32,
    pub started: Period,
}

/// A user present but not holding a charger.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingUser {
    pub user: EvUser,
    /// Periods spent unserved so far.
    pub waited: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: Period,
    pub horizon: Period,
    /// Capacity per pool, indexed by [`PoolId::index`].
    pub capacity: Vec<u32>,
    /// Spots already available before this period's releases (`J^t`).
    pub available: Vec<u32>,
    /// Spots released at the start of this period (`Ĵ^t`).
    pub new_spots: Vec<u32>,
    /// Occupied spots (`σ^t`).
    pub occupancy: Vec<u32>,
    /// Users awaiting an assignment, arrivals of this period included.
    pub pending: Vec<PendingUser>,
    pub commitments: Vec<Commitment>,
    /// Perceived wait per pool at the current occupancy (`L^t`).
    pub waiting: Vec<f64>,
}

impl SystemState {
    pub fn initial(net: &Network, horizon: Period, w: &CostWeights) -> Self {
        let capacity = net.capacities();
        let zeros = vec![0; capacity.len()];
        let mut s = Self {
            t: 0,
            horizon,
            available: capacity.clone(),
            capacity,
            new_spots: zeros.clone(),
            occupancy: zeros,
            pending: Vec::new(),
            commitments: Vec::new(),
            waiting: Vec::new(),
        };
        s.refresh_waiting(net, w);
        s
    }

    /// Adds newly arrived users (`D^{t+} = D^t ∪ D̂^t`).
    pub fn admit(&mut self, arrivals: impl IntoIterator<Item = EvUser>) {
        self.pending
            .extend(arrivals.into_iter().map(|user| PendingUser { user, waited: 0 }));
    }

    /// Free spots per pool (`J^{t+} = J^t + Ĵ^t`).
    pub fn free(&self, pool: usize) -> u32 {
        self.available[pool] + self.new_spots[pool]
    }

    pub fn price(&self, net: &Network, pool: PoolId) -> f64 {
        net.pool(pool).price(self.t)
    }

    pub fn pending_user(&self, id: UserId) -> Option<&PendingUser> {
        self.pending.iter().find(|p| p.user.id == id)
    }

    fn refresh_waiting(&mut self, net: &Network, w: &CostWeights) {
        self.waiting = net
            .pools()
            .map(|p| pool_wait(net.pool(p), self.occupancy[p.index()], 0, w.w_max))
            .collect();
    }

    /// Checks the spot-conservation and commitment-accounting invariants.
    pub fn check_invariants(&self) -> Result<()> {
        let mut counted = vec![0u32; self.capacity.len()];
        for c in &self.commitments {
            counted[c.pool.index()] += 1;
        }
        for p in 0..self.capacity.len() {
            if self.occupancy[p] + self.free(p) != self.capacity[p] {
                return Err(Error::Contract(format!("spot conservation broken at pool {p}")));
            }
            if counted[p] != self.occupancy[p] {
                return Err(Error::Contract(format!("commitments at pool {p} do not sum to occupancy")));
            }
        }
        Ok(())
    }
}

/// Delivered energy per (user, period).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RateRealization {
    /// Every charging user receives the model rate `π(k+1)`.
    #[default]
    Nominal,
    Sampled(BTreeMap<(UserId, Period), f64>),
}

/// Exogenous information revealed between `t` and `t + 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExogenousInfo {
    /// Users arriving at `t + 1`.
    pub arrivals: Vec<EvUser>,
    pub rates: RateRealization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Departure {
    pub user: EvUser,
    pub pool: PoolId,
    pub duration: u32,
    pub started: Period,
    /// Left below the SOC threshold.
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: SystemState,
    pub departures: Vec<Departure>,
}

/// Applies the period-`t` decisions, charges every committed user, releases
/// finished spots and admits the next arrivals. Pending users without a
/// decision (or with [`Decision::Defer`]) stay pending.
pub fn advance(
    state: &SystemState,
    net: &Network,
    decisions: &[(UserId, Decision)],
    exo: &ExogenousInfo,
    w: &CostWeights,
) -> Result<Transition> {
    let t = state.t;
    let mut decided: BTreeMap<UserId, Decision> = BTreeMap::new();
    for &(id, d) in decisions {
        if state.pending_user(id).is_none() {
            return Err(Error::Contract(format!("decision for user {id} who is not pending")));
        }
        if decided.insert(id, d).is_some() {
            return Err(Error::Contract(format!("two decisions for user {id}")));
        }
    }

    let mut load = state.occupancy.clone();
    let mut commitments = state.commitments.clone();
    let mut pending = Vec::with_capacity(state.pending.len());
    let mut gone: BTreeSet<UserId> = BTreeSet::new();
    for p in &state.pending {
        match decided.get(&p.user.id).copied().unwrap_or(Decision::Defer) {
            Decision::Charge { pool, duration } => {
                if duration == 0 {
                    return Err(Error::Contract(format!("user {} committed for 0 periods", p.user.id)));
                }
                load[pool.index()] += 1;
                if load[pool.index()] > state.capacity[pool.index()] {
                    return Err(Error::Contract(format!(
                        "capacity exceeded at lot {} ({})",
                        net.lot_of(pool),
                        pool.kind.label()
                    )));
                }
                commitments.push(Commitment {
                    user: p.user.clone(),
                    pool,
                    duration,
                    remaining: duration,
                    parked: 0,
                    started: t,
                });
            }
            Decision::NoCharge => {
                if p.user.needs_charge() {
                    return Err(Error::Contract(format!("user {} leaves below the SOC threshold", p.user.id)));
                }
                gone.insert(p.user.id);
            }
            Decision::Defer => pending.push(PendingUser {
                user: p.user.clone(),
                waited: p.waited + 1,
            }),
        }
    }

    let mut freed = vec![0u32; state.capacity.len()];
    let mut departures = Vec::new();
    let mut staying = Vec::with_capacity(commitments.len());
    for mut c in commitments {
        let delivered = match &exo.rates {
            RateRealization::Nominal => w.pi * c.pool.kind.rate_multiplier(),
            RateRealization::Sampled(m) => *m.get(&(c.user.id, t)).ok_or_else(|| {
                Error::Contract(format!("no rate sample for user {} at period {t}", c.user.id))
            })?,
        };
        c.user.soc = (c.user.soc + delivered.max(0.0)).min(c.user.battery_capacity);
        c.remaining -= 1;
        c.parked += 1;
        if c.remaining == 0 || c.parked >= c.user.parking_duration {
            freed[c.pool.index()] += 1;
            departures.push(Departure {
                shortfall: c.user.needs_charge(),
                user: c.user,
                pool: c.pool,
                duration: c.duration,
                started: c.started,
            });
        } else {
            staying.push(c);
        }
    }

    let mut occupancy = vec![0u32; state.capacity.len()];
    for c in &staying {
        occupancy[c.pool.index()] += 1;
    }
    let available = (0..state.capacity.len())
        .map(|p| state.capacity[p] - occupancy[p] - freed[p])
        .collect();

    let mut next = SystemState {
        t: t + 1,
        horizon: state.horizon,
        capacity: state.capacity.clone(),
        available,
        new_spots: freed,
        occupancy,
        pending,
        commitments: staying,
        waiting: Vec::new(),
    };
    next.admit(exo.arrivals.iter().cloned());
    next.refresh_waiting(net, w);
    Ok(Transition { state: next, departures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{load_network, tests::eighteen_node_doc};

    fn facility(e: f64, beta: f64, c: u32) -> Facility {
        let pool = ChargerPool {
            capacity: c,
            search_time: e,
            awareness: beta,
            prices: vec![1.0],
        };
        Facility {
            lot: 1,
            pools: [pool.clone(), pool],
        }
    }

    #[test]
    fn waiting_time_examples() {
        let f = facility(1.0, 1.0, 5);
        assert!((waiting_time(&f, ChargerType::Slow, 0, 0, 1e3).unwrap() - 1.0).abs() < 1e-9);
        assert!((waiting_time(&f, ChargerType::Slow, 3, 1, 1e3).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(waiting_time(&f, ChargerType::Fast, 4, 1, 1e3).unwrap(), 1e3);
        let unaware = facility(1.0, 0.0, 5);
        for occ in 0..5 {
            assert_eq!(waiting_time(&unaware, ChargerType::Slow, occ, 0, 1e3).unwrap(), 0.0);
        }
    }

    #[test]
    fn waiting_time_zero_capacity_is_an_error() {
        let f = facility(1.0, 1.0, 0);
        assert_eq!(
            waiting_time(&f, ChargerType::Fast, 0, 0, 1e3),
            Err(Error::NoSuchPool { lot: 1, kind: ChargerType::Fast })
        );
    }

    fn net() -> Network {
        load_network(&eighteen_node_doc()).unwrap()
    }

    fn user(id: UserId, soc: f64) -> EvUser {
        EvUser {
            id,
            origin: 1,
            destination: 8,
            arrival_period: 0,
            soc,
            battery_capacity: 50.0,
            parking_duration: 4,
            soc_threshold: 20.0,
        }
    }

    #[test]
    fn empty_transition_keeps_spots() {
        let net = net();
        let w = CostWeights::default();
        let s = SystemState::initial(&net, 19, &w);
        let next = advance(&s, &net, &[], &ExogenousInfo::default(), &w).unwrap().state;
        assert_eq!(next.t, 1);
        assert_eq!(next.available, s.available);
        assert_eq!(next.occupancy, s.occupancy);
        next.check_invariants().unwrap();
    }

    #[test]
    fn fast_charging_at_nominal_rate() {
        let net = net();
        let w = CostWeights::default();
        let mut s = SystemState::initial(&net, 19, &w);
        s.admit([user(1, 10.0)]);
        let pool = PoolId::new(0, ChargerType::Fast);
        let tr = advance(&s, &net, &[(1, Decision::Charge { pool, duration: 2 })], &ExogenousInfo::default(), &w).unwrap();
        let c = &tr.state.commitments[0];
        assert!((c.user.soc - 22.4).abs() < 1e-12);
        assert_eq!(c.remaining, 1);
        assert_eq!(tr.state.occupancy[pool.index()], 1);
        tr.state.check_invariants().unwrap();
    }

    #[test]
    fn departure_frees_a_spot_next_period() {
        let net = net();
        let w = CostWeights::default();
        let mut s = SystemState::initial(&net, 19, &w);
        s.admit((1..=3).map(|i| user(i, 10.0)));
        let pool = PoolId::new(1, ChargerType::Slow);
        let d = [
            (1, Decision::Charge { pool, duration: 1 }),
            (2, Decision::Charge { pool, duration: 3 }),
            (3, Decision::Charge { pool, duration: 3 }),
        ];
        // Commitments start at t, so after the first advance user 1 is gone.
        let s1 = advance(&s, &net, &d[1..], &ExogenousInfo::default(), &w).unwrap().state;
        let tr = advance(&s, &net, &d, &ExogenousInfo::default(), &w).unwrap();
        assert_eq!(tr.state.occupancy[pool.index()], 2);
        assert_eq!(tr.state.new_spots[pool.index()], 1);
        assert_eq!(tr.departures.len(), 1);
        assert_eq!(tr.departures[0].user.id, 1);
        assert!(tr.departures[0].shortfall);
        assert_eq!(s1.occupancy[pool.index()], 2);
        tr.state.check_invariants().unwrap();
    }

    #[test]
    fn capacity_violation_is_a_contract_error() {
        let net = net();
        let w = CostWeights::default();
        let mut s = SystemState::initial(&net, 19, &w);
        s.admit((1..=3).map(|i| user(i, 10.0)));
        let pool = PoolId::new(0, ChargerType::Fast);
        let d: Vec<_> = (1..=3).map(|i| (i, Decision::Charge { pool, duration: 1 })).collect();
        assert!(matches!(advance(&s, &net, &d, &ExogenousInfo::default(), &w), Err(Error::Contract(_))));
    }

    #[test]
    fn deferred_users_stay_pending_and_accrue_waiting() {
        let net = net();
        let w = CostWeights::default();
        let mut s = SystemState::initial(&net, 19, &w);
        s.admit([user(1, 10.0)]);
        let exo = ExogenousInfo {
            arrivals: vec![user(2, 12.0)],
            rates: RateRealization::Nominal,
        };
        let next = advance(&s, &net, &[], &exo, &w).unwrap().state;
        assert_eq!(next.pending.len(), 2);
        assert_eq!(next.pending[0].waited, 1);
        assert_eq!(next.pending[1].waited, 0);
    }

    #[test]
    fn sampled_rates_and_battery_cap() {
        let net = net();
        let w = CostWeights::default();
        let mut s = SystemState::initial(&net, 19, &w);
        s.admit([user(1, 45.0)]);
        let pool = PoolId::new(0, ChargerType::Slow);
        let mut m = BTreeMap::new();
        m.insert((1, 0), 7.3);
        let exo = ExogenousInfo {
            arrivals: vec![],
            rates: RateRealization::Sampled(m),
        };
        let tr = advance(&s, &net, &[(1, Decision::Charge { pool, duration: 2 })], &exo, &w).unwrap();
        assert_eq!(tr.state.commitments[0].user.soc, 50.0);

        let missing = ExogenousInfo {
            arrivals: vec![],
            rates: RateRealization::Sampled(BTreeMap::new()),
        };
        assert!(advance(&s, &net, &[(1, Decision::Charge { pool, duration: 2 })], &missing, &w).is_err());
    }
}
