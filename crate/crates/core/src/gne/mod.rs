//! Consensus loop: repeated best-response sweeps under an exponential
//! penalty on shared charger capacity, with multiplier updates between
//! sweeps and a final eviction pass that restores exact feasibility.

mod kkt;

pub use kkt::{check_kkt_residuals, KktReport, UserKkt};

use serde::{Deserialize, Serialize};

use crate::demand::{EvUser, UserId};
use crate::error::{Error, Result};
use crate::network::{Network, PoolId};
use crate::state::SystemState;
use crate::user_opt::{best_response, penalized_cost, user_cost, Action, CostBreakdown, CostWeights, Decision, MultiplierView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Users respond in id order to a profile updated in place.
    #[default]
    GaussSeidel,
    /// Every user responds to the previous sweep's profile.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GneConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub rho0: f64,
    /// Geometric growth factor of the penalty weight.
    pub growth: f64,
    pub u0: f64,
    pub sweep: SweepMode,
}

impl Default for GneConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            rel_tol: 0.005,
            rho0: 1.0,
            growth: 2.0,
            u0: 1.0,
            sweep: SweepMode::GaussSeidel,
        }
    }
}

impl GneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("gne.max_iters", "must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("gne.rel_tol", "must be non-negative"));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return Err(Error::invalid("gne.rho0", "must be positive"));
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return Err(Error::invalid("gne.growth", "must exceed 1"));
        }
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return Err(Error::invalid("gne.u0", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub z: usize,
    pub rho: f64,
    /// `u[i][pool]` for the i-th user of the round.
    pub u: Vec<Vec<f64>>,
    pub growth: f64,
}

impl MultiplierState {
    pub fn new(users: usize, pools: usize, cfg: &GneConfig) -> Self {
        Self {
            z: 0,
            rho: cfg.rho0,
            u: vec![vec![cfg.u0; pools]; users],
            growth: cfg.growth,
        }
    }

    pub fn view(&self, i: usize) -> MultiplierView<'_> {
        MultiplierView {
            rho: self.rho,
            u: &self.u[i],
        }
    }
}

/// `u ← max(0, u + ρ·g)` elementwise, then `ρ ← r·ρ`.
pub fn update_multipliers(m: &MultiplierState, violations: &[Vec<f64>]) -> MultiplierState {
    let u = m
        .u
        .iter()
        .zip(violations)
        .map(|(ui, gi)| ui.iter().zip(gi).map(|(u, g)| (u + m.rho * g).max(0.0)).collect())
        .collect();
    MultiplierState {
        z: m.z + 1,
        rho: m.rho * m.growth,
        u,
        growth: m.growth,
    }
}

/// One row of the consensus trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub total_obj: f64,
    pub costs: CostBreakdown,
    pub max_violation: f64,
    /// Occupancy per pool if the profile were implemented.
    pub occupancy: Vec<u32>,
    /// Change against the previous row; `None` for the first.
    pub marginal: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsensusTrace {
    pub rows: Vec<TraceRow>,
}

impl ConsensusTrace {
    pub fn push(&mut self, mut row: TraceRow) {
        row.iter = self.rows.len() + 1;
        row.marginal = self.rows.last().map(|prev| {
            row.occupancy
                .iter()
                .zip(&prev.occupancy)
                .map(|(a, b)| i64::from(*a) - i64::from(*b))
                .collect()
        });
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// True if the final two rows have identical occupancy.
    pub fn reached_consensus(&self) -> bool {
        match self.rows.last().and_then(|r| r.marginal.as_ref()) {
            Some(m) => m.iter().all(|d| *d == 0),
            None => self.rows.len() == 1,
        }
    }
}

/// A joint profile: one entry per user, `None` when unserved.
pub type Profile = Vec<Option<Action>>;

fn counts(profile: &Profile, pools: usize) -> Vec<u32> {
    let mut c = vec![0u32; pools];
    for a in profile.iter().flatten() {
        if let Some(p) = a.choice {
            c[p.index()] += 1;
        }
    }
    c
}

fn without(mut counts: Vec<u32>, a: Option<&Action>) -> Vec<u32> {
    if let Some(p) = a.and_then(|a| a.choice) {
        counts[p.index()] -= 1;
    }
    counts
}

#[cfg(feature = "parallel")]
fn map_users<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_users<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Evaluates a profile: unpenalized user costs against everyone else's
/// declarations, with `θ′` charged for each unserved user.
pub fn profile_costs(
    state: &SystemState,
    net: &Network,
    users: &[EvUser],
    profile: &Profile,
    w: &CostWeights,
) -> Result<(CostBreakdown, f64, Vec<u32>)> {
    let pools = state.capacity.len();
    let all = counts(profile, pools);
    let mut total = CostBreakdown::default();
    for (u, a) in users.iter().zip(profile) {
        match a {
            Some(a) => total.add(&user_cost(u, a, state, net, &without(all.clone(), Some(a)), w)?),
            None => total.waiting += w.theta_wait,
        }
    }
    let max_violation = (0..pools)
        .map(|p| f64::from(all[p]) - f64::from(state.capacity[p] - state.occupancy[p]))
        .fold(f64::NEG_INFINITY, f64::max);
    let occupancy = (0..pools).map(|p| state.occupancy[p] + all[p]).collect();
    Ok((total, if pools == 0 { 0.0 } else { max_violation }, occupancy))
}

/// One sweep of best responses. `previous` is the profile the sweep starts
/// from; with [`SweepMode::GaussSeidel`] later users see earlier users'
/// new choices.
pub fn consensus_round(
    state: &SystemState,
    net: &Network,
    users: &[EvUser],
    previous: &Profile,
    m: &MultiplierState,
    w: &CostWeights,
    mode: SweepMode,
) -> Result<(Profile, TraceRow)> {
    let pools = state.capacity.len();
    let profile = match mode {
        SweepMode::Jacobi => {
            let base = counts(previous, pools);
            map_users(users.len(), |i| {
                let others = without(base.clone(), previous[i].as_ref());
                best_response(&users[i], state, net, &others, w, &m.view(i)).map(|r| r.map(|(a, _)| a))
            })
            .into_iter()
            .collect::<Result<Profile>>()?
        }
        SweepMode::GaussSeidel => {
            let mut profile = previous.clone();
            let mut live = counts(&profile, pools);
            for i in 0..users.len() {
                let others = without(live.clone(), profile[i].as_ref());
                let a = best_response(&users[i], state, net, &others, w, &m.view(i))?.map(|(a, _)| a);
                live = others;
                if let Some(p) = a.and_then(|a| a.choice) {
                    live[p.index()] += 1;
                }
                profile[i] = a;
            }
            profile
        }
    };
    let (costs, max_violation, occupancy) = profile_costs(state, net, users, &profile, w)?;
    Ok((
        profile,
        TraceRow {
            iter: 0,
            total_obj: costs.total(),
            costs,
            max_violation,
            occupancy,
            marginal: None,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GneOutcome {
    /// Final feasible decisions, aligned with the input users.
    pub decisions: Vec<Decision>,
    pub trace: ConsensusTrace,
    /// Multipliers the last sweep was evaluated with.
    pub multipliers: MultiplierState,
    /// Profile before eviction.
    pub raw_profile: Profile,
    pub evicted: Vec<UserId>,
}

impl GneOutcome {
    pub fn actions(&self, users: &[EvUser]) -> Vec<(UserId, Decision)> {
        users.iter().map(|u| u.id).zip(self.decisions.iter().copied()).collect()
    }
}

/// Per-pool violations as seen by each user.
fn violations(state: &SystemState, profile: &Profile) -> Vec<Vec<f64>> {
    let pools = state.capacity.len();
    let all = counts(profile, pools);
    let g: Vec<f64> = (0..pools)
        .map(|p| f64::from(all[p]) - f64::from(state.capacity[p] - state.occupancy[p]))
        .collect();
    vec![g; profile.len()]
}

/// Runs sweeps until the relative objective change drops below `rel_tol`
/// with a feasible, unchanged occupancy, or `max_iters` is reached. The
/// first sweep always responds to the empty profile.
pub fn run_gne(state: &SystemState, net: &Network, users: &[EvUser], w: &CostWeights, cfg: &GneConfig) -> Result<GneOutcome> {
    let pools = state.capacity.len();
    let mut m = MultiplierState::new(users.len(), pools, cfg);
    let mut trace = ConsensusTrace::default();
    let mut profile: Profile = vec![None; users.len()];
    let mut used = m.clone();
    for z in 0..cfg.max_iters {
        let mode = if z == 0 { SweepMode::Jacobi } else { cfg.sweep };
        let (next, row) = consensus_round(state, net, users, &profile, &m, w, mode)?;
        let prev_obj = trace.last().map(|r| r.total_obj);
        profile = next;
        trace.push(row);
        used = m.clone();
        let row = trace.last().expect("just pushed");
        if let Some(prev) = prev_obj {
            let rel = if prev.abs() > 0.0 {
                (row.total_obj - prev).abs() / prev.abs()
            } else {
                (row.total_obj - prev).abs()
            };
            if rel < cfg.rel_tol && row.max_violation <= 0.0 && trace.reached_consensus() {
                break;
            }
        }
        m = update_multipliers(&m, &violations(state, &profile));
    }

    let raw_profile = profile.clone();
    let evicted = evict(state, net, users, &mut profile, w, &used)?;
    let decisions = profile
        .iter()
        .map(|a| a.map_or(Decision::Defer, |a| a.decision()))
        .collect();
    Ok(GneOutcome {
        decisions,
        trace,
        multipliers: used,
        raw_profile,
        evicted,
    })
}

/// Removes the highest-cost holders of every oversubscribed pool until it
/// fits. Ties evict the later user.
fn evict(
    state: &SystemState,
    net: &Network,
    users: &[EvUser],
    profile: &mut Profile,
    w: &CostWeights,
    m: &MultiplierState,
) -> Result<Vec<UserId>> {
    let pools = state.capacity.len();
    let all = counts(profile, pools);
    let mut evicted = Vec::new();
    for p in 0..pools {
        let free = state.capacity[p] - state.occupancy[p];
        if all[p] <= free {
            continue;
        }
        let pool = PoolId::from_index(p);
        let mut holders = Vec::new();
        for (i, a) in profile.iter().enumerate() {
            if let Some(a) = a.filter(|a| a.choice == Some(pool)) {
                let others = without(all.clone(), Some(&a));
                let c = penalized_cost(&users[i], &a, state, net, &others, w, &m.view(i))?;
                holders.push((c, i));
            }
        }
        holders.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        for &(_, i) in holders.iter().take((all[p] - free) as usize) {
            profile[i] = None;
            evicted.push(users[i].id);
        }
    }
    evicted.sort_unstable();
    Ok(evicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{load_network, tests::eighteen_node_doc, ChargerType, NetworkDoc};
    use proptest::prelude::*;

    fn user(id: UserId, soc: f64, psi: u32) -> EvUser {
        EvUser {
            id,
            origin: 1,
            destination: 8,
            arrival_period: 0,
            soc,
            battery_capacity: 50.0,
            parking_duration: psi,
            soc_threshold: 20.0,
        }
    }

    fn one_spot_doc() -> NetworkDoc {
        let mut doc = eighteen_node_doc();
        doc.facilities.truncate(1);
        doc.facilities[0].slow.capacity = 0;
        doc.facilities[0].fast.capacity = 1;
        doc.drive_to_lot.retain(|d| d.lot == doc.facilities[0].lot);
        doc.drive_from_lot.retain(|d| d.lot == doc.facilities[0].lot);
        doc.onward_miles.retain(|d| d.lot == doc.facilities[0].lot);
        doc
    }

    #[test]
    fn multiplier_examples() {
        let cfg = GneConfig::default();
        let mut m = MultiplierState::new(1, 3, &cfg);
        m.u[0] = vec![0.0, 1.0, 1.0];
        m.rho = 1.0;
        let next = update_multipliers(&m, &[vec![-2.0, 0.0, 0.5]]);
        assert_eq!(next.u[0], vec![0.0, 1.0, 1.5]);
        m.rho = 2.0;
        let next = update_multipliers(&m, &[vec![-2.0, 0.0, 0.5]]);
        assert_eq!(next.u[0], vec![0.0, 1.0, 2.0]);
        assert_eq!(next.rho, 4.0);
        assert_eq!(next.z, 1);
    }

    #[test]
    fn empty_user_set() {
        let net = load_network(&eighteen_node_doc()).unwrap();
        let w = CostWeights::default();
        let s = SystemState::initial(&net, 19, &w);
        let out = run_gne(&s, &net, &[], &w, &GneConfig::default()).unwrap();
        assert!(out.decisions.is_empty());
        assert_eq!(out.trace.rows[0].total_obj, 0.0);
    }

    #[test]
    fn single_user_gets_the_unpenalized_argmin() {
        let net = load_network(&eighteen_node_doc()).unwrap();
        let w = CostWeights::default();
        let s = SystemState::initial(&net, 19, &w);
        let u = user(1, 8.0, 3);
        let zero = vec![0.0; net.pool_count()];
        let (solo, _) = best_response(&u, &s, &net, &[], &w, &MultiplierView { rho: 1.0, u: &zero })
            .unwrap()
            .unwrap();
        let out = run_gne(&s, &net, &[u], &w, &GneConfig::default()).unwrap();
        assert_eq!(out.decisions[0], solo.decision());
    }

    #[test]
    fn two_users_one_spot() {
        let net = load_network(&one_spot_doc()).unwrap();
        let w = CostWeights::default();
        let s = SystemState::initial(&net, 4, &w);
        let users = [user(1, 10.0, 2), user(2, 10.0, 2)];
        let out = run_gne(&s, &net, &users, &w, &GneConfig::default()).unwrap();
        let served = out.decisions.iter().filter(|d| d.pool().is_some()).count();
        assert_eq!(served, 1);
        let pool = PoolId::new(0, ChargerType::Fast);
        assert!(out.decisions.contains(&Decision::Charge { pool, duration: 1 }));
    }

    #[test]
    fn single_iteration_is_repaired_by_eviction() {
        let net = load_network(&one_spot_doc()).unwrap();
        let w = CostWeights::default();
        let s = SystemState::initial(&net, 4, &w);
        let users: Vec<_> = (1..=4).map(|i| user(i, 10.0, 2)).collect();
        let cfg = GneConfig {
            max_iters: 1,
            ..Default::default()
        };
        let out = run_gne(&s, &net, &users, &w, &cfg).unwrap();
        assert!(out.trace.rows[0].max_violation > 0.0);
        assert_eq!(out.evicted.len(), 3);
        assert_eq!(out.decisions.iter().filter(|d| d.pool().is_some()).count(), 1);
    }

    #[test]
    fn jacobi_and_gauss_seidel_agree_without_competition() {
        let net = load_network(&eighteen_node_doc()).unwrap();
        let w = CostWeights::default();
        let s = SystemState::initial(&net, 19, &w);
        let users = [user(1, 8.0, 3), user(2, 30.0, 2)];
        let a = run_gne(&s, &net, &users, &w, &GneConfig::default()).unwrap();
        let cfg = GneConfig {
            sweep: SweepMode::Jacobi,
            ..Default::default()
        };
        let b = run_gne(&s, &net, &users, &w, &cfg).unwrap();
        assert_eq!(a.decisions, b.decisions);
    }

    #[test]
    fn trace_marginals() {
        let mut t = ConsensusTrace::default();
        let row = |occ: Vec<u32>| TraceRow {
            iter: 0,
            total_obj: 0.0,
            costs: CostBreakdown::default(),
            max_violation: 0.0,
            occupancy: occ,
            marginal: None,
        };
        t.push(row(vec![1, 2]));
        assert!(t.rows[0].marginal.is_none());
        t.push(row(vec![2, 1]));
        assert_eq!(t.rows[1].marginal, Some(vec![1, -1]));
        assert!(!t.reached_consensus());
        t.push(row(vec![2, 1]));
        assert!(t.reached_consensus());
        assert_eq!(t.rows[2].iter, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn final_profile_is_feasible_and_multipliers_nonnegative(
            socs in proptest::collection::vec(0.0f64..25.0, 1..12),
            caps in proptest::collection::vec(0u32..3, 8),
            iters in 1usize..6,
            jacobi in any::<bool>(),
        ) {
            let mut doc = eighteen_node_doc();
            for (f, c) in doc.facilities.iter_mut().zip(caps.chunks(2)) {
                f.slow.capacity = c[0];
                f.fast.capacity = c[1];
            }
            let net = load_network(&doc).unwrap();
            let w = CostWeights::default();
            let s = SystemState::initial(&net, 19, &w);
            let users: Vec<_> = socs.iter().enumerate().map(|(i, b)| user(i as u64, *b, 3)).collect();
            let cfg = GneConfig {
                max_iters: iters,
                sweep: if jacobi { SweepMode::Jacobi } else { SweepMode::GaussSeidel },
                ..Default::default()
            };
            let out = run_gne(&s, &net, &users, &w, &cfg).unwrap();
            let mut load = vec![0u32; net.pool_count()];
            for d in &out.decisions {
                if let Some(p) = d.pool() {
                    load[p.index()] += 1;
                }
            }
            for p in net.pools() {
                prop_assert!(load[p.index()] <= net.capacity(p));
            }
            prop_assert!(out.multipliers.u.iter().flatten().all(|u| *u >= 0.0));
            let next = update_multipliers(&out.multipliers, &violations(&s, &out.raw_profile));
            prop_assert!(next.rho > out.multipliers.rho);
            prop_assert!(next.u.iter().flatten().all(|u| *u >= 0.0));
        }
    }
}
