//! First-come-first-serve baseline. Each arriving user picks the pool that
//! looks cheapest to it alone and queues there; freed spots go to the
//! heads of the queues.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::demand::{EvUser, Period, UserId};
use crate::engine::{PeriodPlan, Scheduler};
use crate::error::Result;
use crate::network::{Network, PoolId};
use crate::sim::Model;
use crate::state::{pool_wait, SystemState};
use crate::user_opt::{charge_cost, CostWeights, Decision};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueEvent {
    Join { t: Period, user: UserId, pool: PoolId },
    Serve { t: Period, user: UserId, pool: PoolId },
    /// The target stopped fitting in the remaining horizon.
    Leave { t: Period, user: UserId, pool: PoolId },
}

/// Waiting lines per pool, in arrival order then user id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FcfsQueue {
    lines: BTreeMap<PoolId, VecDeque<UserId>>,
}

impl FcfsQueue {
    pub fn line(&self, pool: PoolId) -> impl Iterator<Item = UserId> + '_ {
        self.lines.get(&pool).into_iter().flatten().copied()
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.lines.values().any(|q| q.contains(&user))
    }

    fn push(&mut self, pool: PoolId, user: UserId) {
        debug_assert!(!self.contains(user));
        self.lines.entry(pool).or_default().push_back(user);
    }

    fn remove(&mut self, user: UserId) -> Option<PoolId> {
        for (pool, q) in &mut self.lines {
            if let Some(i) = q.iter().position(|u| *u == user) {
                q.remove(i);
                return Some(*pool);
            }
        }
        None
    }
}

/// The user's own cheapest pool at `t` with the shortest sufficient charge,
/// ignoring everyone else's choices this period.
pub fn myopic_target(user: &EvUser, state: &SystemState, net: &Network, w: &CostWeights) -> Result<Option<(PoolId, u32)>> {
    let mut best: Option<(PoolId, u32, f64)> = None;
    for pool in net.pools() {
        if net.capacity(pool) == 0 {
            continue;
        }
        let n = w.min_duration(user.soc, user.soc_threshold, pool);
        let left = state.horizon.saturating_sub(state.t);
        if n > user.parking_duration || n as usize > left {
            continue;
        }
        let wait = pool_wait(net.pool(pool), state.occupancy[pool.index()], 0, w.w_max);
        let c = charge_cost(user, pool, n, state.t, net, w, wait)?.total();
        if best.is_none_or(|(_, _, b)| c < b) {
            best = Some((pool, n, c));
        }
    }
    Ok(best.map(|(p, n, _)| (p, n)))
}

#[derive(Debug, Clone, Default)]
pub struct PriorityScheduler {
    pub queue: FcfsQueue,
    pub events: Vec<QueueEvent>,
    targets: BTreeMap<UserId, u32>,
}

impl PriorityScheduler {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Scheduler for PriorityScheduler {
    fn name(&self) -> &'static str {
        "priority"
    }

    fn decide(&mut self, model: &Model, state: &SystemState, _seed: u64) -> Result<PeriodPlan> {
        let (net, w, t) = (&model.net, &model.weights, state.t);
        let mut decisions = Vec::new();

        // Drop queued users whose charge no longer fits before the horizon.
        for p in &state.pending {
            let id = p.user.id;
            if let Some(&n) = self.targets.get(&id) {
                if t + n as usize > state.horizon {
                    if let Some(pool) = self.queue.remove(id) {
                        self.events.push(QueueEvent::Leave { t, user: id, pool });
                    }
                    self.targets.remove(&id);
                }
            }
        }

        let mut fresh: Vec<&EvUser> = state
            .pending
            .iter()
            .map(|p| &p.user)
            .filter(|u| !self.queue.contains(u.id))
            .collect();
        fresh.sort_by_key(|u| (u.arrival_period, u.id));
        for u in fresh {
            if !u.needs_charge() {
                decisions.push((u.id, Decision::NoCharge));
                continue;
            }
            if let Some((pool, n)) = myopic_target(u, state, net, w)? {
                self.queue.push(pool, u.id);
                self.targets.insert(u.id, n);
                self.events.push(QueueEvent::Join { t, user: u.id, pool });
            }
        }

        let mut served = BTreeSet::new();
        for pool in net.pools() {
            let p = pool.index();
            let free = state.capacity[p] - state.occupancy[p];
            let heads: Vec<UserId> = self.queue.line(pool).take(free as usize).collect();
            for id in heads {
                self.queue.remove(id);
                let n = self.targets.remove(&id).expect("queued users have a target");
                self.events.push(QueueEvent::Serve { t, user: id, pool });
                decisions.push((id, Decision::Charge { pool, duration: n }));
                served.insert(id);
            }
        }
        for p in &state.pending {
            if p.user.needs_charge() && !served.contains(&p.user.id) {
                decisions.push((p.user.id, Decision::Defer));
            }
        }
        Ok(PeriodPlan {
            decisions,
            ..Default::default()
        })
    }

    fn audit(&self) -> Vec<String> {
        audit_queue(&self.events)
    }
}

/// Flags every user served while someone who joined the same line earlier
/// was still waiting in it.
pub fn audit_queue(events: &[QueueEvent]) -> Vec<String> {
    let mut lines: BTreeMap<PoolId, Vec<UserId>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        match *e {
            QueueEvent::Join { user, pool, .. } => lines.entry(pool).or_default().push(user),
            QueueEvent::Leave { user, pool, .. } => lines.entry(pool).or_default().retain(|u| *u != user),
            QueueEvent::Serve { t, user, pool } => {
                let line = lines.entry(pool).or_default();
                match line.iter().position(|u| *u == user) {
                    Some(0) => {
                        line.remove(0);
                    }
                    Some(i) => {
                        out.push(format!("t={t}: user {user} served ahead of user {}", line[0]));
                        line.remove(i);
                    }
                    None => out.push(format!("t={t}: user {user} served without queueing")),
                }
            }
        }
    }
    out
}
