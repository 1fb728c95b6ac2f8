//! One search tree. Pre-decision levels assign one user at a time (users in
//! id order); once every user of a period is assigned, a post-decision node
//! branches on sampled outcomes into the next period.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::demand::{EvUser, Period, UserId, PHANTOM_ID_BASE};
use crate::error::{Error, Result};
use crate::network::PoolId;
use crate::rng::substream;
use crate::sh::{failure_surcharge, shoot};
use crate::sim::{admissible_charges, greedy_decision, lower_bound_value, marginal_charge_cost, realized_rates, terminal_penalty, Model};
use crate::state::{advance, ExogenousInfo, SystemState};
use crate::user_opt::Decision;

use super::{uct_select, MctsConfig};

/// Users of one period inside the tree.
#[derive(Debug)]
pub(crate) struct PeriodCtx {
    pub state: SystemState,
    /// Users still to be assigned, sorted by id.
    pub users: Vec<EvUser>,
    /// Users already above their threshold; they leave without charging.
    pub satisfied: Vec<UserId>,
}

impl PeriodCtx {
    pub fn new(state: SystemState) -> Self {
        let mut users = Vec::new();
        let mut satisfied = Vec::new();
        for p in &state.pending {
            if p.user.needs_charge() {
                users.push(p.user.clone());
            } else {
                satisfied.push(p.user.id);
            }
        }
        users.sort_by_key(|u| u.id);
        satisfied.sort_unstable();
        Self { state, users, satisfied }
    }

    fn joint(&self, decisions: &[Decision]) -> Vec<(UserId, Decision)> {
        self.satisfied
            .iter()
            .map(|id| (*id, Decision::NoCharge))
            .chain(self.users.iter().map(|u| u.id).zip(decisions.iter().copied()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Edge {
    pub action: Decision,
    pub cost: f64,
    pub child: usize,
}

#[derive(Debug)]
pub(crate) enum NodeKind {
    Assign {
        period: Arc<PeriodCtx>,
        idx: usize,
        partial: Vec<Decision>,
        assigned: Vec<u32>,
        untried: Vec<Decision>,
        edges: Vec<Edge>,
    },
    Post {
        period: Arc<PeriodCtx>,
        decisions: Vec<Decision>,
        outcomes: Vec<(usize, usize)>,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub kind: NodeKind,
    /// Periods below the root period.
    pub depth: usize,
    pub visits: u32,
    pub value: f64,
}

impl Node {
    /// Incremental mean of the cost-to-go.
    pub fn update(&mut self, g: f64) {
        self.visits += 1;
        self.value += (g - self.value) / f64::from(self.visits);
    }
}

pub(crate) struct Tree<'a> {
    pub model: &'a Model,
    pub cfg: &'a MctsConfig,
    pub seed: u64,
    pub tree_index: usize,
    pub t_root: Period,
    pub nodes: Vec<Node>,
    prior: &'a HashMap<UserId, Decision>,
    surcharges: HashMap<(UserId, Period, usize, u32), f64>,
    abs_cost_sum: f64,
    edge_count: usize,
    pub shots: usize,
    pub rejected: f64,
}

impl<'a> Tree<'a> {
    pub fn new(
        model: &'a Model,
        cfg: &'a MctsConfig,
        seed: u64,
        tree_index: usize,
        root: SystemState,
        prior: &'a HashMap<UserId, Decision>,
    ) -> Result<Self> {
        let t_root = root.t;
        let mut tree = Self {
            model,
            cfg,
            seed,
            tree_index,
            t_root,
            nodes: Vec::new(),
            prior,
            surcharges: HashMap::new(),
            abs_cost_sum: 0.0,
            edge_count: 0,
            shots: 0,
            rejected: 0.0,
        };
        tree.pre_decision(root, 0)?;
        Ok(tree)
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    fn push(&mut self, kind: NodeKind, depth: usize) -> usize {
        self.nodes.push(Node {
            kind,
            depth,
            visits: 0,
            value: 0.0,
        });
        self.nodes.len() - 1
    }

    /// Unexplored actions, cheapest stage cost first. Waiting is only an
    /// option when every pool is full.
    fn untried(&mut self, period: &PeriodCtx, idx: usize, assigned: &[u32]) -> Result<Vec<Decision>> {
        let w = &self.model.weights;
        let mut acts = admissible_charges(&period.users[idx], &period.state, &self.model.net, assigned, w);
        if acts.is_empty() {
            acts.push(Decision::Defer);
        }
        let mut keyed = Vec::with_capacity(acts.len());
        for a in acts {
            keyed.push((self.edge_cost(period, idx, assigned, a)?, a));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(keyed.into_iter().map(|(_, a)| a).collect())
    }

    /// Node for the start of a period: an assignment level, or straight to
    /// the post-decision node if nobody needs a charger.
    fn pre_decision(&mut self, state: SystemState, depth: usize) -> Result<usize> {
        let period = Arc::new(PeriodCtx::new(state));
        self.assign_node(period, 0, Vec::new(), depth)
    }

    fn assign_node(&mut self, period: Arc<PeriodCtx>, idx: usize, partial: Vec<Decision>, depth: usize) -> Result<usize> {
        let pools = period.state.capacity.len();
        if idx == period.users.len() {
            return Ok(self.push(
                NodeKind::Post {
                    period,
                    decisions: partial,
                    outcomes: Vec::new(),
                },
                depth,
            ));
        }
        let mut assigned = vec![0u32; pools];
        for d in &partial {
            if let Some(p) = d.pool() {
                assigned[p.index()] += 1;
            }
        }
        let untried = self.untried(&period, idx, &assigned)?;
        Ok(self.push(
            NodeKind::Assign {
                period,
                idx,
                partial,
                assigned,
                untried,
                edges: Vec::new(),
            },
            depth,
        ))
    }

    fn surcharge(&mut self, user: &EvUser, t: Period, pool: PoolId, n: u32) -> f64 {
        if self.model.rates.is_deterministic() {
            return 0.0;
        }
        let key = (user.id, t, pool.index(), n);
        if let Some(v) = self.surcharges.get(&key) {
            return *v;
        }
        let mut rng = substream(
            self.seed,
            "sh",
            &[self.t_root as u64, self.tree_index as u64, user.id, t as u64, pool.index() as u64, u64::from(n)],
        );
        let out = shoot(
            user.soc,
            n,
            user.soc_threshold,
            pool.kind,
            self.cfg.xi,
            user.battery_capacity,
            &self.model.rates,
            &mut rng,
        );
        self.shots += out.shots;
        self.rejected += (1.0 - out.survival) * out.shots as f64;
        let v = failure_surcharge(&out, self.model.weights.alpha_over, user.parking_duration);
        self.surcharges.insert(key, v);
        v
    }

    /// Stage cost of assigning `user` the action `d` given `assigned`.
    fn edge_cost(&mut self, period: &PeriodCtx, idx: usize, assigned: &[u32], d: Decision) -> Result<f64> {
        let user = &period.users[idx];
        let w = &self.model.weights;
        match d {
            Decision::Charge { pool, duration } => {
                let c = marginal_charge_cost(user, pool, duration, assigned[pool.index()], &period.state, &self.model.net, w)?;
                Ok(c + self.surcharge(user, period.state.t, pool, duration))
            }
            Decision::Defer => Ok(w.theta_wait),
            Decision::NoCharge => Ok(0.0),
        }
    }

    /// Default action: the prior at the root period when it still fits,
    /// otherwise the greedy choice.
    fn default_action(&self, period: &PeriodCtx, idx: usize, assigned: &[u32], depth: usize) -> Result<Decision> {
        let user = &period.users[idx];
        if depth == 0 {
            if let Some(d) = self.prior.get(&user.id) {
                let fits = match d.pool() {
                    Some(p) => {
                        let p = p.index();
                        period.state.capacity[p] - period.state.occupancy[p] > assigned[p]
                    }
                    None => true,
                };
                if fits && *d != Decision::NoCharge {
                    return Ok(*d);
                }
            }
        }
        greedy_decision(user, &period.state, &self.model.net, assigned, &self.model.weights)
    }

    /// Draws the exogenous information for scenario `s` after `period`.
    /// Rates and arrivals come from separate keyed streams, so sibling
    /// actions see the same scenario whatever they put on the chargers.
    fn outcome(&self, period: &PeriodCtx, decisions: &[Decision], s: usize) -> Result<SystemState> {
        let t = period.state.t;
        let model = self.model;
        let keys = [self.t_root as u64, self.tree_index as u64, s as u64];
        let joint = period.joint(decisions);
        let rate_seed = substream(self.seed, "mcts.rates", &keys).random::<u64>();
        let rates = realized_rates(&model.rates, rate_seed, &period.state, &joint);
        let arrivals = if t + 1 < model.horizon {
            let mut rng = substream(self.seed, "mcts.arrivals", &[keys[0], keys[1], keys[2], t as u64]);
            let mut next_id = PHANTOM_ID_BASE + (((t + 1) as u64) << 24) + ((s as u64) << 12);
            model.arrivals.sample(&model.net, t + 1, &mut rng, &mut next_id)
        } else {
            Vec::new()
        };
        Ok(advance(&period.state, &model.net, &joint, &ExogenousInfo { arrivals, rates }, &model.weights)?.state)
    }

    /// Leaf value if `state` (at depth `depth`) ends the search.
    fn cut_value(&self, state: &SystemState, depth: usize) -> Result<Option<f64>> {
        let w = &self.model.weights;
        if state.t >= self.model.horizon {
            let left = state.pending.iter().filter(|p| p.user.needs_charge()).count();
            return Ok(Some(left as f64 * terminal_penalty(w)));
        }
        if depth >= self.cfg.horizon {
            let users: Vec<EvUser> = state.pending.iter().map(|p| p.user.clone()).collect();
            return Ok(Some(lower_bound_value(state, &self.model.net, &users, w)?));
        }
        Ok(None)
    }

    fn outcome_node(&mut self, period: &PeriodCtx, decisions: &[Decision], s: usize, depth: usize) -> Result<usize> {
        let next = self.outcome(period, decisions, s)?;
        match self.cut_value(&next, depth + 1)? {
            Some(value) => Ok(self.push(NodeKind::Leaf { value }, depth + 1)),
            None => self.pre_decision(next, depth + 1),
        }
    }

    fn scenarios(&self) -> usize {
        if self.model.is_deterministic() {
            1
        } else {
            self.cfg.outcomes.max(1)
        }
    }

    fn iota(&self) -> f64 {
        let scale = if self.edge_count == 0 {
            1.0
        } else {
            self.abs_cost_sum / self.edge_count as f64
        };
        self.cfg.iota * if scale > 0.0 { scale } else { 1.0 }
    }

    /// Cost-to-go from `node` under the default policy.
    fn rollout(&mut self, node: usize, s: usize) -> Result<f64> {
        let (mut period, mut idx, mut decisions, depth) = match &self.nodes[node].kind {
            NodeKind::Leaf { value } => return Ok(*value),
            NodeKind::Assign { period, idx, partial, .. } => (period.clone(), *idx, partial.clone(), self.nodes[node].depth),
            NodeKind::Post { period, decisions, .. } => {
                (period.clone(), period.users.len(), decisions.clone(), self.nodes[node].depth)
            }
        };
        let mut depth = depth;
        let mut total = 0.0;
        loop {
            let mut assigned = vec![0u32; period.state.capacity.len()];
            for d in &decisions {
                if let Some(p) = d.pool() {
                    assigned[p.index()] += 1;
                }
            }
            while idx < period.users.len() {
                let d = self.default_action(&period, idx, &assigned, depth)?;
                total += self.edge_cost(&period, idx, &assigned, d)?;
                if let Some(p) = d.pool() {
                    assigned[p.index()] += 1;
                }
                decisions.push(d);
                idx += 1;
            }
            let next = self.outcome(&period, &decisions, s)?;
            if let Some(v) = self.cut_value(&next, depth + 1)? {
                return Ok(total + v);
            }
            period = Arc::new(PeriodCtx::new(next));
            idx = 0;
            decisions = Vec::new();
            depth += 1;
        }
    }

    /// Adds one explored action below an assignment node.
    pub fn expand(&mut self, node: usize) -> Result<Option<(usize, f64)>> {
        let depth = self.nodes[node].depth;
        let (period, idx, partial, assigned, pick) = match &self.nodes[node].kind {
            NodeKind::Assign {
                period,
                idx,
                partial,
                assigned,
                untried,
                edges,
            } => {
                if untried.is_empty() || edges.len() >= self.cfg.kappa {
                    return Ok(None);
                }
                (period.clone(), *idx, partial.clone(), assigned.clone(), edges.is_empty())
            }
            _ => return Ok(None),
        };
        let pos = if pick {
            let d = self.default_action(&period, idx, &assigned, depth)?;
            match &self.nodes[node].kind {
                NodeKind::Assign { untried, .. } => untried.iter().position(|a| *a == d),
                _ => unreachable!(),
            }
        } else {
            None
        };
        let pos = pos.unwrap_or(0);
        let action = match &mut self.nodes[node].kind {
            NodeKind::Assign { untried, .. } => untried.remove(pos),
            _ => unreachable!(),
        };
        let cost = self.edge_cost(&period, idx, &assigned, action)?;
        let mut next_partial = partial;
        next_partial.push(action);
        let child = self.assign_node(period, idx + 1, next_partial, depth)?;
        if let NodeKind::Assign { edges, .. } = &mut self.nodes[node].kind {
            edges.push(Edge { action, cost, child });
        }
        self.abs_cost_sum += cost.abs();
        self.edge_count += 1;
        Ok(Some((child, cost)))
    }

    /// Child of a post-decision node for a sampled scenario, created on
    /// first sight. Returns (child, newly created).
    pub fn sample_outcome(&mut self, node: usize) -> Result<(usize, bool)> {
        // Round-robin over scenarios so sibling subtrees see the same mix.
        let s = self.nodes[node].visits as usize % self.scenarios();
        let (period, decisions, depth) = match &self.nodes[node].kind {
            NodeKind::Post { period, decisions, outcomes } => {
                if let Some((_, c)) = outcomes.iter().find(|(k, _)| *k == s) {
                    return Ok((*c, false));
                }
                (period.clone(), decisions.clone(), self.nodes[node].depth)
            }
            _ => return Err(Error::Contract("outcome sampled at a pre-decision node".into())),
        };
        let child = self.outcome_node(&period, &decisions, s, depth)?;
        if let NodeKind::Post { outcomes, .. } = &mut self.nodes[node].kind {
            outcomes.push((s, child));
        }
        Ok((child, true))
    }

    /// One select, expand, simulate, backpropagate pass.
    pub fn iterate(&mut self) -> Result<()> {
        let mut path = vec![0usize];
        let mut costs = Vec::new();
        let mut node = 0usize;
        let leaf = loop {
            match &self.nodes[node].kind {
                NodeKind::Leaf { value } => break *value,
                NodeKind::Assign { .. } => {
                    if let Some((child, cost)) = self.expand(node)? {
                        path.push(child);
                        costs.push(cost);
                        // A fresh sibling starts on scenario 0 like the others.
                        break self.rollout(child, 0)?;
                    }
                    let iota = self.iota();
                    let edge = match &self.nodes[node].kind {
                        NodeKind::Assign { edges, .. } => {
                            let scored: Vec<(f64, u32)> = edges
                                .iter()
                                .map(|e| (e.cost + self.nodes[e.child].value, self.nodes[e.child].visits))
                                .collect();
                            edges[uct_select(&scored, self.nodes[node].visits, iota)?]
                        }
                        _ => unreachable!(),
                    };
                    path.push(edge.child);
                    costs.push(edge.cost);
                    node = edge.child;
                }
                NodeKind::Post { .. } => {
                    let s = self.nodes[node].visits as usize % self.scenarios();
                    let (child, fresh) = self.sample_outcome(node)?;
                    path.push(child);
                    costs.push(0.0);
                    if fresh {
                        break self.rollout(child, s)?;
                    }
                    node = child;
                }
            }
        };
        self.backpropagate(&path, &costs, leaf);
        Ok(())
    }

    /// Updates every node on `path` with its cost-to-go: the stage costs
    /// below it plus `leaf`.
    pub fn backpropagate(&mut self, path: &[usize], costs: &[f64], leaf: f64) {
        for (g, &n) in super::costs_to_go(costs, leaf).into_iter().zip(path) {
            self.nodes[n].update(g);
        }
    }
}
