//! Look-ahead tree search over the next few periods. The search refines the
//! consensus profile of the current period: each tree starts from it as the
//! default policy and the final joint action follows the most visited
//! branches across all trees.

mod tree;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::demand::UserId;
use crate::error::{Error, Result};
use crate::network::ChargerType;
use crate::sim::{greedy_decision, lower_bound_value, Model};
use crate::state::SystemState;
use crate::user_opt::Decision;

use tree::{NodeKind, PeriodCtx, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MctsConfig {
    pub enabled: bool,
    /// Iteration budget per period, split across trees.
    pub iterations: usize,
    /// Look-ahead in periods.
    pub horizon: usize,
    /// Most actions explored below one node.
    pub kappa: usize,
    /// Exploration weight, in units of the mean absolute stage cost.
    pub iota: f64,
    /// Shots per rate-uncertainty estimate.
    pub xi: usize,
    /// Scenario pool size at post-decision nodes.
    pub outcomes: usize,
    /// Independent root-parallel trees.
    pub trees: usize,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            iterations: 100,
            horizon: 4,
            kappa: 8,
            iota: std::f64::consts::SQRT_2,
            xi: 30,
            outcomes: 8,
            trees: 1,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mcts.iterations", self.iterations),
            ("mcts.horizon", self.horizon),
            ("mcts.kappa", self.kappa),
            ("mcts.xi", self.xi),
            ("mcts.outcomes", self.outcomes),
            ("mcts.trees", self.trees),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if !(self.iota > 0.0 && self.iota.is_finite()) {
            return Err(Error::invalid("mcts.iota", "must be positive"));
        }
        Ok(())
    }
}

/// Index of the child maximizing `−(cost + value) + ι·sqrt(ln N / n)`.
/// `children[i]` is (stage cost plus child value, child visits). Ties go to
/// the lowest index.
pub fn uct_select(children: &[(f64, u32)], parent_visits: u32, iota: f64) -> Result<usize> {
    if children.is_empty() {
        return Err(Error::Contract("selection at a node with no explored actions".into()));
    }
    let ln_n = f64::from(parent_visits.max(1)).ln();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &(cost, n)) in children.iter().enumerate() {
        let bonus = if n == 0 {
            f64::INFINITY
        } else {
            iota * (ln_n / f64::from(n)).sqrt()
        };
        let score = -cost + bonus;
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

/// Cost-to-go at each node of a path given the stage costs between
/// consecutive nodes and the leaf value.
pub fn costs_to_go(stage_costs: &[f64], leaf: f64) -> Vec<f64> {
    let mut out = vec![leaf; stage_costs.len() + 1];
    for i in (0..stage_costs.len()).rev() {
        out[i] = out[i + 1] + stage_costs[i];
    }
    out
}

/// Running visit statistics of one node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeStats {
    pub visits: u32,
    pub value: f64,
}

/// Incremental-mean update of every node on a path.
pub fn backpropagate(path: &mut [NodeStats], stage_costs: &[f64], leaf: f64) {
    for (s, g) in path.iter_mut().zip(costs_to_go(stage_costs, leaf)) {
        s.visits += 1;
        s.value += (g - s.value) / f64::from(s.visits);
    }
}

/// Visit totals for one explored (charger type, duration) at the root.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub kind: ChargerType,
    pub duration: u32,
    pub visits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MctsOutcome {
    pub decisions: Vec<(UserId, Decision)>,
    /// Visit-weighted root value over all trees.
    pub value: f64,
    pub lower_bound: f64,
    pub root_visits: u32,
    pub histogram: Vec<HistogramRow>,
    /// Fraction of rate-uncertainty shots that missed the threshold.
    pub rejection_rate: f64,
}

#[cfg(feature = "parallel")]
fn build_trees<'a>(jobs: Vec<usize>, f: impl Fn(usize) -> Result<Tree<'a>> + Sync + Send) -> Result<Vec<Tree<'a>>> {
    use rayon::prelude::*;
    jobs.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn build_trees<'a>(jobs: Vec<usize>, f: impl Fn(usize) -> Result<Tree<'a>>) -> Result<Vec<Tree<'a>>> {
    jobs.into_iter().map(f).collect()
}

/// Searches from `root` (arrivals already admitted) and returns a joint
/// decision for every pending user. `prior` is the default action at the
/// root period, typically the consensus profile.
pub fn run_mcts(model: &Model, root: &SystemState, prior: &HashMap<UserId, Decision>, seed: u64) -> Result<MctsOutcome> {
    let cfg = &model.mcts;
    cfg.validate()?;
    let root_users: Vec<_> = root.pending.iter().map(|p| p.user.clone()).collect();
    let lower_bound = lower_bound_value(root, &model.net, &root_users, &model.weights)?;
    let ctx = PeriodCtx::new(root.clone());
    if ctx.users.is_empty() {
        return Ok(MctsOutcome {
            decisions: ctx.satisfied.iter().map(|id| (*id, Decision::NoCharge)).collect(),
            value: 0.0,
            lower_bound,
            root_visits: 0,
            histogram: Vec::new(),
            rejection_rate: 0.0,
        });
    }

    let trees = cfg.trees.min(cfg.iterations).max(1);
    let share = |k: usize| cfg.iterations / trees + usize::from(k < cfg.iterations % trees);
    let built = build_trees((0..trees).collect(), |k| {
        let mut tree = Tree::new(model, cfg, seed, k, root.clone(), prior)?;
        for _ in 0..share(k) {
            tree.iterate()?;
        }
        Ok(tree)
    })?;

    let mut decisions: Vec<(UserId, Decision)> = ctx.satisfied.iter().map(|id| (*id, Decision::NoCharge)).collect();
    let mut at: Vec<Option<usize>> = vec![Some(0); built.len()];
    let mut assigned = vec![0u32; root.capacity.len()];
    let mut histogram: BTreeMap<(usize, u32), u64> = BTreeMap::new();
    for (idx, user) in ctx.users.iter().enumerate() {
        let mut visits: BTreeMap<Decision, u64> = BTreeMap::new();
        for (tree, node) in built.iter().zip(&at) {
            if let Some(NodeKind::Assign { edges, .. }) = node.map(|n| &tree.nodes[n].kind) {
                for e in edges {
                    *visits.entry(e.action).or_default() += u64::from(tree.nodes[e.child].visits);
                }
            }
        }
        for (d, v) in &visits {
            if let Decision::Charge { pool, duration } = d {
                *histogram.entry((pool.kind.index(), *duration)).or_default() += v;
            }
        }
        let best = visits
            .iter()
            .fold(None::<(Decision, u64)>, |acc, (d, v)| match acc {
                Some((_, bv)) if bv >= *v => acc,
                _ => Some((*d, *v)),
            })
            .map(|(d, _)| d);
        let d = match best {
            Some(d) => d,
            None => fallback(model, &ctx, idx, &assigned, prior)?,
        };
        for (tree, node) in built.iter().zip(at.iter_mut()) {
            *node = node.and_then(|n| match &tree.nodes[n].kind {
                NodeKind::Assign { edges, .. } => edges.iter().find(|e| e.action == d).map(|e| e.child),
                _ => None,
            });
        }
        if let Some(p) = d.pool() {
            assigned[p.index()] += 1;
        }
        decisions.push((user.id, d));
    }

    let root_visits: u32 = built.iter().map(|t| t.root().visits).sum();
    let value = if root_visits == 0 {
        0.0
    } else {
        built
            .iter()
            .map(|t| t.root().value * f64::from(t.root().visits))
            .sum::<f64>()
            / f64::from(root_visits)
    };
    let shots: usize = built.iter().map(|t| t.shots).sum();
    let rejected: f64 = built.iter().map(|t| t.rejected).sum();
    Ok(MctsOutcome {
        decisions,
        value,
        lower_bound,
        root_visits,
        histogram: histogram
            .into_iter()
            .map(|((k, duration), visits)| HistogramRow {
                kind: ChargerType::from_index(k),
                duration,
                visits,
            })
            .collect(),
        rejection_rate: if shots == 0 { 0.0 } else { rejected / shots as f64 },
    })
}

/// Action for a user no tree reached: the prior if it still fits, else the
/// greedy choice.
fn fallback(model: &Model, ctx: &PeriodCtx, idx: usize, assigned: &[u32], prior: &HashMap<UserId, Decision>) -> Result<Decision> {
    let user = &ctx.users[idx];
    let state = &ctx.state;
    if let Some(d) = prior.get(&user.id) {
        match d.pool() {
            Some(p) if state.capacity[p.index()] - state.occupancy[p.index()] > assigned[p.index()] => return Ok(*d),
            None if *d == Decision::Defer => return Ok(*d),
            _ => {}
        }
    }
    greedy_decision(user, state, &model.net, assigned, &model.weights)
}
