//! Optimality diagnostics for a converged consensus profile.
//!
//! The capacity multipliers come straight from the penalty:
//! `η = u·exp(ρ·g)`. The remaining multipliers (single-choice, duration
//! linkage, SOC threshold, SOC update) are not produced by the algorithm, so
//! they are fitted by non-negative least squares on the stationarity rows,
//! with only active constraints allowed a nonzero multiplier.

use crate::demand::{EvUser, UserId};
use crate::network::Network;
use crate::state::SystemState;
use crate::user_opt::{CostWeights, Decision};

use super::MultiplierState;

#[derive(Debug, Clone, PartialEq)]
pub struct UserKkt {
    pub user: UserId,
    /// Largest |multiplier × constraint| product.
    pub complementarity: f64,
    /// Norm of the stationarity rows after the multiplier fit.
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KktReport {
    pub users: Vec<UserKkt>,
    pub max_complementarity: f64,
    pub max_stationarity: f64,
}

const ACTIVE_TOL: f64 = 1e-9;

/// Minimizes `‖A·x + c‖²` over `x ≥ 0` by cyclic coordinate descent.
/// `cols[j]` is the j-th column of `A`.
fn nnls(cols: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; cols.len()];
    let mut r = c.to_vec();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            let norm: f64 = col.iter().map(|a| a * a).sum();
            if norm == 0.0 {
                continue;
            }
            let grad: f64 = col.iter().zip(&r).map(|(a, r)| a * r).sum();
            let next = (x[j] - grad / norm).max(0.0);
            let step = next - x[j];
            if step != 0.0 {
                for (ri, a) in r.iter_mut().zip(col) {
                    *ri += a * step;
                }
                x[j] = next;
                moved = moved.max(step.abs());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    x
}

pub fn check_kkt_residuals(
    state: &SystemState,
    net: &Network,
    users: &[EvUser],
    decisions: &[Decision],
    m: &MultiplierState,
    w: &CostWeights,
) -> KktReport {
    let pools = state.capacity.len();
    let mut load = vec![0u32; pools];
    for d in decisions {
        if let Some(p) = d.pool() {
            load[p.index()] += 1;
        }
    }
    let n_facilities = net.facilities.len();
    let mut report = KktReport::default();

    for (i, (user, d)) in users.iter().zip(decisions).enumerate() {
        let mut y = vec![0.0; pools];
        let mut n = vec![0.0; pools];
        if let Decision::Charge { pool, duration } = d {
            y[pool.index()] = 1.0;
            n[pool.index()] = f64::from(*duration);
        }
        let mut complementarity = 0.0f64;
        let mut eta_sum = 0.0;
        for p in 0..pools {
            // y + others is the pool's total load whichever user is asking.
            let g = f64::from(load[p]) - f64::from(state.capacity[p] - state.occupancy[p]);
            let u = m.u.get(i).and_then(|u| u.get(p)).copied().unwrap_or(0.0);
            let eta = u * (m.rho * g).min(w.exp_cap).exp();
            complementarity = complementarity.max((eta * g).abs());
            eta_sum += eta;
        }

        // Unknowns: ν1, ν2 per pool, ν3 (aggregate SOC), ν4 per facility.
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let choice_slack = y.iter().sum::<f64>() - 1.0;
        if choice_slack.abs() < ACTIVE_TOL {
            cols.push(vec![(pools) as f64, 0.0]);
        }
        for p in 0..pools {
            let slack = n[p] - w.big_m * y[p] - 1.0;
            if slack.abs() < ACTIVE_TOL {
                cols.push(vec![-w.big_m, 1.0]);
            }
        }
        let delivered: f64 = (0..pools)
            .map(|p| w.pi * crate::network::PoolId::from_index(p).kind.rate_multiplier() * n[p])
            .sum();
        let soc_slack = user.soc_threshold - user.soc - delivered;
        if soc_slack.abs() < ACTIVE_TOL {
            let coeff: f64 = (0..pools)
                .map(|p| w.pi * crate::network::PoolId::from_index(p).kind.rate_multiplier())
                .sum();
            cols.push(vec![coeff, 0.0]);
        }
        // The SOC update holds with equality in the transition.
        for _ in 0..n_facilities {
            cols.push(vec![0.0, -w.pi * 2.0]);
        }
        let c = [eta_sum, 0.0];
        let x = nnls(&cols, &c);
        let mut r = c.to_vec();
        for (col, xj) in cols.iter().zip(&x) {
            for (ri, a) in r.iter_mut().zip(col) {
                *ri += a * xj;
            }
        }
        let stationarity = r.iter().map(|v| v * v).sum::<f64>().sqrt();

        report.max_complementarity = report.max_complementarity.max(complementarity);
        report.max_stationarity = report.max_stationarity.max(stationarity);
        report.users.push(UserKkt {
            user: user.id,
            complementarity,
            stationarity,
        });
    }
    report
}
