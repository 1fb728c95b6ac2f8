//! Shooting heuristic: sampled charging-rate paths, SOC propagation and the
//! feasibility cone.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ChargerType;
use crate::rng::SimRng;

/// Stochastic delivered-energy model per charger type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateModel {
    /// Mean kWh per period, slow then fast.
    pub means: [f64; 2],
    /// Standard deviation as a fraction of the mean.
    pub sd_frac: f64,
    /// Samples are rounded to multiples of this many kWh.
    pub quantum: f64,
}

impl Default for RateModel {
    fn default() -> Self {
        Self {
            means: [6.2, 12.5],
            sd_frac: 0.1,
            quantum: 0.1,
        }
    }
}

impl RateModel {
    pub fn deterministic() -> Self {
        Self {
            sd_frac: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("rates.means", "must be finite and non-negative"));
        }
        if !self.sd_frac.is_finite() || self.sd_frac < 0.0 {
            return Err(Error::invalid("rates.sd_frac", "must be finite and non-negative"));
        }
        if !self.quantum.is_finite() || self.quantum <= 0.0 {
            return Err(Error::invalid("rates.quantum", "must be positive"));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.sd_frac == 0.0
    }

    pub fn mean(&self, kind: ChargerType) -> f64 {
        self.means[kind.index()]
    }

    fn quantize(&self, x: f64) -> f64 {
        let steps = (1.0 / self.quantum).round();
        if steps >= 1.0 {
            (x * steps).round() / steps
        } else {
            (x / self.quantum).round() * self.quantum
        }
    }

    /// One period's delivered energy: truncated at zero, then quantized.
    pub fn sample(&self, kind: ChargerType, rng: &mut SimRng) -> f64 {
        let mean = self.mean(kind);
        let sd = self.sd_frac * mean;
        let x = if sd == 0.0 {
            mean
        } else {
            Normal::new(mean, sd).expect("finite non-negative sd").sample(rng)
        };
        self.quantize(x.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePath {
    pub gamma: usize,
    pub samples: Vec<f64>,
}

pub fn sample_rate_path(model: &RateModel, kind: ChargerType, n: u32, gamma: usize, rng: &mut SimRng) -> RatePath {
    RatePath {
        gamma,
        samples: (0..n).map(|_| model.sample(kind, rng)).collect(),
    }
}

/// SOC envelope reachable from `base`: between `lower_slope` and
/// `upper_slope` kWh per period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocCone {
    pub base: f64,
    pub lower_slope: f64,
    pub upper_slope: f64,
    pub horizon: u32,
}

impl SocCone {
    pub fn new(base: f64, pi: f64, horizon: u32) -> Self {
        Self {
            base,
            lower_slope: pi,
            upper_slope: 2.0 * pi,
            horizon,
        }
    }

    pub fn bounds(&self, tau: u32) -> (f64, f64) {
        let tau = f64::from(tau);
        (self.base + self.lower_slope * tau, self.base + self.upper_slope * tau)
    }

    pub fn contains(&self, tau: u32, soc: f64) -> bool {
        let (lo, hi) = self.bounds(tau);
        tau <= self.horizon && soc >= lo - 1e-9 && soc <= hi + 1e-9
    }
}

/// Whether the threshold is reachable over `psi` periods at an average
/// rate between `pi` and `2·pi`, or needs no charging at all.
pub fn cone_feasible(b: f64, psi: u32, q: f64, pi: f64) -> bool {
    if q <= b {
        return true;
    }
    let per_period = (q - b) / f64::from(psi.max(1));
    per_period >= pi - 1e-9 && per_period <= 2.0 * pi + 1e-9
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootOutcome {
    /// Per-period mean SOC over surviving shots; `None` if every shot missed
    /// the threshold.
    pub trajectory: Option<Vec<f64>>,
    pub survival: f64,
    pub shots: usize,
}

impl ShootOutcome {
    pub fn is_feasible(&self) -> bool {
        self.trajectory.is_some()
    }
}

/// Fires `xi` sampled charging paths of `n` periods from `b`, keeps those
/// ending at or above `q` and averages them.
#[allow(clippy::too_many_arguments)]
pub fn shoot(
    b: f64,
    n: u32,
    q: f64,
    kind: ChargerType,
    xi: usize,
    battery: f64,
    model: &RateModel,
    rng: &mut SimRng,
) -> ShootOutcome {
    let (sum, survivors) = fire(b, n, q, kind, xi, battery, model, rng, |_| {});
    finish(sum, survivors, xi)
}

/// As [`shoot`], also handing every shot's SOC path to `each` (for plotting).
#[allow(clippy::too_many_arguments)]
pub fn shoot_traced(
    b: f64,
    n: u32,
    q: f64,
    kind: ChargerType,
    xi: usize,
    battery: f64,
    model: &RateModel,
    rng: &mut SimRng,
    each: impl FnMut(&[f64]),
) -> ShootOutcome {
    let (sum, survivors) = fire(b, n, q, kind, xi, battery, model, rng, each);
    finish(sum, survivors, xi)
}

#[allow(clippy::too_many_arguments)]
fn fire(
    b: f64,
    n: u32,
    q: f64,
    kind: ChargerType,
    xi: usize,
    battery: f64,
    model: &RateModel,
    rng: &mut SimRng,
    mut each: impl FnMut(&[f64]),
) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; n as usize];
    let mut path = vec![0.0; n as usize];
    let mut survivors = 0;
    for gamma in 0..xi {
        let rates = sample_rate_path(model, kind, n, gamma, rng);
        let mut soc = b;
        for (slot, r) in path.iter_mut().zip(&rates.samples) {
            soc = (soc + r).min(battery);
            *slot = soc;
        }
        each(&path);
        if soc >= q {
            survivors += 1;
            for (s, p) in sum.iter_mut().zip(&path) {
                *s += p;
            }
        }
    }
    (sum, survivors)
}

fn finish(sum: Vec<f64>, survivors: usize, xi: usize) -> ShootOutcome {
    let survival = if xi == 0 { 0.0 } else { survivors as f64 / xi as f64 };
    let trajectory = (survivors > 0).then(|| sum.into_iter().map(|s| s / survivors as f64).collect());
    ShootOutcome {
        trajectory,
        survival,
        shots: xi,
    }
}

/// Expected surcharge for the shots that miss the threshold.
pub fn failure_surcharge(outcome: &ShootOutcome, alpha_over: f64, psi: u32) -> f64 {
    (1.0 - outcome.survival) * alpha_over * f64::from(psi)
}
