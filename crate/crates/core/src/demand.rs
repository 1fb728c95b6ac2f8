//! Stochastic EV demand: Poisson arrivals per time-of-day band, uniform
//! initial state of charge, exponential parking durations and the onward-trip
//! SOC threshold.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, NodeId};
use crate::rng::SimRng;

pub type UserId = u64;
pub type Period = usize;

/// Look-ahead users get ids from this offset upward so they never collide
/// with realized users.
pub const PHANTOM_ID_BASE: UserId = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvUser {
    pub id: UserId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub arrival_period: Period,
    /// Current state of charge, kWh.
    pub soc: f64,
    pub battery_capacity: f64,
    /// Parking duration ψ in periods.
    pub parking_duration: u32,
    /// SOC required before leaving, kWh.
    pub soc_threshold: f64,
}

impl EvUser {
    pub fn needs_charge(&self) -> bool {
        self.soc < self.soc_threshold
    }

    pub fn validate(&self, horizon: Period) -> Result<()> {
        let field = format!("user {}", self.id);
        if !(self.soc >= 0.0 && self.soc <= self.battery_capacity) {
            return Err(Error::invalid(field, "soc must lie in [0, battery_capacity]"));
        }
        if self.soc_threshold > self.battery_capacity {
            return Err(Error::invalid(field, "soc_threshold exceeds battery_capacity"));
        }
        if self.parking_duration < 1 {
            return Err(Error::invalid(field, "parking_duration must be >= 1"));
        }
        if self.arrival_period >= horizon {
            return Err(Error::invalid(field, "arrival_period outside the horizon"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandBand {
    pub start: Period,
    /// Inclusive.
    pub end: Period,
    /// Mean arrivals per period at the medium demand level.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub bands: Vec<DemandBand>,
    /// Multiplier applied to every band mean (demand level, scale-down).
    pub scale: f64,
    pub soc_low_frac: f64,
    pub soc_high_frac: f64,
    pub battery_kwh: f64,
    /// Mean parking duration, periods.
    pub duration_mean: f64,
    /// Miles per kWh.
    pub efficiency: f64,
    /// SOC floor kept in reserve, kWh.
    pub reserve: f64,
}

impl DemandProfile {
    pub fn validate(&self, horizon: Period) -> Result<()> {
        let mut next = 0;
        for (i, b) in self.bands.iter().enumerate() {
            if b.start != next || b.end < b.start {
                return Err(Error::invalid(
                    format!("demand.bands[{i}]"),
                    format!("bands must partition [0, {}] in order", horizon.saturating_sub(1)),
                ));
            }
            if !(b.mean.is_finite() && b.mean >= 0.0) {
                return Err(Error::invalid(format!("demand.bands[{i}].mean"), "must be >= 0"));
            }
            next = b.end + 1;
        }
        if next != horizon {
            return Err(Error::invalid(
                "demand.bands",
                format!("bands cover [0, {}) but the horizon is {horizon}", next),
            ));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::invalid("demand.scale", "must be >= 0"));
        }
        if !(0.0 <= self.soc_low_frac && self.soc_low_frac <= self.soc_high_frac && self.soc_high_frac <= 1.0) {
            return Err(Error::invalid("demand.soc_init", "need 0 <= low <= high <= 1"));
        }
        for (name, v) in [
            ("demand.battery_kwh", self.battery_kwh),
            ("demand.duration_mean", self.duration_mean),
            ("demand.efficiency", self.efficiency),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if !(self.reserve.is_finite() && self.reserve >= 0.0) {
            return Err(Error::invalid("demand.reserve", "must be >= 0"));
        }
        Ok(())
    }

    /// Scaled mean arrivals for period `t`.
    pub fn arrival_rate(&self, t: Period) -> f64 {
        self.bands
            .iter()
            .find(|b| b.start <= t && t <= b.end)
            .map_or(0.0, |b| b.mean * self.scale)
    }
}

/// SOC needed to finish the onward trip: the longest lot → destination
/// distance over the efficiency, plus the reserve, clamped to the battery.
pub fn required_soc(net: &Network, profile: &DemandProfile, destination: NodeId, battery_capacity: f64) -> f64 {
    required_soc_for_distance(net.max_onward_miles(destination), profile.efficiency, profile.reserve, battery_capacity)
}

pub fn required_soc_for_distance(miles: f64, efficiency: f64, reserve: f64, battery_capacity: f64) -> f64 {
    (miles / efficiency + reserve).min(battery_capacity)
}

/// Draws the users arriving in period `t`. Ids are taken from `next_id`,
/// which is advanced past every id handed out.
pub fn generate_arrivals(
    profile: &DemandProfile,
    net: &Network,
    t: Period,
    rng: &mut SimRng,
    next_id: &mut UserId,
) -> Vec<EvUser> {
    let rate = profile.arrival_rate(t);
    let count = if rate > 0.0 {
        Poisson::new(rate).map_or(0, |p| p.sample(rng) as usize)
    } else {
        0
    };
    let origins: Vec<NodeId> = net.origins.iter().copied().collect();
    let destinations: Vec<NodeId> = net.destinations.iter().copied().collect();
    if origins.is_empty() || destinations.is_empty() {
        return Vec::new();
    }
    let duration = Exp::new(1.0 / profile.duration_mean).expect("duration_mean validated > 0");
    let cap = profile.battery_kwh;

    (0..count)
        .map(|_| {
            let origin = origins[rng.random_range(0..origins.len())];
            let destination = destinations[rng.random_range(0..destinations.len())];
            let soc = rng.random_range(profile.soc_low_frac * cap..=profile.soc_high_frac * cap);
            let psi = duration.sample(rng).round().max(1.0) as u32;
            let id = *next_id;
            *next_id += 1;
            EvUser {
                id,
                origin,
                destination,
                arrival_period: t,
                soc,
                battery_capacity: cap,
                parking_duration: psi,
                soc_threshold: required_soc(net, profile, destination, cap),
            }
        })
        .collect()
}

/// Where new users come from: the stochastic profile or a fixed script.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalModel {
    Poisson(DemandProfile),
    Scripted(Vec<EvUser>),
}

impl ArrivalModel {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, ArrivalModel::Scripted(_))
    }

    /// Users arriving in period `t`. Scripted users keep their own ids.
    pub fn sample(&self, net: &Network, t: Period, rng: &mut SimRng, next_id: &mut UserId) -> Vec<EvUser> {
        match self {
            ArrivalModel::Poisson(profile) => generate_arrivals(profile, net, t, rng, next_id),
            ArrivalModel::Scripted(users) => users.iter().filter(|u| u.arrival_period == t).cloned().collect(),
        }
    }
}

/// Sequential arrival generator for one run; the stream is consumed period
/// by period so the realized demand depends only on the seed.
pub struct ArrivalStream<'a> {
    model: &'a ArrivalModel,
    rng: SimRng,
    next_id: UserId,
}

impl<'a> ArrivalStream<'a> {
    pub fn new(model: &'a ArrivalModel, rng: SimRng) -> Self {
        Self { model, rng, next_id: 0 }
    }

    pub fn next_period(&mut self, net: &Network, t: Period) -> Vec<EvUser> {
        self.model.sample(net, t, &mut self.rng, &mut self.next_id)
    }
}
