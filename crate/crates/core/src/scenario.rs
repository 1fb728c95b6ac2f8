//! TOML scenario documents: network (explicit or generated), demand,
//! weights, solver settings, horizon and seed.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{ArrivalModel, DemandBand, DemandProfile, EvUser, Period};
use crate::error::{Error, Result};
use crate::gne::GneConfig;
use crate::mcts::MctsConfig;
use crate::network::{load_network, DriveFromDoc, DriveToDoc, FacilityDoc, NetworkDoc, NodeId, OnwardDoc, PoolDoc, PriceDoc};
use crate::rng::stream;
use crate::sh::RateModel;
use crate::sim::Model;
use crate::user_opt::CostWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandLevel {
    Low,
    #[default]
    Medium,
    High,
}

impl DemandLevel {
    pub fn factor(self) -> f64 {
        match self {
            DemandLevel::Low => 0.5,
            DemandLevel::Medium => 1.0,
            DemandLevel::High => 2.0,
        }
    }
}

impl std::str::FromStr for DemandLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DemandLevel::Low),
            "medium" => Ok(DemandLevel::Medium),
            "high" => Ok(DemandLevel::High),
            _ => Err(Error::invalid("demand_level", format!("expected low, medium or high, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandDoc {
    pub bands: Vec<DemandBand>,
    /// Desk-scale multiplier on top of the demand level.
    #[serde(default = "one")]
    pub scale: f64,
    /// Initial SOC as fractions of the battery, uniform.
    #[serde(default = "soc_init")]
    pub soc_init: [f64; 2],
    #[serde(default = "battery")]
    pub battery_kwh: f64,
    #[serde(default = "duration")]
    pub duration_mean: f64,
    #[serde(default = "efficiency")]
    pub efficiency: f64,
    #[serde(default = "one")]
    pub reserve: f64,
}

fn one() -> f64 {
    1.0
}
fn soc_init() -> [f64; 2] {
    [0.2, 0.6]
}
fn battery() -> f64 {
    50.0
}
fn duration() -> f64 {
    4.0
}
fn efficiency() -> f64 {
    2.91
}

impl DemandDoc {
    pub fn profile(&self, level: DemandLevel) -> DemandProfile {
        DemandProfile {
            bands: self.bands.clone(),
            scale: self.scale * level.factor(),
            soc_low_frac: self.soc_init[0],
            soc_high_frac: self.soc_init[1],
            battery_kwh: self.battery_kwh,
            duration_mean: self.duration_mean,
            efficiency: self.efficiency,
            reserve: self.reserve,
        }
    }
}

/// Generated network: origins, lots and destinations on separate node
/// ranges with travel times drawn once from `layout_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDoc {
    pub lots: usize,
    pub slow: u32,
    pub fast: u32,
    pub origins: usize,
    pub destinations: usize,
    #[serde(default)]
    pub layout_seed: u64,
    /// Minutes, uniform in [lo, hi].
    pub drive_to_minutes: [f64; 2],
    pub drive_from_minutes: [f64; 2],
    pub onward_miles: [f64; 2],
    pub search_time: f64,
    #[serde(default = "one")]
    pub awareness: f64,
    /// Price per period, slow then fast.
    pub price: [f64; 2],
}

impl SyntheticDoc {
    pub fn network(&self) -> Result<NetworkDoc> {
        for (name, [lo, hi]) in [
            ("synthetic.drive_to_minutes", self.drive_to_minutes),
            ("synthetic.drive_from_minutes", self.drive_from_minutes),
            ("synthetic.onward_miles", self.onward_miles),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::invalid(name, "need 0 <= lo <= hi"));
            }
        }
        if self.origins == 0 || self.destinations == 0 {
            return Err(Error::invalid("synthetic", "need at least one origin and one destination"));
        }
        let mut rng = stream(self.layout_seed, "layout");
        let id = |k: usize| k as NodeId + 1;
        let origins: Vec<NodeId> = (0..self.origins).map(id).collect();
        let lots: Vec<NodeId> = (self.origins..self.origins + self.lots).map(id).collect();
        let end = self.origins + self.lots + self.destinations;
        let destinations: Vec<NodeId> = (self.origins + self.lots..end).map(id).collect();
        let mut draw = |[lo, hi]: [f64; 2]| -> f64 {
            let v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            (v * 10.0).round() / 10.0
        };
        let pool = |capacity, price| PoolDoc {
            capacity,
            search_time: self.search_time,
            awareness: self.awareness,
            price: PriceDoc::Flat(price),
        };
        let mut doc = NetworkDoc {
            nodes: (0..end).map(id).collect(),
            origins: origins.clone(),
            destinations: destinations.clone(),
            facilities: lots
                .iter()
                .map(|&lot| FacilityDoc {
                    lot,
                    slow: pool(self.slow, self.price[0]),
                    fast: pool(self.fast, self.price[1]),
                })
                .collect(),
            ..Default::default()
        };
        for &lot in &lots {
            for &origin in &origins {
                doc.drive_to_lot.push(DriveToDoc { origin, lot, cost: draw(self.drive_to_minutes) });
            }
            for &destination in &destinations {
                doc.drive_from_lot.push(DriveFromDoc { lot, destination, cost: draw(self.drive_from_minutes) });
                doc.onward_miles.push(OnwardDoc { lot, destination, miles: draw(self.onward_miles) });
            }
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: Period,
    #[serde(default = "period_minutes")]
    pub period_minutes: f64,
    #[serde(default)]
    pub demand_level: DemandLevel,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub rates: RateModel,
    #[serde(default)]
    pub gne: GneConfig,
    #[serde(default)]
    pub mcts: MctsConfig,
    #[serde(default)]
    pub network: Option<NetworkDoc>,
    #[serde(default)]
    pub synthetic: Option<SyntheticDoc>,
    #[serde(default)]
    pub demand: Option<DemandDoc>,
    /// Fixed arrivals; replaces `demand` when present.
    #[serde(default)]
    pub users: Vec<EvUser>,
}

fn period_minutes() -> f64 {
    30.0
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario documents always serialize")
    }

    pub fn network_doc(&self) -> Result<NetworkDoc> {
        match (&self.network, &self.synthetic) {
            (Some(n), None) => Ok(n.clone()),
            (None, Some(s)) => s.network(),
            (Some(_), Some(_)) => Err(Error::invalid("network", "give either network or synthetic, not both")),
            (None, None) => Err(Error::invalid("network", "missing network or synthetic section")),
        }
    }

    /// Validates every section and assembles the run model.
    pub fn build(&self) -> Result<Model> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if !(self.period_minutes.is_finite() && self.period_minutes > 0.0) {
            return Err(Error::invalid("period_minutes", "must be > 0"));
        }
        self.weights.validate(self.horizon)?;
        self.rates.validate()?;
        self.gne.validate()?;
        self.mcts.validate()?;
        let net = load_network(&self.network_doc()?)?;
        let arrivals = if !self.users.is_empty() {
            let mut ids = std::collections::BTreeSet::new();
            for (i, u) in self.users.iter().enumerate() {
                u.validate(self.horizon).map_err(|e| prefix(&format!("users[{i}]"), e))?;
                if !ids.insert(u.id) {
                    return Err(Error::invalid(format!("users[{i}].id"), "duplicate user id"));
                }
                for (field, node, set) in [("origin", u.origin, &net.origins), ("destination", u.destination, &net.destinations)] {
                    if !set.contains(&node) {
                        return Err(Error::invalid(format!("users[{i}].{field}"), format!("unknown node {node}")));
                    }
                }
            }
            ArrivalModel::Scripted(self.users.clone())
        } else {
            let doc = self.demand.as_ref().ok_or_else(|| Error::invalid("demand", "missing demand section or users"))?;
            let profile = doc.profile(self.demand_level);
            profile.validate(self.horizon)?;
            ArrivalModel::Poisson(profile)
        };
        Ok(Model {
            net,
            horizon: self.horizon,
            weights: self.weights,
            rates: self.rates,
            arrivals,
            gne: self.gne,
            mcts: self.mcts,
        })
    }
}

fn prefix(path: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, reason } => Error::Validation {
            field: format!("{path}: {field}"),
            reason,
        },
        other => other,
    }
}
