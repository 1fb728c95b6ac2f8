//! Static problem geometry: parking lots with slow/fast charger pools and the
//! origin → lot → destination travel-cost tables.
//!
//! Travel costs are stored as the raw table values (minutes in the bundled
//! presets); the value-of-time coefficient is applied by the cost model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargerType {
    Slow,
    Fast,
}

impl ChargerType {
    pub const ALL: [ChargerType; 2] = [ChargerType::Slow, ChargerType::Fast];

    /// `k` in the model: 0 for slow, 1 for fast.
    pub fn index(self) -> usize {
        match self {
            ChargerType::Slow => 0,
            ChargerType::Fast => 1,
        }
    }

    pub fn from_index(k: usize) -> Self {
        if k == 0 {
            ChargerType::Slow
        } else {
            ChargerType::Fast
        }
    }

    /// The `(k + 1)` multiplier on the nominal rate.
    pub fn rate_multiplier(self) -> f64 {
        (self.index() + 1) as f64
    }

    pub fn label(self) -> &'static str {
        match self {
            ChargerType::Slow => "slow",
            ChargerType::Fast => "fast",
        }
    }
}

/// A (facility index, charger type) pair. Facilities are stored sorted by lot
/// id, so ordering pools by `index()` orders them by (lot, type).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoolId {
    pub facility: usize,
    pub kind: ChargerType,
}

impl PoolId {
    pub fn new(facility: usize, kind: ChargerType) -> Self {
        Self { facility, kind }
    }

    pub fn index(self) -> usize {
        self.facility * 2 + self.kind.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(i / 2, ChargerType::from_index(i % 2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargerPool {
    pub capacity: u32,
    /// Mean time to find a free spot, in periods.
    pub search_time: f64,
    /// Reaction to shared occupancy information, in `[0, 1]`.
    pub awareness: f64,
    /// Price per period; the last entry repeats past the end of the schedule.
    pub prices: Vec<f64>,
}

impl ChargerPool {
    pub fn price(&self, t: usize) -> f64 {
        match self.prices.len() {
            0 => 0.0,
            n => self.prices[t.min(n - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facility {
    pub lot: NodeId,
    pub pools: [ChargerPool; 2],
}

impl Facility {
    pub fn pool(&self, kind: ChargerType) -> &ChargerPool {
        &self.pools[kind.index()]
    }

    pub fn capacity(&self, kind: ChargerType) -> u32 {
        self.pool(kind).capacity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: BTreeSet<NodeId>,
    pub origins: BTreeSet<NodeId>,
    pub destinations: BTreeSet<NodeId>,
    pub facilities: Vec<Facility>,
    drive_to_lot: BTreeMap<(NodeId, NodeId), f64>,
    drive_from_lot: BTreeMap<(NodeId, NodeId), f64>,
    onward_miles: BTreeMap<(NodeId, NodeId), f64>,
}

impl Network {
    pub fn pool_count(&self) -> usize {
        self.facilities.len() * 2
    }

    pub fn pools(&self) -> impl Iterator<Item = PoolId> + '_ {
        (0..self.pool_count()).map(PoolId::from_index)
    }

    pub fn pool(&self, id: PoolId) -> &ChargerPool {
        self.facilities[id.facility].pool(id.kind)
    }

    pub fn capacity(&self, id: PoolId) -> u32 {
        self.pool(id).capacity
    }

    pub fn capacities(&self) -> Vec<u32> {
        self.pools().map(|p| self.capacity(p)).collect()
    }

    pub fn facility_index(&self, lot: NodeId) -> Option<usize> {
        self.facilities.iter().position(|f| f.lot == lot)
    }

    pub fn lot_of(&self, id: PoolId) -> NodeId {
        self.facilities[id.facility].lot
    }

    pub fn drive_to(&self, origin: NodeId, lot: NodeId) -> Result<f64> {
        self.drive_to_lot
            .get(&(origin, lot))
            .copied()
            .ok_or(Error::MissingCost {
                table: "drive_to_lot",
                from: origin,
                to: lot,
            })
    }

    pub fn drive_from(&self, lot: NodeId, destination: NodeId) -> Result<f64> {
        self.drive_from_lot
            .get(&(lot, destination))
            .copied()
            .ok_or(Error::MissingCost {
                table: "drive_from_lot",
                from: lot,
                to: destination,
            })
    }

    /// Longest onward distance (miles) to `destination` from any lot; zero
    /// when the table has no entry for it.
    pub fn max_onward_miles(&self, destination: NodeId) -> f64 {
        self.onward_miles
            .iter()
            .filter(|((_, d), _)| *d == destination)
            .map(|(_, m)| *m)
            .fold(0.0, f64::max)
    }

    /// `v_oj + μ_jδ` per facility, in facility order.
    pub fn trip_costs(&self, origin: NodeId, destination: NodeId) -> Result<Vec<f64>> {
        self.facilities
            .iter()
            .map(|f| Ok(self.drive_to(origin, f.lot)? + self.drive_from(f.lot, destination)?))
            .collect()
    }
}

/// Driving cost from `origin` through lot `lot` to `destination`.
pub fn trip_cost(net: &Network, origin: NodeId, lot: NodeId, destination: NodeId) -> Result<f64> {
    if !net.origins.contains(&origin) {
        return Err(Error::Lookup {
            kind: "origin",
            key: origin.to_string(),
        });
    }
    if !net.destinations.contains(&destination) {
        return Err(Error::Lookup {
            kind: "destination",
            key: destination.to_string(),
        });
    }
    if net.facility_index(lot).is_none() {
        return Err(Error::Lookup {
            kind: "facility lot",
            key: lot.to_string(),
        });
    }
    Ok(net.drive_to(origin, lot)? + net.drive_from(lot, destination)?)
}

// ---------------------------------------------------------------------------
// Scenario document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriceDoc {
    Flat(f64),
    Schedule(Vec<f64>),
}

impl PriceDoc {
    fn into_vec(self) -> Vec<f64> {
        match self {
            PriceDoc::Flat(p) => vec![p],
            PriceDoc::Schedule(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDoc {
    pub capacity: u32,
    pub search_time: f64,
    #[serde(default = "one")]
    pub awareness: f64,
    pub price: PriceDoc,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilityDoc {
    pub lot: NodeId,
    pub slow: PoolDoc,
    pub fast: PoolDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveToDoc {
    pub origin: NodeId,
    pub lot: NodeId,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveFromDoc {
    pub lot: NodeId,
    pub destination: NodeId,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnwardDoc {
    pub lot: NodeId,
    pub destination: NodeId,
    pub miles: f64,
}

/// The `network` section of a scenario document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub nodes: Vec<NodeId>,
    pub origins: Vec<NodeId>,
    pub destinations: Vec<NodeId>,
    #[serde(default)]
    pub facilities: Vec<FacilityDoc>,
    #[serde(default)]
    pub drive_to_lot: Vec<DriveToDoc>,
    #[serde(default)]
    pub drive_from_lot: Vec<DriveFromDoc>,
    #[serde(default)]
    pub onward_miles: Vec<OnwardDoc>,
}

fn check_cost(field: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(field, format!("cost must be finite and >= 0, got {v}")))
    }
}

fn load_pool(path: &str, doc: &PoolDoc) -> Result<ChargerPool> {
    if !(doc.search_time.is_finite() && doc.search_time > 0.0) {
        return Err(Error::invalid(format!("{path}.search_time"), "must be > 0"));
    }
    if !(0.0..=1.0).contains(&doc.awareness) {
        return Err(Error::invalid(format!("{path}.awareness"), "must lie in [0, 1]"));
    }
    let prices = doc.price.clone().into_vec();
    if prices.is_empty() {
        return Err(Error::invalid(format!("{path}.price"), "empty price schedule"));
    }
    if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::invalid(format!("{path}.price"), format!("price {p} is negative or not finite")));
    }
    Ok(ChargerPool {
        capacity: doc.capacity,
        search_time: doc.search_time,
        awareness: doc.awareness,
        prices,
    })
}

/// Validates a network section and builds the immutable [`Network`].
pub fn load_network(doc: &NetworkDoc) -> Result<Network> {
    let nodes: BTreeSet<NodeId> = doc.nodes.iter().copied().collect();
    for (name, set) in [("network.origins", &doc.origins), ("network.destinations", &doc.destinations)] {
        if let Some(n) = set.iter().find(|n| !nodes.contains(n)) {
            return Err(Error::invalid(name, format!("node {n} is not declared in network.nodes")));
        }
    }

    let mut facilities = Vec::with_capacity(doc.facilities.len());
    let mut seen = BTreeSet::new();
    for (i, f) in doc.facilities.iter().enumerate() {
        if !nodes.contains(&f.lot) {
            return Err(Error::invalid(
                format!("network.facilities[{i}].lot"),
                format!("node {} is not declared in network.nodes", f.lot),
            ));
        }
        if !seen.insert(f.lot) {
            return Err(Error::DuplicateLot(f.lot));
        }
        facilities.push(Facility {
            lot: f.lot,
            pools: [
                load_pool(&format!("network.facilities[{i}].slow"), &f.slow)?,
                load_pool(&format!("network.facilities[{i}].fast"), &f.fast)?,
            ],
        });
    }
    facilities.sort_by_key(|f| f.lot);

    let mut drive_to_lot = BTreeMap::new();
    for (i, e) in doc.drive_to_lot.iter().enumerate() {
        let c = check_cost(&format!("network.drive_to_lot[{i}].cost"), e.cost)?;
        drive_to_lot.insert((e.origin, e.lot), c);
    }
    let mut drive_from_lot = BTreeMap::new();
    for (i, e) in doc.drive_from_lot.iter().enumerate() {
        let c = check_cost(&format!("network.drive_from_lot[{i}].cost"), e.cost)?;
        drive_from_lot.insert((e.lot, e.destination), c);
    }
    let mut onward_miles = BTreeMap::new();
    for (i, e) in doc.onward_miles.iter().enumerate() {
        let m = check_cost(&format!("network.onward_miles[{i}].miles"), e.miles)?;
        onward_miles.insert((e.lot, e.destination), m);
    }

    let net = Network {
        nodes,
        origins: doc.origins.iter().copied().collect(),
        destinations: doc.destinations.iter().copied().collect(),
        facilities,
        drive_to_lot,
        drive_from_lot,
        onward_miles,
    };

    for f in &net.facilities {
        for &o in &net.origins {
            net.drive_to(o, f.lot)?;
        }
        for &d in &net.destinations {
            net.drive_from(f.lot, d)?;
        }
    }
    Ok(net)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn pool(capacity: u32) -> PoolDoc {
        PoolDoc {
            capacity,
            search_time: 1.0,
            awareness: 1.0,
            price: PriceDoc::Flat(1.0),
        }
    }

    /// The bundled 18-node layout with stations at 6, 7, 15 and 16.
    pub(crate) fn eighteen_node_doc() -> NetworkDoc {
        let lots = [6, 7, 15, 16];
        NetworkDoc {
            nodes: (1..=18).collect(),
            origins: vec![1],
            destinations: vec![8, 11],
            facilities: lots
                .iter()
                .map(|&lot| FacilityDoc {
                    lot,
                    slow: pool(3),
                    fast: pool(2),
                })
                .collect(),
            drive_to_lot: lots
                .iter()
                .map(|&lot| DriveToDoc {
                    origin: 1,
                    lot,
                    cost: lot as f64,
                })
                .collect(),
            drive_from_lot: lots
                .iter()
                .flat_map(|&lot| {
                    [8, 11].map(|destination| DriveFromDoc {
                        lot,
                        destination,
                        cost: 1.0,
                    })
                })
                .collect(),
            onward_miles: vec![],
        }
    }

    #[test]
    fn loads_eighteen_node_network() {
        let net = load_network(&eighteen_node_doc()).unwrap();
        assert_eq!(net.facilities.len(), 4);
        assert_eq!(net.facilities.iter().map(|f| f.lot).collect::<Vec<_>>(), vec![6, 7, 15, 16]);
        assert_eq!(net.facilities.iter().map(|f| f.capacity(ChargerType::Slow) + f.capacity(ChargerType::Fast)).sum::<u32>(), 20);
    }

    #[test]
    fn zero_facilities_is_valid() {
        let mut doc = eighteen_node_doc();
        doc.facilities.clear();
        let net = load_network(&doc).unwrap();
        assert!(net.facilities.is_empty());
        assert_eq!(net.pool_count(), 0);
    }

    #[test]
    fn facility_at_unknown_node_is_rejected() {
        let mut doc = eighteen_node_doc();
        doc.facilities[0].lot = 99;
        assert!(matches!(load_network(&doc), Err(Error::Validation { .. })));
    }

    #[test]
    fn duplicate_lot_is_rejected() {
        let mut doc = eighteen_node_doc();
        doc.facilities[1].lot = 6;
        assert_eq!(load_network(&doc), Err(Error::DuplicateLot(6)));
    }

    #[test]
    fn missing_cost_names_the_pair() {
        let mut doc = eighteen_node_doc();
        doc.drive_from_lot.retain(|e| !(e.lot == 15 && e.destination == 11));
        assert_eq!(
            load_network(&doc),
            Err(Error::MissingCost {
                table: "drive_from_lot",
                from: 15,
                to: 11
            })
        );
    }

    #[test]
    fn bad_pool_parameters_are_rejected() {
        let mut doc = eighteen_node_doc();
        doc.facilities[0].fast.awareness = 1.5;
        assert!(load_network(&doc).is_err());
        let mut doc = eighteen_node_doc();
        doc.facilities[0].slow.search_time = 0.0;
        assert!(load_network(&doc).is_err());
        let mut doc = eighteen_node_doc();
        doc.facilities[0].slow.price = PriceDoc::Schedule(vec![1.0, -2.0]);
        assert!(load_network(&doc).is_err());
    }

    #[test]
    fn trip_cost_adds_both_legs() {
        let mut doc = eighteen_node_doc();
        doc.drive_to_lot[0].cost = 3.0;
        doc.drive_from_lot[0].cost = 1.5;
        let net = load_network(&doc).unwrap();
        assert_eq!(trip_cost(&net, 1, 6, 8).unwrap(), 4.5);

        doc.drive_to_lot[0].cost = 0.0;
        doc.drive_from_lot[0].cost = 0.0;
        let net = load_network(&doc).unwrap();
        assert_eq!(trip_cost(&net, 1, 6, 8).unwrap(), 0.0);
    }

    #[test]
    fn trip_cost_back_to_origin() {
        // A destination equal to the origin models the drive home.
        let mut doc = eighteen_node_doc();
        doc.destinations.push(1);
        for &lot in &[6, 7, 15, 16] {
            doc.drive_from_lot.push(DriveFromDoc {
                lot,
                destination: 1,
                cost: 2.0,
            });
        }
        let net = load_network(&doc).unwrap();
        assert_eq!(trip_cost(&net, 1, 7, 1).unwrap(), 7.0 + 2.0);
    }

    #[test]
    fn trip_cost_unknown_keys() {
        let net = load_network(&eighteen_node_doc()).unwrap();
        assert!(matches!(trip_cost(&net, 2, 6, 8), Err(Error::Lookup { .. })));
        assert!(matches!(trip_cost(&net, 1, 5, 8), Err(Error::Lookup { .. })));
        assert!(matches!(trip_cost(&net, 1, 6, 9), Err(Error::Lookup { .. })));
    }

    #[test]
    fn load_is_idempotent() {
        let doc = eighteen_node_doc();
        assert_eq!(load_network(&doc).unwrap(), load_network(&doc).unwrap());
    }

    #[test]
    fn price_schedule_repeats_last_entry() {
        let p = ChargerPool {
            capacity: 1,
            search_time: 1.0,
            awareness: 1.0,
            prices: vec![1.0, 2.0],
        };
        assert_eq!(p.price(0), 1.0);
        assert_eq!(p.price(1), 2.0);
        assert_eq!(p.price(9), 2.0);
    }
}
