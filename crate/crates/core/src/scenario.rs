//! Scenario files: topology, user clusters, pricing and horizon as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{bid_price, BidPrice, Cluster, ClusterId, LinkId, Market, MarketError, Patience, Topology, User, UserId};
use crate::micc::BidSet;
use crate::multilink::DistributionFormula;
use crate::num::StepPolicy;
use crate::selfreg::Strategy;
use crate::utility::UtilityParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{origin}: {source}")]
    Parse { origin: String, source: serde_json::Error },
    #[error("invalid scenario at `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Market(#[from] MarketError),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { key: key.into(), message: message.into() }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[default]
    Micc,
    Fixed,
    /// Fixed at the highest candidate price.
    Highest,
    Progressive,
    Subgradient,
}

/// Where per-link candidate prices come from.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidSource {
    /// The price set (or the users' bids) applies to every priced link.
    #[default]
    Declared,
    /// Each link sees the users' bids split by route load.
    Distributed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub id: String,
    pub links: Vec<String>,
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub label: String,
    pub route: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    pub x_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default = "one")]
    pub tolerance: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub sigma_w: f64,
    #[serde(default)]
    pub discharge_threshold: f64,
    #[serde(default)]
    pub budget_slack: f64,
    #[serde(default)]
    pub qos_tolerance: f64,
    #[serde(default = "one_u32")]
    pub count: u32,
}

fn default_dwell() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSpec {
    #[serde(default)]
    pub strategy: StrategyKind,
    #[serde(default)]
    pub lambda_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_set: Option<Vec<f64>>,
    /// Priced links; all links when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<String>>,
    /// Price for the fixed strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default = "default_dwell")]
    pub dwell: u32,
    #[serde(default)]
    pub bid_source: BidSource,
    #[serde(default)]
    pub distribution: DistributionFormula,
    #[serde(default)]
    pub step: StepPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub ticks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSpec {
    pub tick: u64,
    pub cluster: String,
    pub count: u32,
}

/// On-disk layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub links: Vec<LinkSpec>,
    pub routes: Vec<RouteSpec>,
    pub clusters: Vec<ClusterSpec>,
    pub pricing: PricingSpec,
    pub horizon: HorizonSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arrivals: Vec<ArrivalSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub strategy: StrategyKind,
    pub lambda_min: f64,
    pub price_set: Option<Vec<f64>>,
    pub priced_links: Vec<LinkId>,
    pub price: Option<f64>,
    pub dwell: u32,
    pub bid_source: BidSource,
    pub distribution: DistributionFormula,
    pub step: StepPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub tick: u64,
    pub cluster: ClusterId,
    pub count: u32,
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub clusters: Vec<Cluster>,
    /// Initial member count per cluster.
    pub sizes: Vec<u32>,
    pub utility: UtilityParams,
    pub pricing: Pricing,
    pub horizon: u64,
    pub arrivals: Vec<Arrival>,
}

const TABLE1: &str = include_str!("../scenarios/table1.json");
const TABLE3: &str = include_str!("../scenarios/table3.json");
const TABLE4: &str = include_str!("../scenarios/table4.json");

impl Scenario {
    /// The five-cluster, four-link experiment shipped with the crate.
    pub fn table1() -> Scenario {
        Scenario::from_json_str(TABLE1, "table1.json").expect("bundled scenario is valid")
    }

    /// The five-cluster experiment at a fixed price of 6, with four late
    /// arrivals paying 6 on path ABCD.
    pub fn table3() -> Scenario {
        Scenario::from_json_str(TABLE3, "table3.json").expect("bundled scenario is valid")
    }

    /// By bundled name (`table1`, `table3`, `table4`).
    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "table1" => Some(Scenario::table1()),
            "table3" => Some(Scenario::table3()),
            "table4" => Some(Scenario::table4()),
            _ => None,
        }
    }

    /// Alternative paths, with each link pricing the load-weighted share of
    /// the bids crossing it.
    pub fn table4() -> Scenario {
        Scenario::from_json_str(TABLE4, "table4.json").expect("bundled scenario is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::from_json_str(&text, &path.display().to_string())
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|source| ScenarioError::Parse { origin: origin.to_string(), source })?;
        Scenario::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        if file.links.is_empty() {
            return Err(invalid("links", "at least one link is required"));
        }
        for (i, l) in file.links.iter().enumerate() {
            if !(l.capacity.is_finite() && l.capacity >= 0.0) {
                return Err(invalid(format!("links[{i}].capacity"), format!("must be finite and >= 0, got {}", l.capacity)));
            }
        }
        let topology = Topology::new(
            file.links.iter().map(|l| (l.id.clone(), l.capacity)).collect(),
            file.routes.iter().map(|r| (r.id.clone(), r.links.clone())).collect(),
        )?;
        if file.clusters.is_empty() {
            return Err(invalid("clusters", "at least one cluster is required"));
        }
        let mut clusters = Vec::new();
        let mut sizes = Vec::new();
        for (i, c) in file.clusters.iter().enumerate() {
            let key = |f: &str| format!("clusters[{i}].{f}");
            if clusters.iter().any(|o: &Cluster| o.label == c.label) {
                return Err(invalid(key("label"), format!("duplicate label `{}`", c.label)));
            }
            let route = topology
                .route_id(&c.route)
                .ok_or_else(|| invalid(key("route"), format!("unknown route `{}`", c.route)))?;
            let bid = match (c.bid_price, c.budget) {
                (Some(p), None) => BidPrice::new(p).map_err(|e| invalid(key("bid_price"), e.to_string()))?,
                (None, Some(m)) => bid_price(m, c.x_star).map_err(|e| invalid(key("budget"), e.to_string()))?,
                _ => return Err(invalid(key("bid_price"), "exactly one of bid_price and budget is required")),
            };
            if !(c.x_star.is_finite() && c.x_star > 0.0) {
                return Err(invalid(key("x_star"), format!("must be positive, got {}", c.x_star)));
            }
            let patience = Patience {
                beta: c.beta,
                weight: c.sigma_w,
                tolerance: c.tolerance,
                discharge_threshold: c.discharge_threshold,
                qos_slack: c.qos_tolerance,
                budget_slack: c.budget_slack,
            };
            patience.validate().map_err(|m| invalid(key("tolerance"), m))?;
            let cluster = Cluster {
                label: c.label.clone(),
                route,
                bid_price: bid,
                min_bandwidth: c.x_star,
                max_bandwidth: c.x_max.unwrap_or(2.0 * c.x_star),
                patience,
            };
            cluster
                .spawn(UserId(0), ClusterId(i))
                .map_err(|e| invalid(key("x_max"), e.to_string()))?;
            clusters.push(cluster);
            sizes.push(c.count);
        }

        let p = &file.pricing;
        if !(p.lambda_min.is_finite() && p.lambda_min >= 0.0) {
            return Err(invalid("pricing.lambda_min", "must be finite and >= 0"));
        }
        if let Some(set) = &p.price_set {
            if set.is_empty() {
                return Err(invalid("pricing.price_set", "must not be empty"));
            }
            if let Some(bad) = set.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(invalid("pricing.price_set", format!("prices must be positive, got {bad}")));
            }
        }
        let priced_links = match &p.links {
            None => topology.link_ids().collect(),
            Some(names) => names
                .iter()
                .map(|n| topology.link_id(n).ok_or_else(|| invalid("pricing.links", format!("unknown link `{n}`"))))
                .collect::<Result<Vec<_>, _>>()?,
        };
        if let Some(price) = p.price {
            if !(price.is_finite() && price >= 0.0) {
                return Err(invalid("pricing.price", "must be finite and >= 0"));
            }
        }
        if p.strategy == StrategyKind::Fixed && p.price.is_none() {
            return Err(invalid("pricing.price", "the fixed strategy needs a price"));
        }
        if p.dwell == 0 {
            return Err(invalid("pricing.dwell", "must be at least 1"));
        }
        if !(p.step.sigma0.is_finite() && p.step.sigma0 > 0.0) {
            return Err(invalid("pricing.step.sigma0", "must be positive"));
        }
        let utility = file.utility.clone().unwrap_or_default();
        utility.validate().map_err(|e| invalid("utility", e.to_string()))?;

        let mut arrivals = Vec::new();
        let mut last_tick = 0;
        for (i, a) in file.arrivals.iter().enumerate() {
            let cluster = clusters
                .iter()
                .position(|c| c.label == a.cluster)
                .map(ClusterId)
                .ok_or_else(|| invalid(format!("arrivals[{i}].cluster"), format!("unknown cluster `{}`", a.cluster)))?;
            if a.tick == 0 || a.tick < last_tick {
                return Err(invalid(format!("arrivals[{i}].tick"), "ticks start at 1 and must not decrease"));
            }
            last_tick = a.tick;
            arrivals.push(Arrival { tick: a.tick, cluster, count: a.count });
        }
        if file.horizon.ticks == 0 {
            return Err(invalid("horizon.ticks", "must be at least 1"));
        }

        Ok(Scenario {
            name: file.name,
            topology,
            clusters,
            sizes,
            utility,
            pricing: Pricing {
                strategy: p.strategy,
                lambda_min: p.lambda_min,
                price_set: p.price_set.clone(),
                priced_links,
                price: p.price,
                dwell: p.dwell,
                bid_source: p.bid_source,
                distribution: p.distribution,
                step: p.step,
            },
            horizon: file.horizon.ticks,
            arrivals,
        })
    }

    /// Back to the on-disk layout, with every default spelled out.
    pub fn to_file(&self) -> ScenarioFile {
        let t = &self.topology;
        ScenarioFile {
            name: self.name.clone(),
            links: t.links().iter().map(|l| LinkSpec { id: l.name.clone(), capacity: l.capacity }).collect(),
            routes: t
                .routes()
                .iter()
                .map(|r| RouteSpec { id: r.name.clone(), links: r.links.iter().map(|l| t.link(*l).name.clone()).collect() })
                .collect(),
            clusters: self
                .clusters
                .iter()
                .zip(&self.sizes)
                .map(|(c, &count)| ClusterSpec {
                    label: c.label.clone(),
                    route: t.route(c.route).name.clone(),
                    bid_price: Some(c.bid_price.value()),
                    budget: None,
                    x_star: c.min_bandwidth,
                    x_max: Some(c.max_bandwidth),
                    tolerance: c.patience.tolerance,
                    beta: c.patience.beta,
                    sigma_w: c.patience.weight,
                    discharge_threshold: c.patience.discharge_threshold,
                    budget_slack: c.patience.budget_slack,
                    qos_tolerance: c.patience.qos_slack,
                    count,
                })
                .collect(),
            pricing: PricingSpec {
                strategy: self.pricing.strategy,
                lambda_min: self.pricing.lambda_min,
                price_set: self.pricing.price_set.clone(),
                links: Some(self.pricing.priced_links.iter().map(|l| t.link(*l).name.clone()).collect()),
                price: self.pricing.price,
                dwell: self.pricing.dwell,
                bid_source: self.pricing.bid_source,
                distribution: self.pricing.distribution,
                step: self.pricing.step,
            },
            horizon: HorizonSpec { ticks: self.horizon },
            utility: Some(self.utility.clone()),
            arrivals: self
                .arrivals
                .iter()
                .map(|a| ArrivalSpec { tick: a.tick, cluster: self.clusters[a.cluster.index()].label.clone(), count: a.count })
                .collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n")
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
    }

    pub fn cluster_id(&self, label: &str) -> Option<ClusterId> {
        self.clusters.iter().position(|c| c.label == label).map(ClusterId)
    }

    /// Initial population, ids assigned in cluster order.
    pub fn initial_users(&self) -> Vec<User> {
        let mut users = Vec::new();
        for (i, (c, &n)) in self.clusters.iter().zip(&self.sizes).enumerate() {
            for _ in 0..n {
                let id = UserId(users.len() as u32);
                users.push(c.spawn(id, ClusterId(i)).expect("clusters are validated on load"));
            }
        }
        users
    }

    pub fn market(&self) -> Market {
        self.market_with(self.initial_users())
    }

    pub fn market_with(&self, users: Vec<User>) -> Market {
        Market {
            topology: self.topology.clone(),
            users,
            utility: self.utility.clone(),
            lambda_min: self.pricing.lambda_min,
            priced_links: self.pricing.priced_links.clone(),
        }
    }

    /// Configured price set, or one bid per initial user.
    pub fn bid_set(&self) -> BidSet {
        match &self.pricing.price_set {
            Some(set) => BidSet::new(set.iter().copied()).expect("price set is validated on load"),
            None => BidSet::from_users(&self.initial_users()),
        }
    }

    /// Keep only the named clusters (arrivals for dropped clusters go too).
    pub fn restrict_clusters(&self, labels: &[&str]) -> Result<Scenario, ScenarioError> {
        let mut file = self.to_file();
        for l in labels {
            if self.cluster_id(l).is_none() {
                return Err(invalid("clusters", format!("unknown cluster `{l}`")));
            }
        }
        file.clusters.retain(|c| labels.contains(&c.label.as_str()));
        file.arrivals.retain(|a| labels.contains(&a.cluster.as_str()));
        Scenario::from_file(file)
    }

    /// The strategy the pricing section describes.
    pub fn strategy(&self) -> Result<Strategy, ScenarioError> {
        let p = &self.pricing;
        Ok(match p.strategy {
            StrategyKind::Micc => Strategy::Micc { dwell: p.dwell },
            StrategyKind::Progressive => Strategy::Progressive { dwell: p.dwell },
            StrategyKind::Subgradient => Strategy::Subgradient { step: p.step },
            StrategyKind::Fixed => Strategy::Fixed {
                price: p.price.ok_or_else(|| invalid("pricing.price", "the fixed strategy needs a price"))?,
            },
            StrategyKind::Highest => Strategy::Fixed { price: self.bid_set().max().expect("bid set is non-empty") },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_load() {
        let s = Scenario::table1();
        assert_eq!(s.clusters.len(), 5);
        assert_eq!(s.initial_users().len(), 25);
        assert_eq!(s.bid_set().as_slice(), &[2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(s.clusters[2].budget(), 15.0);
        assert_eq!(Scenario::table3().arrivals.len(), 1);
        let t4 = Scenario::table4();
        assert_eq!(t4.pricing.bid_source, BidSource::Distributed);
    }

    #[test]
    fn round_trip() {
        let s = Scenario::table1();
        let again = Scenario::from_json_str(&s.to_json_string(), "mem").unwrap();
        assert_eq!(s, again);
        assert_eq!(s.to_json_string(), again.to_json_string());
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let text = TABLE1.replacen("\"x_star\"", "\"x_stra\"", 1);
        let err = Scenario::from_json_str(&text, "bad.json").unwrap_err().to_string();
        assert!(err.contains("x_stra") && err.contains("line"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let mut f = Scenario::table1().to_file();
        f.clusters[1].route = "nowhere".into();
        let err = Scenario::from_file(f).unwrap_err().to_string();
        assert!(err.contains("clusters[1].route"), "{err}");

        let mut f = Scenario::table1().to_file();
        f.clusters[0].budget = Some(5.0);
        assert!(Scenario::from_file(f).is_err());

        let mut f = Scenario::table1().to_file();
        f.links[0].capacity = -1.0;
        assert!(Scenario::from_file(f).unwrap_err().to_string().contains("links[0].capacity"));
    }

    #[test]
    fn budget_derives_bid() {
        let mut f = Scenario::table1().to_file();
        f.clusters[0].bid_price = None;
        f.clusters[0].budget = Some(5.0);
        let s = Scenario::from_file(f).unwrap();
        assert_eq!(s.clusters[0].bid_price.value(), 2.0);
    }

    #[test]
    fn restrict_keeps_named_clusters() {
        let s = Scenario::table1().restrict_clusters(&["cluster1", "cluster2", "cluster3"]).unwrap();
        assert_eq!(s.initial_users().len(), 15);
        assert!(Scenario::table1().restrict_clusters(&["nope"]).is_err());
    }
}
