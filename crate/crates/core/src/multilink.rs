//! Splitting a route-level bid across the links of the route in proportion
//! to how loaded each link is.

use serde::{Deserialize, Serialize};

use crate::market::{link_loads, BidPrice, LinkId, MarketError, RouteId, Topology, User};

/// How a bid is split over a route.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionFormula {
    /// `w_l·λ̂`: shares sum to the bid.
    #[default]
    Normalized,
    /// `w_l·λ̂/|r|`: shares sum to the bid divided by the hop count.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteWeights {
    pub links: Vec<LinkId>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidDistribution {
    pub links: Vec<LinkId>,
    pub shares: Vec<f64>,
}

impl BidDistribution {
    pub fn share_on(&self, link: LinkId) -> Option<f64> {
        self.links.iter().position(|&l| l == link).map(|i| self.shares[i])
    }
}

/// Loads seen by a probe travelling the route, in route order.
pub fn probe_route(topology: &Topology, users: &[User], rates: &[f64], route: RouteId) -> Result<Vec<f64>, MarketError> {
    if route.index() >= topology.routes().len() {
        return Err(MarketError::UnknownRoute(route.to_string()));
    }
    let loads = link_loads(topology, users, rates)?;
    Ok(topology.route(route).links.iter().map(|l| loads[l.index()]).collect())
}

/// `w_l = load_l / Σ load` over the route; uniform when the route is idle.
pub fn weights_from_loads(links: &[LinkId], loads: &[f64]) -> RouteWeights {
    let total: f64 = loads.iter().sum();
    let weights = if total > 0.0 {
        loads.iter().map(|l| l / total).collect()
    } else {
        vec![1.0 / links.len() as f64; links.len()]
    };
    RouteWeights { links: links.to_vec(), weights }
}

pub fn route_weights(topology: &Topology, users: &[User], rates: &[f64], route: RouteId) -> Result<RouteWeights, MarketError> {
    let loads = probe_route(topology, users, rates, route)?;
    Ok(weights_from_loads(&topology.route(route).links, &loads))
}

pub fn distribute_bid(bid: BidPrice, weights: &RouteWeights, formula: DistributionFormula) -> BidDistribution {
    let hops = match formula {
        DistributionFormula::Normalized => 1.0,
        DistributionFormula::Literal => weights.links.len() as f64,
    };
    BidDistribution {
        links: weights.links.clone(),
        shares: weights.weights.iter().map(|w| w * bid.value() / hops).collect(),
    }
}
