//! Shared vocabulary: users, links, routes, clusters and the static market
//! snapshot the solvers operate on.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::utility::{self, UtilityError, UtilityParams};

/// Slack used for every `load <= capacity` comparison.
pub const FEASIBILITY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("budget must be positive and finite, got {0}")]
    NonPositiveBudget(f64),
    #[error("minimum bandwidth must be positive and finite, got {0}")]
    NonPositiveMinBandwidth(f64),
    #[error("invalid user {id}: {reason}")]
    InvalidUser { id: UserId, reason: String },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("unknown route `{0}`")]
    UnknownRoute(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("expected {expected} rates (one per user), got {got}")]
    RateCountMismatch { expected: usize, got: usize },
}

macro_rules! index_id {
    ($(#[$m:meta])* $name:ident, $inner:ty, $prefix:literal) => {
        $(#[$m])*
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

index_id!(
    /// Stable user identity. Never reused after a discharge.
    UserId, u32, "u"
);
index_id!(LinkId, usize, "l");
index_id!(RouteId, usize, "r");
index_id!(ClusterId, usize, "c");

/// A user's declared willingness to pay per unit of bandwidth, `m / x*`.
#[derive(Copy, Clone, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidPrice(f64);

impl BidPrice {
    pub fn new(value: f64) -> Result<Self, MarketError> {
        if value.is_finite() && value > 0.0 {
            Ok(BidPrice(value))
        } else {
            Err(MarketError::NonPositiveBudget(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for BidPrice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `λ̂ = m / x*`.
pub fn bid_price(budget: f64, min_bandwidth: f64) -> Result<BidPrice, MarketError> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(MarketError::NonPositiveBudget(budget));
    }
    if !(min_bandwidth.is_finite() && min_bandwidth > 0.0) {
        return Err(MarketError::NonPositiveMinBandwidth(min_bandwidth));
    }
    Ok(BidPrice(budget / min_bandwidth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub name: String,
    pub links: Vec<LinkId>,
}

/// Links and the routes over them. Routes are ordered lists of distinct links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    links: Vec<Link>,
    routes: Vec<Route>,
}

impl Topology {
    pub fn new<S: Into<String>>(
        links: Vec<(S, f64)>,
        routes: Vec<(S, Vec<S>)>,
    ) -> Result<Self, MarketError> {
        let links: Vec<Link> = links
            .into_iter()
            .map(|(name, capacity)| Link { name: name.into(), capacity })
            .collect();
        for (i, l) in links.iter().enumerate() {
            if !(l.capacity.is_finite() && l.capacity >= 0.0) {
                return Err(MarketError::InvalidTopology(format!(
                    "link `{}` has capacity {}",
                    l.name, l.capacity
                )));
            }
            if links[..i].iter().any(|o| o.name == l.name) {
                return Err(MarketError::InvalidTopology(format!("duplicate link `{}`", l.name)));
            }
        }
        let mut built = Vec::new();
        for (name, names) in routes {
            let name = name.into();
            if names.is_empty() {
                return Err(MarketError::InvalidTopology(format!("route `{name}` has no links")));
            }
            let mut ids = Vec::new();
            for n in names {
                let n = n.into();
                let id = links
                    .iter()
                    .position(|l| l.name == n)
                    .map(LinkId)
                    .ok_or_else(|| MarketError::UnknownLink(n.clone()))?;
                if ids.contains(&id) {
                    return Err(MarketError::InvalidTopology(format!(
                        "route `{name}` visits link `{n}` twice"
                    )));
                }
                ids.push(id);
            }
            if built.iter().any(|r: &Route| r.name == name) {
                return Err(MarketError::InvalidTopology(format!("duplicate route `{name}`")));
            }
            built.push(Route { name, links: ids });
        }
        Ok(Topology { links, routes: built })
    }

    /// One link `L` with one route `R` over it.
    pub fn single_link(capacity: f64) -> Result<Self, MarketError> {
        Topology::new(vec![("L", capacity)], vec![("R", vec!["L"])])
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn route(&self, id: RouteId) -> &Route {
        &self.routes[id.index()]
    }

    pub fn link_id(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name).map(LinkId)
    }

    pub fn route_id(&self, name: &str) -> Option<RouteId> {
        self.routes.iter().position(|r| r.name == name).map(RouteId)
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> {
        (0..self.links.len()).map(LinkId)
    }

    pub fn traverses(&self, route: RouteId, link: LinkId) -> bool {
        self.route(route).links.contains(&link)
    }

    /// Sum of link prices along a route. Any infinite link price makes the
    /// route price infinite.
    pub fn route_price(&self, route: RouteId, link_prices: &[f64]) -> f64 {
        self.route(route).links.iter().map(|l| link_prices[l.index()]).sum()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserState {
    Active,
    Waiting,
    Discharged,
}

/// How long and how hard a user tolerates degraded service.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patience {
    /// Exponent β of the dissatisfaction curve.
    pub beta: f64,
    /// Weight σ_w added to the bid/price ratio.
    pub weight: f64,
    /// Time budget T: the waiting time is measured as t / T.
    pub tolerance: f64,
    /// δ_thrd: the user leaves once degraded utility falls below this.
    pub discharge_threshold: f64,
    /// Fraction q of x* that may be missing before service counts as poor.
    pub qos_slack: f64,
    /// ε in `x*·λ ≤ m + ε`: how far over budget a user will still pay.
    pub budget_slack: f64,
}

impl Default for Patience {
    fn default() -> Self {
        Patience {
            beta: 1.0,
            weight: 0.0,
            tolerance: 1.0,
            discharge_threshold: 0.0,
            qos_slack: 0.0,
            budget_slack: 0.0,
        }
    }
}

impl Patience {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.beta >= 0.0, "beta must be non-negative"),
            (self.weight >= 0.0, "sigma_w must be non-negative"),
            (self.tolerance > 0.0, "tolerance must be positive"),
            (self.discharge_threshold.is_finite(), "discharge_threshold must be finite"),
            ((0.0..1.0).contains(&self.qos_slack), "qos_tolerance must lie in [0, 1)"),
            (self.budget_slack >= 0.0, "budget_slack must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(msg.to_string());
            }
        }
        if ![self.beta, self.weight, self.tolerance, self.budget_slack].iter().all(|v| v.is_finite()) {
            return Err("patience parameters must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub cluster: ClusterId,
    /// m
    pub budget: f64,
    /// x*
    pub min_bandwidth: f64,
    /// Upper end of the best-response search.
    pub max_bandwidth: f64,
    pub patience: Patience,
    pub route: RouteId,
    pub state: UserState,
}

impl User {
    pub fn new(
        id: UserId,
        cluster: ClusterId,
        budget: f64,
        min_bandwidth: f64,
        route: RouteId,
    ) -> Result<Self, MarketError> {
        let user = User {
            id,
            cluster,
            budget,
            min_bandwidth,
            max_bandwidth: 2.0 * min_bandwidth,
            patience: Patience::default(),
            route,
            state: UserState::Active,
        };
        user.validate()?;
        Ok(user)
    }

    pub fn with_max_bandwidth(mut self, x_max: f64) -> Result<Self, MarketError> {
        self.max_bandwidth = x_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_patience(mut self, patience: Patience) -> Result<Self, MarketError> {
        self.patience = patience;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        bid_price(self.budget, self.min_bandwidth)?;
        if !(self.max_bandwidth.is_finite() && self.max_bandwidth >= self.min_bandwidth) {
            return Err(MarketError::InvalidUser {
                id: self.id,
                reason: format!(
                    "x_max {} must be finite and at least x* {}",
                    self.max_bandwidth, self.min_bandwidth
                ),
            });
        }
        self.patience
            .validate()
            .map_err(|reason| MarketError::InvalidUser { id: self.id, reason })
    }

    pub fn bid_price(&self) -> BidPrice {
        BidPrice(self.budget / self.min_bandwidth)
    }

    pub fn is_present(&self) -> bool {
        self.state != UserState::Discharged
    }

    /// Whether paying `price` for the minimum bandwidth stays within budget
    /// plus the user's slack.
    pub fn can_afford(&self, price: f64) -> bool {
        price.is_finite() && self.min_bandwidth * price <= self.budget + self.patience.budget_slack + 1e-12
    }
}

/// Template for a group of identical users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: String,
    pub route: RouteId,
    pub bid_price: BidPrice,
    pub min_bandwidth: f64,
    pub max_bandwidth: f64,
    pub patience: Patience,
}

impl Cluster {
    pub fn budget(&self) -> f64 {
        self.bid_price.value() * self.min_bandwidth
    }

    pub fn spawn(&self, id: UserId, cluster: ClusterId) -> Result<User, MarketError> {
        User::new(id, cluster, self.budget(), self.min_bandwidth, self.route)?
            .with_max_bandwidth(self.max_bandwidth)?
            .with_patience(self.patience)
    }
}

fn check_rates(users: &[User], rates: &[f64]) -> Result<(), MarketError> {
    if users.len() != rates.len() {
        return Err(MarketError::RateCountMismatch { expected: users.len(), got: rates.len() });
    }
    Ok(())
}

/// Aggregate rate on `link` from every present user whose route crosses it.
pub fn link_load(
    topology: &Topology,
    users: &[User],
    rates: &[f64],
    link: LinkId,
) -> Result<f64, MarketError> {
    check_rates(users, rates)?;
    if link.index() >= topology.links().len() {
        return Err(MarketError::UnknownLink(link.to_string()));
    }
    Ok(users
        .iter()
        .zip(rates)
        .filter(|(u, _)| u.is_present() && topology.traverses(u.route, link))
        .map(|(_, r)| r)
        .sum())
}

/// Load on every link, indexed by `LinkId`.
pub fn link_loads(topology: &Topology, users: &[User], rates: &[f64]) -> Result<Vec<f64>, MarketError> {
    check_rates(users, rates)?;
    let mut loads = vec![0.0; topology.links().len()];
    for (u, r) in users.iter().zip(rates) {
        if !u.is_present() {
            continue;
        }
        for l in &topology.route(u.route).links {
            loads[l.index()] += r;
        }
    }
    Ok(loads)
}

/// A static snapshot the solvers price: who is present, what they value,
/// which links are priced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub topology: Topology,
    pub users: Vec<User>,
    pub utility: UtilityParams,
    pub lambda_min: f64,
    /// Links a uniform candidate price is applied to. Others sit at λ_min.
    pub priced_links: Vec<LinkId>,
}

impl Market {
    /// All links priced, λ_min = 0.
    pub fn new(topology: Topology, users: Vec<User>, utility: UtilityParams) -> Self {
        let priced_links = topology.link_ids().collect();
        Market { topology, users, utility, lambda_min: 0.0, priced_links }
    }

    /// Link prices when `price` is charged on every priced link.
    pub fn uniform_prices(&self, price: f64) -> Vec<f64> {
        let mut prices = vec![self.lambda_min; self.topology.links().len()];
        for l in &self.priced_links {
            prices[l.index()] = price.max(self.lambda_min);
        }
        prices
    }

    /// Each user's rate under the given link prices: the best response to the
    /// route price, or zero if the user is gone or cannot afford the route.
    pub fn demands(&self, link_prices: &[f64]) -> Result<Vec<f64>, UtilityError> {
        self.users
            .iter()
            .map(|u| {
                if !u.is_present() {
                    return Ok(0.0);
                }
                let p = self.topology.route_price(u.route, link_prices);
                if !u.can_afford(p) {
                    return Ok(0.0);
                }
                utility::best_response(p, u, &self.utility)
            })
            .collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.topology.links().iter().map(|l| l.capacity).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Topology {
        Topology::new(
            vec![("AB", 40.0), ("BC", 40.0)],
            vec![("r1", vec!["AB"]), ("r2", vec!["AB", "BC"])],
        )
        .unwrap()
    }

    #[test]
    fn bid_price_examples() {
        assert_eq!(bid_price(5.0, 2.5).unwrap().value(), 2.0);
        assert_eq!(bid_price(25.0, 2.5).unwrap().value(), 10.0);
        assert_eq!(bid_price(7.0, 7.0).unwrap().value(), 1.0);
        assert!(matches!(bid_price(0.0, 1.0), Err(MarketError::NonPositiveBudget(_))));
        assert!(matches!(bid_price(1.0, 0.0), Err(MarketError::NonPositiveMinBandwidth(_))));
        assert!(bid_price(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn link_load_sums_crossing_users() {
        let t = line();
        let users: Vec<User> = (0..10)
            .map(|i| User::new(UserId(i), ClusterId(0), 5.0, 2.5, RouteId((i % 2) as usize)).unwrap())
            .collect();
        // five users at 2.95 and five at 2.36 all cross AB
        let rates: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 2.95 } else { 2.36 }).collect();
        let ab = link_load(&t, &users, &rates, LinkId(0)).unwrap();
        assert!((ab - 26.55).abs() < 1e-9);
        let bc = link_load(&t, &users, &rates, LinkId(1)).unwrap();
        assert!((bc - 11.8).abs() < 1e-9);
        assert_eq!(link_loads(&t, &users, &rates).unwrap(), vec![ab, bc]);
        assert!(link_load(&t, &users, &rates[..3], LinkId(0)).is_err());
    }

    #[test]
    fn discharged_users_carry_no_load() {
        let t = line();
        let mut users = vec![User::new(UserId(0), ClusterId(0), 5.0, 2.5, RouteId(0)).unwrap()];
        users[0].state = UserState::Discharged;
        assert_eq!(link_load(&t, &users, &[3.0], LinkId(0)).unwrap(), 0.0);
    }

    #[test]
    fn topology_rejects_bad_input() {
        assert!(Topology::new(vec![("A", -1.0)], vec![("r", vec!["A"])]).is_err());
        assert!(Topology::new(vec![("A", 1.0)], vec![("r", vec!["B"])]).is_err());
        assert!(Topology::new(vec![("A", 1.0)], vec![("r", vec!["A", "A"])]).is_err());
        assert!(Topology::new(vec![("A", 1.0), ("A", 2.0)], vec![]).is_err());
        // zero capacity is allowed: nothing fits, every candidate is infeasible
        assert!(Topology::single_link(0.0).is_ok());
    }

    #[test]
    fn route_price_sums_links() {
        let t = line();
        assert_eq!(t.route_price(RouteId(1), &[2.0, 3.0]), 5.0);
        assert!(t.route_price(RouteId(1), &[2.0, f64::INFINITY]).is_infinite());
    }

    #[test]
    fn affordability_uses_slack() {
        let mut u = User::new(UserId(0), ClusterId(0), 15.0, 2.5, RouteId(0)).unwrap();
        assert!(u.can_afford(6.0));
        assert!(!u.can_afford(6.5));
        u.patience.budget_slack = 12.5;
        assert!(u.can_afford(11.0));
        assert!(!u.can_afford(11.5));
        assert!(!u.can_afford(f64::INFINITY));
    }
}
