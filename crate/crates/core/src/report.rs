//! Allocation reports: who gets what at a given set of link prices.

use serde::{Deserialize, Serialize};

use crate::market::{link_loads, ClusterId, Market, MarketError, UserId, FEASIBILITY_EPS};
use crate::utility::utility;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRate {
    pub id: UserId,
    pub cluster: ClusterId,
    pub route_price: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkUsage {
    pub link: String,
    pub price: f64,
    pub capacity: f64,
    pub load: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub links: Vec<LinkUsage>,
    pub rates: Vec<UserRate>,
    pub total_flow: f64,
    pub revenue: f64,
    /// Σ U(x, λ) over users receiving bandwidth at a positive price.
    pub aggregate_utility: f64,
    /// Users present, indexed by cluster.
    pub survivors: Vec<usize>,
    pub feasible: bool,
}

impl AllocationReport {
    pub fn from_rates(market: &Market, link_prices: &[f64], rates: &[f64]) -> Result<Self, MarketError> {
        let loads = link_loads(&market.topology, &market.users, rates)?;
        let links: Vec<LinkUsage> = market
            .topology
            .links()
            .iter()
            .zip(&loads)
            .zip(link_prices)
            .map(|((l, &load), &price)| LinkUsage { link: l.name.clone(), price, capacity: l.capacity, load })
            .collect();
        let mut out = Vec::new();
        let (mut total_flow, mut revenue, mut aggregate_utility) = (0.0, 0.0, 0.0);
        let mut survivors = vec![0; market.users.iter().map(|u| u.cluster.index() + 1).max().unwrap_or(0)];
        for (u, &r) in market.users.iter().zip(rates) {
            if !u.is_present() {
                continue;
            }
            survivors[u.cluster.index()] += 1;
            let p = market.topology.route_price(u.route, link_prices);
            total_flow += r;
            if r > 0.0 {
                revenue += p * r;
                if p > 0.0 && p.is_finite() {
                    aggregate_utility += utility(r, p, u, &market.utility).unwrap_or(0.0);
                }
            }
            out.push(UserRate { id: u.id, cluster: u.cluster, route_price: p, rate: r });
        }
        let feasible = links.iter().all(|l| l.load <= l.capacity + FEASIBILITY_EPS);
        Ok(AllocationReport { links, rates: out, total_flow, revenue, aggregate_utility, survivors, feasible })
    }

    /// Mean rate of the present users in `cluster`, if any.
    pub fn cluster_rate(&self, cluster: ClusterId) -> Option<f64> {
        let rs: Vec<f64> = self.rates.iter().filter(|r| r.cluster == cluster).map(|r| r.rate).collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["user", "cluster", "route_price", "rate"])?;
        for r in &self.rates {
            w.write_record([
                r.id.to_string(),
                r.cluster.to_string(),
                fmt2(r.route_price),
                fmt2(r.rate),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Two-decimal display rounding used in every CSV.
pub fn fmt2(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{RouteId, Topology, User};
    use crate::utility::UtilityParams;

    #[test]
    fn revenue_and_feasibility() {
        let t = Topology::single_link(10.0).unwrap();
        let users = (0..3)
            .map(|i| User::new(UserId(i), ClusterId(0), 4.0, 2.0, RouteId(0)).unwrap())
            .collect();
        let m = Market::new(t, users, UtilityParams::default());
        let r = AllocationReport::from_rates(&m, &[2.0], &[3.0, 3.0, 3.0]).unwrap();
        assert!(r.feasible);
        assert!((r.total_flow - 9.0).abs() < 1e-12);
        assert!((r.revenue - 18.0).abs() < 1e-12);
        assert_eq!(r.cluster_rate(ClusterId(0)), Some(3.0));
        assert_eq!(r.survivors, vec![3]);
        assert!(r.aggregate_utility > 0.0);
        let over = AllocationReport::from_rates(&m, &[2.0], &[4.0, 4.0, 4.0]).unwrap();
        assert!(!over.feasible);
        assert!(over.to_csv().unwrap().contains("u0,c0,2.00,4.00"));
    }

    #[test]
    fn fmt2_rounds() {
        assert_eq!(fmt2(26.554), "26.55");
        assert_eq!(fmt2(f64::INFINITY), "inf");
    }
}
