#![allow(dead_code)]

use micc_core::market::{link_loads, ClusterId, RouteId, Topology, User, UserId};
use micc_core::micc::MiccResult;
use micc_core::utility::{best_response, UtilityParams};
use micc_core::Market;
use rand::Rng;

/// Brute force: evaluate every candidate (no early exit, no sorting) and
/// keep the smallest one under which all links fit.
pub fn oracle_min_feasible(market: &Market, bids: &[f64]) -> MiccResult {
    let mut best: Option<f64> = None;
    for &b in bids {
        let p = b.max(market.lambda_min);
        let mut prices = vec![market.lambda_min; market.topology.links().len()];
        for l in &market.priced_links {
            prices[l.index()] = p;
        }
        let rates: Vec<f64> = market
            .users
            .iter()
            .map(|u| {
                let rp = market.topology.route_price(u.route, &prices);
                if u.is_present() && u.can_afford(rp) {
                    best_response(rp, u, &market.utility).unwrap()
                } else {
                    0.0
                }
            })
            .collect();
        let loads = link_loads(&market.topology, &market.users, &rates).unwrap();
        let fits = loads.iter().zip(market.topology.links()).all(|(&x, l)| x <= l.capacity + 1e-9);
        if fits && best.is_none_or(|q| p < q) {
            best = Some(p);
        }
    }
    best.map_or(MiccResult::Unaffordable, MiccResult::Price)
}

/// A single link, or two links with routes over either link and both; capacities,
/// users, λ_min and the bid set are random. Bids are multiples of 0.5 and
/// may include prices nobody bid.
pub fn random_bid_instance(rng: &mut impl Rng) -> (Market, Vec<f64>) {
    // log-uniform capacities so some instances cannot clear at any bid
    let mut cap = || (rng.gen_range(0.0f64..=1.0) * 60f64.ln()).exp();
    let (c1, c2) = (cap(), cap());
    let single = rng.gen_bool(0.5);
    let topology = if single {
        Topology::single_link(c1).unwrap()
    } else {
        Topology::new(
            vec![("L1", c1), ("L2", c2)],
            vec![("r1", vec!["L1"]), ("r2", vec!["L2"]), ("r12", vec!["L1", "L2"])],
        )
        .unwrap()
    };
    let routes = topology.routes().len();
    let n = rng.gen_range(1..=20);
    let users: Vec<User> = (0..n)
        .map(|i| {
            let bid = rng.gen_range(2..=40) as f64 / 2.0;
            let x_star = rng.gen_range(0.5..=5.0);
            let route = RouteId(rng.gen_range(0..routes));
            User::new(UserId(i), ClusterId(0), bid * x_star, x_star, route).unwrap()
        })
        .collect();
    let mut bids: Vec<f64> = users.iter().map(|u| u.bid_price().value()).collect();
    if rng.gen_bool(0.3) {
        // only the cheaper half of the bids
        bids.sort_by(f64::total_cmp);
        bids.truncate(bids.len().div_ceil(2));
    }
    for _ in 0..rng.gen_range(0..4) {
        bids.push(rng.gen_range(1..=50) as f64 / 2.0);
    }
    let params = if rng.gen_bool(0.5) { UtilityParams::default() } else { UtilityParams::table1_calibrated() };
    let mut market = Market::new(topology, users, params);
    if rng.gen_bool(0.3) {
        market.lambda_min = rng.gen_range(0..=12) as f64 / 2.0;
    }
    (market, bids)
}
