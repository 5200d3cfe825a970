//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the lines always print: `cargo test --test acceptance`.

mod support;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use micc_core::calibrate::{calibrate, table1_targets, CalibrationConfig};
use micc_core::experiment::{reference_tables, random_single_link_market, settled_tick, tick_report};
use micc_core::market::{LinkId, Patience};
use micc_core::micc::{micc_select, verify_proposition1, BidSet, MiccResult, VerificationStatus};
use micc_core::multilink::{distribute_bid, weights_from_loads, DistributionFormula};
use micc_core::report::AllocationReport;
use micc_core::selfreg::{replay_states, run, LinkPrice, SimTrace, Strategy};
use micc_core::tables::Provenance;
use micc_core::utility::{best_response, dissatisfaction};
use micc_core::{BidPrice, Scenario, SolverConfig, UtilityParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn revenue_identity_holds(trace: &SimTrace) -> bool {
    trace.ticks.iter().all(|t| {
        let expected: f64 = t.users.iter().filter(|u| u.rate > 0.0).map(|u| u.route_price.value() * u.rate).sum();
        (t.revenue - expected).abs() <= 1e-9 * expected.max(1.0)
    })
}

fn report_identity_holds(r: &AllocationReport) -> bool {
    let expected: f64 = r.rates.iter().filter(|u| u.rate > 0.0).map(|u| u.route_price * u.rate).sum();
    let flow: f64 = r.rates.iter().map(|u| u.rate).sum();
    (r.revenue - expected).abs() <= 1e-9 * expected.max(1.0) && (r.total_flow - flow).abs() <= 1e-9 * flow.max(1.0)
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let s = Scenario::table1();
    let trace = run(&s, Strategy::Micc { dwell: s.pricing.dwell }, s.horizon).unwrap();
    let report = tick_report(&s, &trace, settled_tick(&trace)).unwrap();
    let elapsed = start.elapsed();
    let levels = trace.levels();
    let price = trace.last().link_prices[0];
    let ab = report.links[0].load;
    let pass = price == LinkPrice::Finite(6.0)
        && levels.len() == 3
        && report.feasible
        && ab <= 40.0
        && rel(report.total_flow, 34.0) <= 0.02
        && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "price {:?} after {} candidates, AB load {:.2} (<= 40), flow {:.2} vs 34 ±2%, {:?}",
            price.value(),
            levels.len(),
            ab,
            report.total_flow,
            elapsed
        ),
    )
}

fn ac2() -> Outcome {
    let (t2, _) = reference_tables().unwrap();
    let published_ok = t2.rows.iter().filter(|r| r.row.provenance == Provenance::Published).all(|r| r.consistent);
    let sim: Vec<_> = t2.rows.iter().filter(|r| r.row.provenance == Provenance::Simulated).collect();
    let sim_ok = sim.iter().all(|r| r.consistent);
    // simulated rows against the printed 187.25 and 204, within the
    // calibration tolerances (10% held-out at 5, 2% at 6)
    let r5 = sim[0].row.revenue;
    let r6 = sim[1].row.revenue;
    let close = rel(r5, 187.25) <= 0.10 && rel(r6, 204.0) <= 0.02;

    let s = Scenario::table1();
    let mut identities = true;
    for strategy in [
        Strategy::Micc { dwell: 1 },
        Strategy::Fixed { price: 6.0 },
        Strategy::Fixed { price: 10.0 },
        Strategy::Progressive { dwell: 40 },
        Strategy::Subgradient { step: s.pricing.step },
    ] {
        let trace = run(&s, strategy, 200).unwrap();
        identities &= revenue_identity_holds(&trace);
        for i in [0, settled_tick(&trace), trace.ticks.len() - 1] {
            identities &= report_identity_holds(&tick_report(&s, &trace, i).unwrap());
        }
    }
    outcome(
        published_ok && sim_ok && close && identities,
        format!(
            "published 5·37.45=187.25, 6·34=204 consistent: {published_ok}; simulated revenue {r5:.2} (price 5), {r6:.2} (price 6); identity to 1e-9: {}",
            sim_ok && identities
        ),
    )
}

fn ac3() -> Outcome {
    let s = Scenario::table1();
    let (fit, holdout) = table1_targets();
    match calibrate(&s, &fit, &holdout, &CalibrationConfig::default()) {
        Ok(r) => {
            let at6 = r.fits.iter().filter(|f| f.target.price == 6.0).map(|f| f.rel_error).fold(0.0, f64::max);
            let pass = at6 <= 0.05 && r.holdout_max_rel_error <= 0.10 && (0.1..=20.0).contains(&r.params.theta);
            outcome(
                pass,
                format!(
                    "theta {:.4}: price-6 max error {:.2}% (<= 5%), held-out price-5 {:.2}% (<= 10%)",
                    r.params.theta,
                    at6 * 100.0,
                    r.holdout_max_rel_error * 100.0
                ),
            )
        }
        Err(e) => outcome(false, format!("calibration failed: {e}")),
    }
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SolverConfig::default();
    let (mut checked, mut tried, mut violations, mut binding) = (0, 0, 0, 0);
    while checked < 100 && tried < 1000 {
        tried += 1;
        let market = random_single_link_market(&mut rng);
        let rec = verify_proposition1(&market, &BidSet::from_users(&market.users), &cfg, 1e-6).unwrap();
        match rec.status {
            VerificationStatus::Holds => {
                checked += 1;
                if rec.lambda_star.as_ref().is_some_and(|l| l[0] > 0.0) {
                    binding += 1;
                }
            }
            VerificationStatus::Violated => {
                checked += 1;
                violations += 1;
            }
            VerificationStatus::Inconclusive(_) => {}
        }
    }
    let elapsed = start.elapsed();
    outcome(
        checked >= 100 && violations == 0 && elapsed < Duration::from_secs(30),
        format!(
            "{checked} converged feasible instances ({binding} with λ* > 0) out of {tried} drawn, {violations} with λ* > λ̂* + 1e-6, {elapsed:?}"
        ),
    )
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut mismatches, mut unaffordable) = (0, 0);
    for _ in 0..1000 {
        let (market, bids) = support::random_bid_instance(&mut rng);
        let got = micc_select(&market, &BidSet::new(bids.clone()).unwrap()).unwrap().result;
        let want = support::oracle_min_feasible(&market, &bids);
        if got != want {
            mismatches += 1;
        }
        if want == MiccResult::Unaffordable {
            unaffordable += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("1000 bid sets ({unaffordable} unaffordable), {mismatches} mismatches, {elapsed:?}"),
    )
}

fn ac6() -> Outcome {
    let s = Scenario::table3();
    let arrival = s.arrivals[0].tick;
    let trace = run(&s, Strategy::Fixed { price: 6.0 }, s.horizon).unwrap();
    let c1 = s.cluster_id("cluster1").unwrap().index();
    let new = s.cluster_id("cluster3_new").unwrap().index();
    let first = &trace.ticks[0];
    let c1_rate = first.users.iter().find(|u| u.cluster.index() == c1).map_or(0.0, |u| u.demand);
    let before = trace.ticks.iter().rev().find(|t| t.tick < arrival).unwrap();
    let gone = before.active_by_cluster[c1] == 0;
    let freed = 40.0 - before.link_loads[0];
    let arrivals: Vec<f64> = trace.last().users.iter().filter(|u| u.cluster.index() == new).map(|u| u.rate).collect();
    let arrivals_ok = arrivals.len() == 4 && arrivals.iter().all(|&r| rel(r, 2.89) <= 0.05);
    outcome(
        gone && c1_rate < 2.5 && (freed - 13.45).abs() <= 0.5 && arrivals_ok,
        format!(
            "cluster 1 at {c1_rate:.2} < 2.5, all discharged by tick {}: {gone}; freed {freed:.2} (13.45 ±0.5); arrivals {:?} (2.89 ±5%)",
            before.tick,
            arrivals.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn ac7() -> Outcome {
    let s = Scenario::table1();
    let trace = run(&s, Strategy::Fixed { price: 10.0 }, s.horizon).unwrap();
    let last = trace.last();
    let kept: Vec<usize> = (0..s.clusters.len()).filter(|&c| last.active_by_cluster[c] > 0).collect();
    let identity = (last.revenue - 10.0 * last.total_flow).abs() <= 1e-9 * last.revenue;
    let highest = kept == vec![2, 3] && identity && rel(last.total_flow, 27.54) <= 0.05;

    let mut sweep = s.clone();
    sweep.pricing.price_set = Some(vec![2.0, 4.0, 6.0, 8.0, 10.0]);
    let levels = run(&sweep, Strategy::Progressive { dwell: 40 }, 200).unwrap().levels();
    let rev = |p: f64| levels.iter().find(|l| l.price == LinkPrice::Finite(p)).map_or(f64::NAN, |l| l.revenue);
    let (r6, r8, r10) = (rev(6.0), rev(8.0), rev(10.0));
    let sweet = r8 > r6 && r8 > r10;
    outcome(
        highest && sweet,
        format!(
            "price 10 keeps clusters {:?}, flow {:.2} (27.54 ±5%), revenue {:.2} = 10·flow: {identity}; progressive revenue 6/8/10 = {r6:.2}/{r8:.2}/{r10:.2}",
            kept.iter().map(|c| c + 1).collect::<Vec<_>>(),
            last.total_flow,
            last.revenue
        ),
    )
}

fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();

    let mut ok = true;
    for _ in 0..500 {
        let p = Patience {
            beta: rng.gen_range(0.1..4.0),
            weight: rng.gen_range(0.0..3.0),
            tolerance: rng.gen_range(0.5..10.0),
            ..Patience::default()
        };
        let bid = BidPrice::new(rng.gen_range(0.5..20.0)).unwrap();
        let lambda = rng.gen_range(0.1..20.0);
        let mut prev = 0.0;
        for t in 0..30 {
            let d = dissatisfaction(lambda, bid, t as f64, &p).unwrap();
            ok &= d >= prev;
            prev = d;
        }
    }
    if !ok {
        failures.push("dissatisfaction");
    }

    let (mut mono, mut cap) = (true, true);
    for _ in 0..300 {
        let mut market = random_single_link_market(&mut rng);
        let user = market.users.swap_remove(0);
        let params = UtilityParams {
            theta: rng.gen_range(0.2..10.0),
            valuation_scale: rng.gen_range(0.05..5.0),
            budget_elasticity: rng.gen_range(0.5..2.0),
            spend_cap: rng.gen_bool(0.5),
            ..UtilityParams::default()
        };
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let lambda = 0.05 + i as f64 * 0.075;
            let x = best_response(lambda, &user, &params).unwrap();
            mono &= x <= prev + 1e-6;
            prev = x;
            if params.spend_cap {
                cap &= x * lambda <= user.budget + 1e-9;
            }
        }
    }
    if !mono {
        failures.push("best-response monotonicity");
    }
    if !cap {
        failures.push("budget cap");
    }

    let (mut sum, mut scale) = (true, true);
    for _ in 0..500 {
        let n = rng.gen_range(1..6);
        let links: Vec<LinkId> = (0..n).map(LinkId).collect();
        let loads: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let bid = BidPrice::new(rng.gen_range(0.1..50.0)).unwrap();
        let w = weights_from_loads(&links, &loads);
        sum &= (distribute_bid(bid, &w, DistributionFormula::Normalized).shares.iter().sum::<f64>() - bid.value()).abs() <= 1e-9;
        let k = rng.gen_range(0.001..1000.0);
        let scaled: Vec<f64> = loads.iter().map(|l| l * k).collect();
        scale &= weights_from_loads(&links, &scaled).weights.iter().zip(&w.weights).all(|(a, b)| (a - b).abs() <= 1e-12);
    }
    if !sum {
        failures.push("share conservation");
    }
    if !scale {
        failures.push("weight scale-invariance");
    }

    let s = Scenario::table3();
    let a = run(&s, Strategy::Micc { dwell: 2 }, s.horizon).unwrap();
    let b = run(&s, Strategy::Micc { dwell: 2 }, s.horizon).unwrap();
    let replayed = replay_states(&s, &a.events);
    let actual: Vec<_> = a.final_users.iter().map(|u| (u.id, u.state)).collect();
    if a.to_json() != b.to_json() || replayed != actual {
        failures.push("deterministic replay");
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "dissatisfaction, monotone best response, budget cap, share conservation, scale invariance, replay: all hold".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn ac9() -> Outcome {
    let (_, t3) = reference_tables().unwrap();
    let find = |label: &str| t3.rows.iter().find(|r| r.row.label == label && r.row.provenance == Provenance::Published).unwrap();
    let after = find("after");
    let plus4 = find("+4 new users");
    let a_ok = !after.consistent && after.issues.join(";").contains("26.45") && after.issues.join(";").contains("26.55");
    let p_ok = !plus4.consistent && plus4.issues.join(";").contains("228.04") && plus4.issues.join(";").contains("239.40");
    outcome(a_ok && p_ok, format!("after: {:?}; +4 new users: {:?}", after.issues, plus4.issues))
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar probes pass flags; only run on a plain invocation
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 9] =
        [("AC1", ac1), ("AC2", ac2), ("AC3", ac3), ("AC4", ac4), ("AC5", ac5), ("AC6", ac6), ("AC7", ac7), ("AC8", ac8), ("AC9", ac9)];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{name} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
