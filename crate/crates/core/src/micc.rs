//! Market-informed congestion control: pick the smallest declared bid price
//! that clears every link, instead of searching the whole price axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{link_loads, Market, MarketError, User, FEASIBILITY_EPS};
use crate::num::{run_subgradient_from, NumError, SolverConfig};
use crate::report::{fmt2, AllocationReport};
use crate::utility::UtilityError;

#[derive(Debug, Error)]
pub enum MiccError {
    #[error("bid set is empty")]
    EmptyBidSet,
    #[error("bid prices must be positive and finite, got {0}")]
    InvalidBid(f64),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Multiset of candidate prices, kept sorted ascending. Duplicates stay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidSet(Vec<f64>);

impl BidSet {
    pub fn new(prices: impl IntoIterator<Item = f64>) -> Result<Self, MiccError> {
        let mut v: Vec<f64> = prices.into_iter().collect();
        if let Some(&bad) = v.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(MiccError::InvalidBid(bad));
        }
        v.sort_by(f64::total_cmp);
        Ok(BidSet(v))
    }

    /// One entry per present user.
    pub fn from_users(users: &[User]) -> Self {
        let mut v: Vec<f64> = users.iter().filter(|u| u.is_present()).map(|u| u.bid_price().value()).collect();
        v.sort_by(f64::total_cmp);
        BidSet(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.0.last().copied()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "price", rename_all = "snake_case")]
pub enum MiccResult {
    Price(f64),
    /// No candidate clears every link.
    Unaffordable,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiccCase {
    /// The lowest candidate already clears.
    FeasibleAtMin,
    FeasibleAtInterior,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub index: usize,
    pub candidate: f64,
    /// Candidate after the λ_min floor.
    pub price: f64,
    pub link_loads: Vec<f64>,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiccOutcome {
    pub result: MiccResult,
    pub iterations: usize,
    pub case: MiccCase,
    /// Allocation at the chosen price, or at the last candidate tried.
    pub report: AllocationReport,
    pub trace: Vec<CandidateTrace>,
}

impl MiccOutcome {
    pub fn trace_csv(&self, market: &Market) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["candidate_index".to_string(), "price".to_string()];
        header.extend(market.topology.links().iter().map(|l| format!("load_{}", l.name)));
        header.push("feasible".into());
        w.write_record(&header)?;
        for c in &self.trace {
            let mut row = vec![c.index.to_string(), fmt2(c.price)];
            row.extend(c.link_loads.iter().map(|&l| fmt2(l)));
            row.push(c.feasible.to_string());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Demand and per-link load at a uniform price on the priced links.
pub fn evaluate_candidate(market: &Market, price: f64) -> Result<(Vec<f64>, Vec<f64>, bool), MiccError> {
    let prices = market.uniform_prices(price);
    let demand = market.demands(&prices)?;
    let loads = link_loads(&market.topology, &market.users, &demand)?;
    let feasible = loads
        .iter()
        .zip(market.topology.links())
        .all(|(&load, l)| load <= l.capacity + FEASIBILITY_EPS);
    Ok((demand, loads, feasible))
}

/// Walk the bids upward; the first one under which every link carries at
/// most its capacity wins. Each multiset entry costs one iteration.
pub fn micc_select(market: &Market, bids: &BidSet) -> Result<MiccOutcome, MiccError> {
    if bids.is_empty() {
        return Err(MiccError::EmptyBidSet);
    }
    let mut trace = Vec::with_capacity(bids.len());
    let mut last = None;
    for (index, &candidate) in bids.as_slice().iter().enumerate() {
        let price = candidate.max(market.lambda_min);
        let (demand, loads, feasible) = evaluate_candidate(market, price)?;
        trace.push(CandidateTrace { index, candidate, price, link_loads: loads, feasible });
        let prices = market.uniform_prices(price);
        if feasible {
            let report = AllocationReport::from_rates(market, &prices, &demand)?;
            let case = if index == 0 { MiccCase::FeasibleAtMin } else { MiccCase::FeasibleAtInterior };
            return Ok(MiccOutcome { result: MiccResult::Price(price), iterations: index + 1, case, report, trace });
        }
        last = Some((prices, demand));
    }
    let (prices, demand) = last.expect("bid set is non-empty");
    let report = AllocationReport::from_rates(market, &prices, &demand)?;
    Ok(MiccOutcome {
        result: MiccResult::Unaffordable,
        iterations: bids.len(),
        case: MiccCase::Infeasible,
        report,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum VerificationStatus {
    /// The subgradient price never ends above the MICC price.
    Holds,
    Violated,
    Inconclusive(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub lambda_hat_star: Option<f64>,
    pub lambda_star: Option<Vec<f64>>,
    pub micc_iterations: usize,
    pub subgradient_iterations: u64,
    /// Largest gap between `λ̂* − Σ Y^t` and the recorded iterate.
    pub reconstruction_error: f64,
    pub status: VerificationStatus,
    /// Effective steps `Y^t = λ^t − λ^{t+1}` per priced link.
    #[serde(skip)]
    pub steps: Vec<Vec<f64>>,
}

/// Seed the subgradient method at the MICC price and check that it settles
/// no higher (within `tol`) on every priced link.
pub fn verify_proposition1(
    market: &Market,
    bids: &BidSet,
    cfg: &SolverConfig,
    tol: f64,
) -> Result<VerificationRecord, MiccError> {
    let outcome = micc_select(market, bids)?;
    let mut record = VerificationRecord {
        lambda_hat_star: None,
        lambda_star: None,
        micc_iterations: outcome.iterations,
        subgradient_iterations: 0,
        reconstruction_error: 0.0,
        status: VerificationStatus::Inconclusive("no feasible candidate".into()),
        steps: Vec::new(),
    };
    let MiccResult::Price(hat) = outcome.result else {
        return Ok(record);
    };
    record.lambda_hat_star = Some(hat);
    let start = market.uniform_prices(hat);
    let run = match run_subgradient_from(market, cfg, &start) {
        Ok(run) => run,
        Err(NumError::NonConvergence(run)) => {
            record.subgradient_iterations = run.iterations;
            record.status = VerificationStatus::Inconclusive(format!(
                "subgradient did not converge within {} iterations",
                run.iterations
            ));
            return Ok(record);
        }
        Err(NumError::Utility(e)) => return Err(e.into()),
        Err(NumError::Market(e)) => return Err(e.into()),
        Err(e @ NumError::InitialPrices { .. }) => unreachable!("{e}"),
    };
    record.subgradient_iterations = run.iterations;
    let mut holds = true;
    for l in &market.priced_links {
        let state = &run.prices[l.index()];
        let mut iterates: Vec<f64> = state.history.iter().map(|h| h.lambda).collect();
        iterates.push(state.lambda);
        let y: Vec<f64> = iterates.windows(2).map(|w| w[0] - w[1]).collect();
        let mut acc = 0.0;
        for (t, yt) in y.iter().enumerate() {
            acc += yt;
            let err = (iterates[0] - acc - iterates[t + 1]).abs();
            record.reconstruction_error = record.reconstruction_error.max(err);
        }
        holds &= state.lambda <= hat + tol;
        record.steps.push(y);
    }
    record.lambda_star = Some(run.lambda_star);
    record.status = if holds { VerificationStatus::Holds } else { VerificationStatus::Violated };
    Ok(record)
}
