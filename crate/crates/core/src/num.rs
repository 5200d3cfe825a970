//! Dual subgradient pricing: one shadow price per link, users answer the sum
//! of prices along their route.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{link_loads, Market, MarketError};
use crate::report::AllocationReport;
use crate::utility::UtilityError;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    #[default]
    Constant,
    /// σ0 / (1 + t)
    Diminishing,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPolicy {
    #[serde(default)]
    pub kind: StepKind,
    pub sigma0: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy { kind: StepKind::Constant, sigma0: 0.01 }
    }
}

impl StepPolicy {
    pub fn size(&self, t: u64) -> f64 {
        match self.kind {
            StepKind::Constant => self.sigma0,
            StepKind::Diminishing => self.sigma0 / (1.0 + t as f64),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: u64,
    pub lambda: f64,
    pub aggregate_rate: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceState {
    pub lambda: f64,
    pub lambda_min: f64,
    pub iteration: u64,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
}

impl PriceState {
    pub fn new(lambda_min: f64) -> Self {
        PriceState::starting_at(lambda_min, lambda_min)
    }

    pub fn starting_at(lambda: f64, lambda_min: f64) -> Self {
        PriceState { lambda: lambda.max(lambda_min), lambda_min, iteration: 0, converged: false, history: Vec::new() }
    }

    /// `λ ← max(λ − σ_t·(C − Σx), λ_min)`, recording the iterate it replaces.
    pub fn update(&mut self, step: &StepPolicy, capacity: f64, aggregate_rate: f64) {
        let gap = capacity - aggregate_rate;
        self.history.push(HistoryEntry { t: self.iteration, lambda: self.lambda, aggregate_rate, gap });
        self.lambda = (self.lambda - step.size(self.iteration) * gap).max(self.lambda_min);
        self.iteration += 1;
    }
}

/// Functional form of [`PriceState::update`].
pub fn price_update(state: &PriceState, step: &StepPolicy, capacity: f64, aggregate_rate: f64) -> PriceState {
    let mut next = state.clone();
    next.update(step, capacity, aggregate_rate);
    next
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step: StepPolicy,
    pub tol: f64,
    pub max_iters: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { step: StepPolicy::default(), tol: 1e-4, max_iters: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgradientRun {
    /// One state per link, with its full history.
    pub prices: Vec<PriceState>,
    pub lambda_star: Vec<f64>,
    pub report: AllocationReport,
    pub converged: bool,
    pub iterations: u64,
}

impl SubgradientRun {
    /// History of every link as CSV: `link,t,lambda,aggregate_rate,gap`.
    pub fn history_csv(&self, market: &Market) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["link", "t", "lambda", "aggregate_rate", "gap"])?;
        for (l, s) in market.topology.links().iter().zip(&self.prices) {
            for h in &s.history {
                w.serialize((&l.name, h.t, h.lambda, h.aggregate_rate, h.gap))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Error)]
pub enum NumError {
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("subgradient did not converge within {} iterations", .0.iterations)]
    NonConvergence(Box<SubgradientRun>),
    #[error("expected {expected} initial prices, got {got}")]
    InitialPrices { expected: usize, got: usize },
}

/// Solve from λ_min on every link.
pub fn run_subgradient(market: &Market, cfg: &SolverConfig) -> Result<SubgradientRun, NumError> {
    let start = vec![market.lambda_min; market.topology.links().len()];
    run_subgradient_from(market, cfg, &start)
}

/// Iterate until every priced link's price moves less than `tol` and the
/// link is either within `tol·C` of capacity or pinned at λ_min with spare
/// room. Unpriced links keep their initial price.
pub fn run_subgradient_from(market: &Market, cfg: &SolverConfig, initial: &[f64]) -> Result<SubgradientRun, NumError> {
    let n = market.topology.links().len();
    if initial.len() != n {
        return Err(NumError::InitialPrices { expected: n, got: initial.len() });
    }
    let caps = market.capacities();
    let mut states: Vec<PriceState> = initial.iter().map(|&l| PriceState::starting_at(l, market.lambda_min)).collect();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let prices: Vec<f64> = states.iter().map(|s| s.lambda).collect();
        let demand = market.demands(&prices)?;
        let loads = link_loads(&market.topology, &market.users, &demand)?;
        let mut settled = true;
        for (i, ((s, &c), &load)) in states.iter_mut().zip(&caps).zip(&loads).enumerate() {
            if !market.priced_links.iter().any(|l| l.index() == i) {
                continue;
            }
            let before = s.lambda;
            s.update(&cfg.step, c, load);
            let balanced = (load - c).abs() <= cfg.tol * c.max(1.0) || (s.lambda <= s.lambda_min && load <= c);
            settled &= (s.lambda - before).abs() < cfg.tol && balanced;
        }
        iterations += 1;
        if settled {
            converged = true;
            break;
        }
    }
    for s in &mut states {
        s.converged = converged;
    }
    let lambda_star: Vec<f64> = states.iter().map(|s| s.lambda).collect();
    let demand = market.demands(&lambda_star)?;
    let report = AllocationReport::from_rates(market, &lambda_star, &demand)?;
    let run = SubgradientRun { prices: states, lambda_star, report, converged, iterations };
    if converged {
        Ok(run)
    } else {
        Err(NumError::NonConvergence(Box::new(run)))
    }
}
