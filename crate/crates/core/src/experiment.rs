//! Experiment plumbing behind the CLI: resolve a spec, run it, write the
//! report, trace and table files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{calibrate, table1_targets, CalibrationConfig, CalibrationError, CalibrationTarget};
use crate::market::{ClusterId, Market, Topology, User, UserId, UserState};
use crate::micc::{verify_proposition1, BidSet, MiccError, VerificationRecord, VerificationStatus};
use crate::multilink::DistributionFormula;
use crate::num::{run_subgradient, NumError, SolverConfig};
use crate::report::{fmt2, AllocationReport};
use crate::scenario::{Scenario, ScenarioError};
use crate::selfreg::{run, LevelSummary, LinkPrice, SimError, SimTrace, Strategy};
use crate::tables::{emit_paper_tables, published_table2, published_table3, CheckedTable, TableRow};
use crate::utility::{SigmoidVariant, UtilityParams};

/// Ticks each price is held in a sweep unless overridden.
pub const DEFAULT_SWEEP_DWELL: u32 = 40;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Micc(#[from] MiccError),
    #[error(transparent)]
    Num(NumError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Scenario(_) | ExperimentError::Spec(_) => 2,
            ExperimentError::NonConvergence(_) => 3,
            ExperimentError::Calibration(_) => 4,
            _ => 1,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Micc,
    Subgradient,
    Fixed,
    Highest,
    Progressive,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// One run walking the grid upward.
    #[default]
    Progressive,
    /// An independent fixed-price run per grid point.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Run(RunMode),
    Sweep(SweepKind),
    Verify,
    Calibrate,
    EmitTables,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Path to a scenario file, or a bundled name such as `table1`.
    pub scenario: Option<String>,
    pub mode: Mode,
    pub price: Option<f64>,
    pub price_grid: Option<Vec<f64>>,
    pub dwell: Option<u32>,
    pub horizon: Option<u64>,
    pub seed: u64,
    /// Randomised instances for `verify`.
    pub instances: usize,
    /// Calibration targets file for `calibrate`.
    pub targets: Option<PathBuf>,
    pub out: PathBuf,
    pub fidelity: Option<DistributionFormula>,
    pub utility: Option<SigmoidVariant>,
}

impl ExperimentSpec {
    pub fn new(mode: Mode, out: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            scenario: None,
            mode,
            price: None,
            price_grid: None,
            dwell: None,
            horizon: None,
            seed: 0,
            instances: 100,
            targets: None,
            out: out.into(),
            fidelity: None,
            utility: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    /// Human-readable digest for the terminal.
    pub summary: String,
}

/// `a:b:step` (inclusive) or a comma-separated list.
pub fn parse_price_grid(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(format!("expected a:b:step, got `{text}`"));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(format!("grid `{text}` needs step > 0 and b >= a"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| a + step * i as f64).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err("price grid is empty".into());
    }
    if let Some(bad) = grid.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(format!("grid prices must be positive, got {bad}"));
    }
    Ok(grid)
}

fn load_scenario(spec: &ExperimentSpec, fallback: Option<&str>) -> Result<Scenario, ExperimentError> {
    let name = spec.scenario.as_deref().or(fallback).ok_or_else(|| ExperimentError::Spec("--scenario is required".into()))?;
    let mut s = if Path::new(name).exists() {
        Scenario::load(name)?
    } else {
        Scenario::builtin(name).map_or_else(|| Scenario::load(name), Ok)?
    };
    if let Some(v) = spec.utility {
        s.utility.variant = v;
    }
    if let Some(f) = spec.fidelity {
        s.pricing.distribution = f;
    }
    if let Some(d) = spec.dwell {
        if d == 0 {
            return Err(ExperimentError::Spec("--dwell must be at least 1".into()));
        }
        s.pricing.dwell = d;
    }
    if let Some(h) = spec.horizon {
        if h == 0 {
            return Err(ExperimentError::Spec("--horizon must be at least 1".into()));
        }
        s.horizon = h;
    }
    Ok(s)
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.display().to_string(), source })?;
        Ok(Writer { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ExperimentError> {
        self.write(name, &(serde_json::to_string_pretty(value).expect("serialisable output") + "\n"))
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, ExperimentError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let mut out = Writer::new(&spec.out)?;
    let summary = match &spec.mode {
        Mode::Run(RunMode::Subgradient) => run_static_subgradient(spec, &mut out)?,
        Mode::Run(mode) => run_dynamic(spec, *mode, &mut out)?,
        Mode::Sweep(kind) => run_sweep(spec, *kind, &mut out)?,
        Mode::Verify => run_verify(spec, &mut out)?,
        Mode::Calibrate => run_calibrate(spec, &mut out)?,
        Mode::EmitTables => run_tables(&mut out)?,
    };
    Ok(ExperimentOutput { files: out.files, summary })
}

/// Allocation delivered at tick `index` of a trace.
pub fn tick_report(scenario: &Scenario, trace: &SimTrace, index: usize) -> Result<AllocationReport, ExperimentError> {
    let tick = &trace.ticks[index];
    let mut users = trace.final_users.clone();
    // users that had not arrived yet count as absent
    for u in &mut users {
        u.state = UserState::Discharged;
    }
    let mut rates = vec![0.0; users.len()];
    for t in &tick.users {
        // those discharged during the tick still delivered their rate
        users[t.id.index()].state = UserState::Active;
        rates[t.id.index()] = t.rate;
    }
    let market = scenario.market_with(users);
    let prices: Vec<f64> = tick.link_prices.iter().map(|p| p.value()).collect();
    AllocationReport::from_rates(&market, &prices, &rates).map_err(|e| ExperimentError::Sim(e.into()))
}

/// Allocation at the last tick of a trace.
pub fn final_report(scenario: &Scenario, trace: &SimTrace) -> Result<AllocationReport, ExperimentError> {
    tick_report(scenario, trace, trace.ticks.len() - 1)
}

/// First tick at the final prices whose demand was served without
/// throttling; the last tick if there is none.
pub fn settled_tick(trace: &SimTrace) -> usize {
    let last = &trace.last().link_prices;
    let from = trace.ticks.iter().rposition(|t| &t.link_prices != last).map_or(0, |i| i + 1);
    (from..trace.ticks.len())
        .find(|&i| trace.ticks[i].demand_loads == trace.ticks[i].link_loads)
        .unwrap_or(trace.ticks.len() - 1)
}

fn strategy_for(spec: &ExperimentSpec, scenario: &mut Scenario, mode: RunMode) -> Result<Strategy, ExperimentError> {
    if let Some(grid) = &spec.price_grid {
        scenario.pricing.price_set = Some(grid.clone());
    }
    let dwell = scenario.pricing.dwell;
    Ok(match mode {
        RunMode::Micc => Strategy::Micc { dwell },
        RunMode::Progressive => Strategy::Progressive { dwell },
        RunMode::Highest => Strategy::Fixed { price: scenario.bid_set().max().expect("non-empty bid set") },
        RunMode::Fixed => Strategy::Fixed {
            price: spec
                .price
                .or(scenario.pricing.price)
                .ok_or_else(|| ExperimentError::Spec("fixed mode needs --price".into()))?,
        },
        RunMode::Subgradient => Strategy::Subgradient { step: scenario.pricing.step },
    })
}

fn run_dynamic(spec: &ExperimentSpec, mode: RunMode, out: &mut Writer) -> Result<String, ExperimentError> {
    let mut scenario = load_scenario(spec, None)?;
    let strategy = strategy_for(spec, &mut scenario, mode)?;
    let trace = run(&scenario, strategy, scenario.horizon)?;
    // MICC reports the allocation at the price it selected; later churn is
    // in the trace and in final_report.*
    let settled = settled_tick(&trace);
    let report = match mode {
        RunMode::Micc => tick_report(&scenario, &trace, settled)?,
        _ => final_report(&scenario, &trace)?,
    };
    out.json("report.json", &report)?;
    out.write("report.csv", &report.to_csv()?)?;
    if mode == RunMode::Micc {
        let fin = final_report(&scenario, &trace)?;
        out.json("final_report.json", &fin)?;
        out.write("final_report.csv", &fin.to_csv()?)?;
    }
    out.write("trace.json", &(trace.to_json() + "\n"))?;
    out.write("trace.csv", &trace.summary_csv()?)?;
    out.write("candidates.csv", &trace.candidate_csv()?)?;
    let prices: Vec<String> = trace
        .priced_links
        .iter()
        .map(|l| format!("{}={}", trace.links[l.index()], fmt2(trace.last().link_prices[l.index()].value())))
        .collect();
    Ok(format!(
        "{} on {}: {} ticks, price {} from tick {}, total flow {}, revenue {}",
        trace.strategy.label(),
        scenario.name,
        trace.ticks.len(),
        prices.join(" "),
        trace.ticks[settled].tick,
        fmt2(report.total_flow),
        fmt2(report.revenue)
    ))
}

fn run_static_subgradient(spec: &ExperimentSpec, out: &mut Writer) -> Result<String, ExperimentError> {
    let scenario = load_scenario(spec, None)?;
    let market = scenario.market();
    let cfg = SolverConfig { step: scenario.pricing.step, ..SolverConfig::default() };
    let (run, converged) = match run_subgradient(&market, &cfg) {
        Ok(run) => (run, true),
        Err(NumError::NonConvergence(run)) => (*run, false),
        Err(e) => return Err(ExperimentError::Num(e)),
    };
    out.json("report.json", &run.report)?;
    out.write("report.csv", &run.report.to_csv()?)?;
    out.write("history.csv", &run.history_csv(&market)?)?;
    let prices: Vec<String> = run.lambda_star.iter().map(|&p| fmt2(p)).collect();
    if !converged {
        return Err(ExperimentError::NonConvergence(format!(
            "subgradient did not converge within {} iterations (last prices {})",
            run.iterations,
            prices.join(" ")
        )));
    }
    Ok(format!(
        "subgradient converged after {} iterations: prices {}, total flow {}, revenue {}",
        run.iterations,
        prices.join(" "),
        fmt2(run.report.total_flow),
        fmt2(run.report.revenue)
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub price: f64,
    /// `ok`, or `not_reached` when the run never got to this price.
    pub status: String,
    pub level: Option<LevelSummary>,
}

fn run_sweep(spec: &ExperimentSpec, kind: SweepKind, out: &mut Writer) -> Result<String, ExperimentError> {
    let mut scenario = load_scenario(spec, None)?;
    let grid: Vec<f64> = match &spec.price_grid {
        Some(g) => g.clone(),
        None => {
            let mut g = scenario.bid_set().as_slice().to_vec();
            g.dedup();
            g
        }
    };
    let dwell = spec.dwell.unwrap_or(DEFAULT_SWEEP_DWELL);
    let horizon = spec.horizon.unwrap_or(dwell as u64 * grid.len() as u64);
    let rows: Vec<SweepRow> = match kind {
        SweepKind::Progressive => {
            scenario.pricing.price_set = Some(grid.clone());
            let trace = run(&scenario, Strategy::Progressive { dwell }, horizon)?;
            let levels = trace.levels();
            grid.iter()
                .map(|&p| {
                    let level = levels.iter().find(|l| l.price == LinkPrice::Finite(p.max(scenario.pricing.lambda_min)));
                    SweepRow {
                        price: p,
                        status: if level.is_some() { "ok" } else { "not_reached" }.into(),
                        level: level.cloned(),
                    }
                })
                .collect()
        }
        SweepKind::Fixed => grid
            .par_iter()
            .map(|&p| {
                let trace = run(&scenario, Strategy::Fixed { price: p }, horizon)?;
                let level = trace.levels().pop();
                Ok(SweepRow { price: p, status: "ok".into(), level })
            })
            .collect::<Result<Vec<_>, SimError>>()?,
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["price", "status", "revenue", "total_flow", "feasible", "last_tick"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(scenario.clusters.iter().map(|c| format!("active_{}", c.label)));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![fmt2(r.price), r.status.clone()];
        match &r.level {
            Some(l) => {
                rec.extend([fmt2(l.revenue), fmt2(l.total_flow), l.feasible.to_string(), l.last_tick.to_string()]);
                rec.extend(l.active_by_cluster.iter().map(|n| n.to_string()));
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 4 + scenario.clusters.len())),
        }
        w.write_record(&rec)?;
    }
    out.write("sweep.csv", &finish_csv(w)?)?;
    out.json("sweep.json", &rows)?;
    let best = rows
        .iter()
        .filter_map(|r| r.level.as_ref().map(|l| (r.price, l.revenue)))
        .fold(None, |acc: Option<(f64, f64)>, x| match acc {
            Some(a) if a.1 >= x.1 => Some(a),
            _ => Some(x),
        });
    Ok(match best {
        Some((p, rev)) => format!("{} grid prices; highest revenue {} at price {}", rows.len(), fmt2(rev), fmt2(p)),
        None => format!("{} grid prices; none reached", rows.len()),
    })
}

/// A single-link market with 3–25 users, capacity 10–100 and bids 1–20
/// (multiples of 0.5, so duplicates are common).
pub fn random_single_link_market(rng: &mut impl Rng) -> Market {
    let n = rng.gen_range(3..=25);
    let capacity = rng.gen_range(10.0..=100.0);
    let topology = Topology::single_link(capacity).expect("positive capacity");
    let users = (0..n)
        .map(|i| {
            let bid = (rng.gen_range(2.0..=40.0_f64)).round() / 2.0;
            let x_star = rng.gen_range(0.5..=5.0);
            User::new(UserId(i), ClusterId(0), bid * x_star, x_star, crate::market::RouteId(0)).expect("valid user")
        })
        .collect();
    Market::new(topology, users, UtilityParams::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyInstance {
    pub instance: usize,
    pub users: usize,
    pub capacity: f64,
    pub record: VerificationRecord,
}

/// Subgradient-vs-MICC records for `count` random instances derived from `seed`.
pub fn verify_random(seed: u64, count: usize, cfg: &SolverConfig, tol: f64) -> Result<Vec<VerifyInstance>, MiccError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let market = random_single_link_market(&mut rng);
            let record = verify_proposition1(&market, &BidSet::from_users(&market.users), cfg, tol)?;
            Ok(VerifyInstance { instance: i, users: market.users.len(), capacity: market.capacities()[0], record })
        })
        .collect()
}

fn run_verify(spec: &ExperimentSpec, out: &mut Writer) -> Result<String, ExperimentError> {
    let cfg = SolverConfig::default();
    let tol = 1e-6;
    let mut instances = Vec::new();
    if spec.scenario.is_some() {
        let scenario = load_scenario(spec, None)?;
        let market = scenario.market();
        let record = verify_proposition1(&market, &scenario.bid_set(), &cfg, tol)?;
        instances.push(VerifyInstance {
            instance: 0,
            users: market.users.len(),
            capacity: market.capacities().iter().cloned().fold(f64::INFINITY, f64::min),
            record,
        });
    }
    let offset = instances.len();
    for mut v in verify_random(spec.seed, spec.instances, &cfg, tol)? {
        v.instance += offset;
        instances.push(v);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance", "users", "capacity", "lambda_hat", "lambda_star", "status", "subgradient_iterations"])?;
    let (mut holds, mut violated, mut inconclusive) = (0, 0, 0);
    for v in &instances {
        let status = match &v.record.status {
            VerificationStatus::Holds => {
                holds += 1;
                "holds"
            }
            VerificationStatus::Violated => {
                violated += 1;
                "violated"
            }
            VerificationStatus::Inconclusive(_) => {
                inconclusive += 1;
                "inconclusive"
            }
        };
        let star = v.record.lambda_star.as_ref().map(|l| l.iter().map(|&p| format!("{p:.6}")).collect::<Vec<_>>().join(" "));
        w.write_record([
            v.instance.to_string(),
            v.users.to_string(),
            fmt2(v.capacity),
            v.record.lambda_hat_star.map(fmt2).unwrap_or_default(),
            star.unwrap_or_default(),
            status.to_string(),
            v.record.subgradient_iterations.to_string(),
        ])?;
    }
    out.write("verification.csv", &finish_csv(w)?)?;
    out.json("verification.json", &instances)?;
    Ok(format!("{} instances: {holds} hold, {violated} violated, {inconclusive} inconclusive", instances.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsFile {
    pub fit: Vec<CalibrationTarget>,
    #[serde(default)]
    pub holdout: Vec<CalibrationTarget>,
}

fn run_calibrate(spec: &ExperimentSpec, out: &mut Writer) -> Result<String, ExperimentError> {
    let scenario = load_scenario(spec, Some("table1"))?;
    let (fit, holdout) = match &spec.targets {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
            let t: TargetsFile = serde_json::from_str(&text)
                .map_err(|source| ScenarioError::Parse { origin: path.display().to_string(), source })?;
            (t.fit, t.holdout)
        }
        None => table1_targets(),
    };
    match calibrate(&scenario, &fit, &holdout, &CalibrationConfig::default()) {
        Ok(report) => {
            out.json("calibration.json", &report)?;
            let mut fitted = scenario.clone();
            fitted.utility = report.params.clone();
            out.write("calibrated_scenario.json", &(fitted.to_json_string() + "\n"))?;
            Ok(format!(
                "theta {:.4}, scale {:.4}, elasticity {:.4}: max error {:.2}% (held out {:.2}%)",
                report.params.theta,
                report.params.valuation_scale,
                report.params.budget_elasticity,
                report.max_rel_error * 100.0,
                report.holdout_max_rel_error * 100.0
            ))
        }
        Err(CalibrationError::Failure { report, bound }) => {
            out.json("calibration.json", &report)?;
            Err(CalibrationError::Failure { report, bound }.into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Published and simulated versions of the price-5/6 and before/after tables.
pub fn reference_tables() -> Result<(CheckedTable, CheckedTable), ExperimentError> {
    let t1 = Scenario::table1();
    let labels: Vec<String> = t1.clusters.iter().map(|c| c.label.clone()).collect();
    let core = t1.restrict_clusters(&["cluster1", "cluster2", "cluster3"])?;
    let mut rows2 = published_table2();
    for price in [5.0, 6.0] {
        let trace = run(&core, Strategy::Fixed { price }, 1)?;
        let mut row = TableRow::from_tick(&format!("price={price}"), price, trace.last(), core.clusters.len());
        row.rates.resize(labels.len(), 0.0);
        row.counts.resize(labels.len(), 0);
        rows2.push(row);
    }
    let table2 = emit_paper_tables("table2", &labels, rows2);

    let t3 = Scenario::table3();
    let labels3: Vec<String> = t3.clusters.iter().map(|c| c.label.clone()).collect();
    let arrival = t3.arrivals.first().map(|a| a.tick).unwrap_or(t3.horizon + 1);
    let trace = run(&t3, Strategy::Fixed { price: 6.0 }, t3.horizon)?;
    let n = t3.clusters.len();
    let widen = |mut r: TableRow| {
        r.rates.resize(n, 0.0);
        r.counts.resize(n, 0);
        r
    };
    let mut rows3: Vec<TableRow> = published_table3().into_iter().map(widen).collect();
    let settled = trace.ticks.iter().find(|t| t.feasible && t.total_flow > 0.0 && t.demand_loads == t.post_demand_loads);
    if let Some(t) = settled {
        rows3.push(TableRow::from_tick("before", 6.0, t, n));
    }
    if let Some(t) = trace.ticks.iter().rev().find(|t| t.tick < arrival) {
        rows3.push(TableRow::from_tick("after", 6.0, t, n));
    }
    if arrival <= t3.horizon {
        rows3.push(TableRow::from_tick("+4 new users", 6.0, trace.last(), n));
    }
    let table3 = emit_paper_tables("table3", &labels3, rows3);
    Ok((table2, table3))
}

fn run_tables(out: &mut Writer) -> Result<String, ExperimentError> {
    let (t2, t3) = reference_tables()?;
    out.write("table2.csv", &t2.to_csv()?)?;
    out.write("table3.csv", &t3.to_csv()?)?;
    out.json("tables.json", &[&t2, &t3])?;
    let flagged: Vec<String> = [&t2, &t3]
        .iter()
        .flat_map(|t| t.rows.iter().filter(|r| !r.consistent).map(move |r| format!("{}/{}", t.title, r.row.label)))
        .collect();
    Ok(format!("{} inconsistent rows: {}", flagged.len(), flagged.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_grid_forms() {
        assert_eq!(parse_price_grid("2:10:2").unwrap(), vec![2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(parse_price_grid("5,6").unwrap(), vec![5.0, 6.0]);
        assert_eq!(parse_price_grid("1:1.3:0.1").unwrap().len(), 4);
        assert!(parse_price_grid("2:1:1").is_err());
        assert!(parse_price_grid("2:4:0").is_err());
        assert!(parse_price_grid("a").is_err());
        assert!(parse_price_grid("0,1").is_err());
    }

    #[test]
    fn random_markets_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = random_single_link_market(&mut rng);
            assert!((3..=25).contains(&m.users.len()));
            assert!((10.0..=100.0).contains(&m.capacities()[0]));
            assert!(m.users.iter().all(|u| (1.0..=20.0).contains(&u.bid_price().value())));
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExperimentError::Spec("x".into()).exit_code(), 2);
        assert_eq!(ExperimentError::NonConvergence("x".into()).exit_code(), 3);
        assert_eq!(ExperimentError::Calibration(CalibrationError::NoTargets).exit_code(), 4);
    }

    #[test]
    fn tables_flag_known_rows() {
        let (t2, t3) = reference_tables().unwrap();
        assert!(t2.rows.iter().all(|r| r.consistent));
        let bad: Vec<&str> = t3.rows.iter().filter(|r| !r.consistent).map(|r| r.row.label.as_str()).collect();
        assert_eq!(bad, vec!["after", "+4 new users"]);
    }
}
