//! Fit the sigmoid steepness θ, valuation scale κ and budget elasticity γ so
//! best responses reproduce observed per-user rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{ClusterId, User, UserId};
use crate::scenario::Scenario;
use crate::utility::{best_response, UtilityError, UtilityParams};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no calibration targets")]
    NoTargets,
    #[error("unknown cluster `{0}`")]
    UnknownCluster(String),
    #[error("target rate must be positive, got {0}")]
    BadTarget(f64),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error("best fit misses a target by {:.2}% (bound {:.2}%)", .report.max_rel_error * 100.0, .bound * 100.0)]
    Failure { report: Box<CalibrationReport>, bound: f64 },
}

/// Observed rate at `price`: the sum of one user's rate from each listed
/// cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub price: f64,
    pub clusters: Vec<String>,
    pub rate: f64,
}

impl CalibrationTarget {
    pub fn new(price: f64, clusters: &[&str], rate: f64) -> Self {
        CalibrationTarget { price, clusters: clusters.iter().map(|c| c.to_string()).collect(), rate }
    }
}

/// The published five-cluster rates used for fitting, and the ones held out.
pub fn table1_targets() -> (Vec<CalibrationTarget>, Vec<CalibrationTarget>) {
    let fit = vec![
        CalibrationTarget::new(6.0, &["cluster1"], 1.49),
        CalibrationTarget::new(6.0, &["cluster2"], 2.42),
        CalibrationTarget::new(6.0, &["cluster3"], 2.89),
        // 27.54 total over five users each of clusters 3 and 4
        CalibrationTarget::new(10.0, &["cluster3", "cluster4"], 27.54 / 5.0),
    ];
    let holdout = vec![
        CalibrationTarget::new(5.0, &["cluster1"], 1.76),
        CalibrationTarget::new(5.0, &["cluster2"], 2.64),
        CalibrationTarget::new(5.0, &["cluster3"], 3.09),
    ];
    (fit, holdout)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub theta_range: (f64, f64),
    pub elasticity_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub theta_points: usize,
    pub elasticity_points: usize,
    pub scale_points: usize,
    /// Largest acceptable relative error on the fitted targets.
    pub bound: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            theta_range: (0.1, 20.0),
            elasticity_range: (0.5, 2.5),
            scale_range: (1e-2, 1e2),
            theta_points: 40,
            elasticity_points: 21,
            scale_points: 41,
            bound: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetFit {
    pub target: CalibrationTarget,
    pub predicted: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: UtilityParams,
    pub max_rel_error: f64,
    pub fits: Vec<TargetFit>,
    pub holdout: Vec<TargetFit>,
    pub holdout_max_rel_error: f64,
}

struct Prepared {
    price: f64,
    users: Vec<User>,
    rate: f64,
}

fn prepare(scenario: &Scenario, targets: &[CalibrationTarget]) -> Result<Vec<Prepared>, CalibrationError> {
    targets
        .iter()
        .map(|t| {
            if !(t.rate.is_finite() && t.rate > 0.0) {
                return Err(CalibrationError::BadTarget(t.rate));
            }
            let users = t
                .clusters
                .iter()
                .map(|label| {
                    let id = scenario.cluster_id(label).ok_or_else(|| CalibrationError::UnknownCluster(label.clone()))?;
                    Ok(scenario.clusters[id.index()].spawn(UserId(0), ClusterId(id.index())).expect("validated cluster"))
                })
                .collect::<Result<Vec<_>, CalibrationError>>()?;
            Ok(Prepared { price: t.price, users, rate: t.rate })
        })
        .collect()
}

fn predict(p: &Prepared, params: &UtilityParams) -> Result<f64, UtilityError> {
    p.users.iter().map(|u| best_response(p.price, u, params)).sum()
}

fn max_error(prepared: &[Prepared], params: &UtilityParams) -> f64 {
    prepared
        .iter()
        .map(|p| match predict(p, params) {
            Ok(x) => ((x - p.rate) / p.rate).abs(),
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

fn with(base: &UtilityParams, theta: f64, scale: f64, elasticity: f64) -> UtilityParams {
    UtilityParams { theta, valuation_scale: scale, budget_elasticity: elasticity, ..base.clone() }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn fits(prepared: &[Prepared], targets: &[CalibrationTarget], params: &UtilityParams) -> Result<Vec<TargetFit>, UtilityError> {
    prepared
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let predicted = predict(p, params)?;
            Ok(TargetFit { target: t.clone(), predicted, rel_error: ((predicted - t.rate) / t.rate).abs() })
        })
        .collect()
}

/// Grid search over (θ, γ, κ), then a pattern search from the best point.
/// The other utility settings (sigmoid variant, spend cap, ...) come from
/// the scenario. Fails when the best fit exceeds `cfg.bound`.
pub fn calibrate(
    scenario: &Scenario,
    targets: &[CalibrationTarget],
    holdout: &[CalibrationTarget],
    cfg: &CalibrationConfig,
) -> Result<CalibrationReport, CalibrationError> {
    if targets.is_empty() {
        return Err(CalibrationError::NoTargets);
    }
    let prepared = prepare(scenario, targets)?;
    let held = prepare(scenario, holdout)?;
    let base = scenario.utility.clone();

    let thetas = log_grid(cfg.theta_range.0, cfg.theta_range.1, cfg.theta_points);
    let gammas = lin_grid(cfg.elasticity_range.0, cfg.elasticity_range.1, cfg.elasticity_points);
    let kappas = log_grid(cfg.scale_range.0, cfg.scale_range.1, cfg.scale_points);
    let mut points = Vec::with_capacity(thetas.len() * gammas.len() * kappas.len());
    for &t in &thetas {
        for &g in &gammas {
            points.extend(kappas.iter().map(|&k| (t, k, g)));
        }
    }
    let (mut best_err, mut at) = points
        .par_iter()
        .map(|&(t, k, g)| (max_error(&prepared, &with(&base, t, k, g)), (t, k, g)))
        .reduce(
            || (f64::INFINITY, (0.0, 0.0, 0.0)),
            // first point wins ties so the result does not depend on scheduling
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );

    // pattern search: log steps on θ and κ, linear on γ
    let ratio = |lo: f64, hi: f64, n: usize| if n > 1 { (hi / lo).ln() / (n - 1) as f64 } else { 0.1 };
    let mut steps = [
        ratio(cfg.theta_range.0, cfg.theta_range.1, cfg.theta_points),
        ratio(cfg.scale_range.0, cfg.scale_range.1, cfg.scale_points),
        if cfg.elasticity_points > 1 {
            (cfg.elasticity_range.1 - cfg.elasticity_range.0) / (cfg.elasticity_points - 1) as f64
        } else {
            0.0
        },
    ];
    let mut rounds = 0;
    while steps.iter().any(|&s| s > 1e-7) && rounds < 2000 {
        rounds += 1;
        let mut improved = false;
        for dim in 0..3 {
            if steps[dim] == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let (t, k, g) = at;
                let cand = match dim {
                    0 => (t * (sign * steps[0]).exp(), k, g),
                    1 => (t, k * (sign * steps[1]).exp(), g),
                    _ => (t, k, g + sign * steps[2]),
                };
                let e = max_error(&prepared, &with(&base, cand.0, cand.1, cand.2));
                if e < best_err {
                    best_err = e;
                    at = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
        }
    }

    let params = with(&base, at.0, at.1, at.2);
    let fits_out = fits(&prepared, targets, &params)?;
    let holdout_out = fits(&held, holdout, &params)?;
    let report = CalibrationReport {
        max_rel_error: fits_out.iter().map(|f| f.rel_error).fold(0.0, f64::max),
        holdout_max_rel_error: holdout_out.iter().map(|f| f.rel_error).fold(0.0, f64::max),
        params,
        fits: fits_out,
        holdout: holdout_out,
    };
    if report.max_rel_error > cfg.bound {
        return Err(CalibrationError::Failure { report: Box::new(report), bound: cfg.bound });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_consistent_target() {
        let s = Scenario::table1();
        let user = s.clusters[1].spawn(UserId(0), ClusterId(1)).unwrap();
        let truth = UtilityParams { theta: 2.0, valuation_scale: 0.5, budget_elasticity: 1.5, ..s.utility.clone() };
        let rate = best_response(6.0, &user, &truth).unwrap();
        let cfg = CalibrationConfig { theta_points: 8, elasticity_points: 5, scale_points: 9, ..Default::default() };
        let r = calibrate(&s, &[CalibrationTarget::new(6.0, &["cluster2"], rate)], &[], &cfg).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn rejects_bad_targets() {
        let s = Scenario::table1();
        let cfg = CalibrationConfig::default();
        assert!(matches!(calibrate(&s, &[], &[], &cfg), Err(CalibrationError::NoTargets)));
        let t = CalibrationTarget::new(6.0, &["nope"], 1.0);
        assert!(matches!(calibrate(&s, &[t], &[], &cfg), Err(CalibrationError::UnknownCluster(_))));
    }

    #[test]
    fn impossible_targets_fail() {
        // more bandwidth at the higher price cannot be produced
        let s = Scenario::table1();
        let targets = [CalibrationTarget::new(2.0, &["cluster1"], 1.0), CalibrationTarget::new(8.0, &["cluster1"], 4.0)];
        let cfg = CalibrationConfig { theta_points: 6, elasticity_points: 3, scale_points: 6, ..Default::default() };
        assert!(matches!(calibrate(&s, &targets, &[], &cfg), Err(CalibrationError::Failure { .. })));
    }
}
