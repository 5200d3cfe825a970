//! Sigmoidal utility, the dissatisfaction penalty and a user's best response
//! to a route price.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{BidPrice, Patience, User};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("price must be positive and finite, got {0}")]
    NonPositivePrice(f64),
    #[error("price must be non-negative, got {0}")]
    NegativePrice(f64),
    #[error("rate must be non-negative and finite, got {0}")]
    InvalidRate(f64),
    #[error("elapsed time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("invalid utility parameters: {0}")]
    InvalidParams(String),
}

/// Where the sigmoid's inflection sits.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmoidVariant {
    /// `S(θx)`: inflection at zero, the sigmoid term is concave on x ≥ 0.
    PaperLiteral,
    /// `S(θ(x − c))` with `c` defaulting to the user's x*.
    #[default]
    CenteredSigmoid,
}

/// What a user maximises when choosing a rate.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseObjective {
    /// `κ·m^γ·S(·) − λx`: the sigmoid valued in money, scaled by budget.
    #[default]
    Valuation,
    /// `U(x, λ) − λx` with the utility exactly as defined by [`utility`].
    /// Its `m/(xλ)` term rewards tiny rates, so the maximiser sits near zero.
    NetUtility,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilityParams {
    pub theta: f64,
    /// Explicit centre for the centred sigmoid; `None` uses x*.
    pub center: Option<f64>,
    /// Weight on utility in the degraded-service objective.
    pub a: f64,
    /// Weight on dissatisfaction in the degraded-service objective.
    pub b: f64,
    pub variant: SigmoidVariant,
    pub objective: ResponseObjective,
    /// κ
    pub valuation_scale: f64,
    /// γ
    pub budget_elasticity: f64,
    /// Restrict best responses to `x·λ ≤ m`.
    pub spend_cap: bool,
}

impl Default for UtilityParams {
    fn default() -> Self {
        UtilityParams {
            theta: 2.0,
            center: None,
            a: 1.0,
            b: 1.0,
            variant: SigmoidVariant::CenteredSigmoid,
            objective: ResponseObjective::Valuation,
            valuation_scale: 1.0,
            budget_elasticity: 1.0,
            spend_cap: true,
        }
    }
}

impl UtilityParams {
    /// Parameters fitted to the published five-cluster experiment
    /// (`micc-sim calibrate` reproduces them).
    pub fn table1_calibrated() -> Self {
        UtilityParams {
            theta: 1.5137,
            variant: SigmoidVariant::PaperLiteral,
            valuation_scale: 2.5330,
            budget_elasticity: 1.8,
            spend_cap: false,
            ..UtilityParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), UtilityError> {
        let bad = |m: &str| Err(UtilityError::InvalidParams(m.to_string()));
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return bad("theta must be positive");
        }
        if let Some(c) = self.center {
            if !c.is_finite() {
                return bad("center must be finite");
            }
        }
        if !(self.a.is_finite() && self.a >= 0.0 && self.b.is_finite() && self.b >= 0.0) {
            return bad("a and b must be non-negative");
        }
        if !(self.valuation_scale.is_finite() && self.valuation_scale > 0.0) {
            return bad("valuation_scale must be positive");
        }
        if !self.budget_elasticity.is_finite() {
            return bad("budget_elasticity must be finite");
        }
        Ok(())
    }

    fn center_for(&self, user: &User) -> f64 {
        match self.variant {
            SigmoidVariant::PaperLiteral => 0.0,
            SigmoidVariant::CenteredSigmoid => self.center.unwrap_or(user.min_bandwidth),
        }
    }

    fn sigmoid_term(&self, x: f64, user: &User) -> f64 {
        sigmoid(self.theta * (x - self.center_for(user)))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_price(lambda: f64) -> Result<(), UtilityError> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(UtilityError::NonPositivePrice(lambda))
    }
}

fn check_rate(x: f64) -> Result<(), UtilityError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(UtilityError::InvalidRate(x))
    }
}

/// `U(x, λ) = S(θ(x − c)) + m / (max(x, ε)·λ)` with `ε = 1e-6·x*`.
pub fn utility(x: f64, lambda: f64, user: &User, params: &UtilityParams) -> Result<f64, UtilityError> {
    check_price(lambda)?;
    check_rate(x)?;
    let eps = 1e-6 * user.min_bandwidth;
    Ok(params.sigmoid_term(x, user) + user.budget / (x.max(eps) * lambda))
}

/// `δ = ((σ_w + λ̂/λ)·t/T)^β`.
pub fn dissatisfaction(
    lambda: f64,
    bid: BidPrice,
    t: f64,
    patience: &Patience,
) -> Result<f64, UtilityError> {
    check_price(lambda)?;
    if t.is_nan() || t < 0.0 {
        return Err(UtilityError::NegativeTime(t));
    }
    let base = (patience.weight + bid.value() / lambda) * t / patience.tolerance;
    Ok(base.powf(patience.beta))
}

/// `a·U − b·δ`: what a user under poor service weighs against leaving.
pub fn degraded_utility(
    x: f64,
    lambda: f64,
    t: f64,
    user: &User,
    params: &UtilityParams,
) -> Result<f64, UtilityError> {
    let u = utility(x, lambda, user, params)?;
    let d = dissatisfaction(lambda, user.bid_price(), t, &user.patience)?;
    Ok(params.a * u - params.b * d)
}

/// Utility with the dissatisfaction penalty applied whenever the rate does
/// not exceed x*.
pub fn extended_utility(
    x: f64,
    lambda: f64,
    t: f64,
    user: &User,
    params: &UtilityParams,
) -> Result<f64, UtilityError> {
    if x <= user.min_bandwidth {
        degraded_utility(x, lambda, t, user, params)
    } else {
        utility(x, lambda, user, params)
    }
}

/// The quantity a user maximises over x at price λ.
pub fn response_objective(x: f64, lambda: f64, user: &User, params: &UtilityParams) -> f64 {
    match params.objective {
        ResponseObjective::Valuation => {
            params.valuation_scale * user.budget.powf(params.budget_elasticity) * params.sigmoid_term(x, user)
                - lambda * x
        }
        ResponseObjective::NetUtility => {
            let eps = 1e-6 * user.min_bandwidth;
            params.sigmoid_term(x, user) + user.budget / (x.max(eps) * lambda) - lambda * x
        }
    }
}

const GRID: usize = 1000;
const TIE: f64 = 1e-12;

fn golden_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

fn pick_best(f: &dyn Fn(f64) -> f64, candidates: &[f64]) -> f64 {
    let mut best = (candidates[0], f(candidates[0]));
    for &x in &candidates[1..] {
        let v = f(x);
        let scale = v.abs().max(best.1.abs()).max(1.0);
        if v > best.1 + TIE * scale || ((v - best.1).abs() <= TIE * scale && x < best.0) {
            best = (x, v);
        }
    }
    best.0
}

/// The valuation objective has at most one interior local maximum, where
/// `Kθ·S(1−S) = λ` on the concave side of the sigmoid.
fn valuation_response(lambda: f64, upper: f64, user: &User, params: &UtilityParams) -> f64 {
    let k = params.valuation_scale * user.budget.powf(params.budget_elasticity);
    let f = |x: f64| response_objective(x, lambda, user, params);
    let r = 4.0 * lambda / (k * params.theta);
    let mut candidates = vec![0.0, upper];
    if r < 1.0 {
        let root = (1.0 - r).sqrt();
        let s_hi = 0.5 * (1.0 + root);
        let s_lo = 0.5 * r / (1.0 + root); // 1 − s_hi without cancellation
        let x = params.center_for(user) + (s_hi / s_lo).ln() / params.theta;
        if x.is_finite() {
            candidates.push(x.clamp(0.0, upper));
        }
    }
    pick_best(&f, &candidates)
}

/// Rate maximising [`response_objective`] over `[0, x_max]` (and `x·λ ≤ m`
/// when the spend cap is on). Ties go to the smaller rate; an infinite
/// price yields zero.
///
/// The valuation objective is solved in closed form. The net-utility
/// objective is searched on a grid of step `1e-3·x_max`, refining every
/// local maximum by golden-section search.
pub fn best_response(lambda: f64, user: &User, params: &UtilityParams) -> Result<f64, UtilityError> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(UtilityError::NegativePrice(lambda));
    }
    if lambda.is_infinite() {
        return Ok(0.0);
    }
    if params.objective == ResponseObjective::NetUtility && lambda == 0.0 {
        return Err(UtilityError::NonPositivePrice(lambda));
    }
    let x_max = user.max_bandwidth;
    let mut upper = x_max;
    if params.spend_cap && lambda > 0.0 {
        upper = upper.min(user.budget / lambda);
    }
    if upper <= 0.0 {
        return Ok(0.0);
    }
    if params.objective == ResponseObjective::Valuation {
        return Ok(valuation_response(lambda, upper, user, params));
    }
    Ok(grid_response(lambda, upper, user, params))
}

fn grid_response(lambda: f64, upper: f64, user: &User, params: &UtilityParams) -> f64 {
    let x_max = user.max_bandwidth;
    let f = |x: f64| response_objective(x, lambda, user, params);
    let h = x_max / GRID as f64;
    let mut xs: Vec<f64> = (0..=GRID).map(|i| i as f64 * h).take_while(|&x| x < upper).collect();
    xs.push(upper);
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let n = xs.len();
    let mut candidates = vec![xs[0], xs[n - 1]];
    for i in 1..n.saturating_sub(1) {
        if fs[i] >= fs[i - 1] && fs[i] >= fs[i + 1] {
            let (x, v) = golden_max(&f, xs[i - 1], xs[i + 1], 1e-10 * x_max);
            candidates.push(if v >= fs[i] { x } else { xs[i] });
        }
    }
    pick_best(&f, &candidates)
}
