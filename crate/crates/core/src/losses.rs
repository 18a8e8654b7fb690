//! Loss families, subgradients, restorative checks and horizons.
//!
//! Every loss is evaluated on the effective response `r = y - f`, where `f` is an
//! optional base prediction (zero when absent). Univariate kinds take a length-one
//! parameter; the GLM kinds take a parameter of the same length as the feature vector.
//!
//! Subgradient ties are resolved deterministically:
//!
//! * quantile at `θ = r` returns `-τ`;
//! * absolute value at `θ = r` returns `0`;
//! * the L1 penalty contributes `0` in coordinates where `θ_i = 0`.

use serde::{Deserialize, Serialize};

use crate::vecops::{check_dim, dot, norm};
use crate::{Error, Result};

/// Loss family tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    /// `½ (r - θ)²`
    Squared,
    /// `|r - θ|`
    Absolute,
    /// Pinball loss `ρ_τ(r - θ)`.
    Quantile { tau: f64 },
    /// `-rθ + (b - a) log(1 + e^θ) + aθ`, for responses in `[a, b]`.
    GenLogistic { a: f64, b: f64 },
    /// `½ (r - x·θ)²`
    GlmLinear,
    /// Generalized logistic loss applied to `u = x·θ`.
    GlmLogistic { a: f64, b: f64 },
}

impl LossKind {
    pub fn is_glm(&self) -> bool {
        matches!(self, LossKind::GlmLinear | LossKind::GlmLogistic { .. })
    }
}

/// Penalty attached to a loss or applied through a proximal step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regularizer {
    #[default]
    None,
    /// `λ ‖θ‖₁`
    L1 { lambda: f64 },
    /// `(λ/2) ‖θ‖²`
    L2Half { lambda: f64 },
    /// `λ ‖θ‖²`
    L2Full { lambda: f64 },
    /// Characteristic function of the probability simplex.
    Simplex,
    /// Characteristic function of the Euclidean ball of the given radius.
    L2Ball { radius: f64 },
}

const SET_TOL: f64 = 1e-9;

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L1 { lambda }
            | Regularizer::L2Half { lambda }
            | Regularizer::L2Full { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "regularization strength must be finite and nonnegative, got {lambda}"
                    )));
                }
            }
            Regularizer::L2Ball { radius } => {
                if !(radius.is_finite() && radius > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
            }
            Regularizer::None | Regularizer::Simplex => {}
        }
        Ok(())
    }

    pub fn is_set_characteristic(&self) -> bool {
        matches!(self, Regularizer::Simplex | Regularizer::L2Ball { .. })
    }

    /// Penalty value; characteristic functions return `+∞` off their set.
    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L1 { lambda } => lambda * theta.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::L2Half { lambda } => 0.5 * lambda * dot(theta, theta),
            Regularizer::L2Full { lambda } => lambda * dot(theta, theta),
            Regularizer::Simplex => {
                let sum: f64 = theta.iter().sum();
                if theta.iter().all(|&v| v >= -SET_TOL) && (sum - 1.0).abs() <= SET_TOL {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::L2Ball { radius } => {
                if norm(theta) <= radius * (1.0 + SET_TOL) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Subgradient of a smooth or L1 penalty.
    pub fn subgradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Regularizer::None => Ok(vec![0.0; theta.len()]),
            Regularizer::L1 { lambda } => Ok(theta.iter().map(|&v| lambda * sign0(v)).collect()),
            Regularizer::L2Half { lambda } => Ok(theta.iter().map(|&v| lambda * v).collect()),
            Regularizer::L2Full { lambda } => Ok(theta.iter().map(|&v| 2.0 * lambda * v).collect()),
            Regularizer::Simplex | Regularizer::L2Ball { .. } => Err(Error::UseProx),
        }
    }
}

/// `sign(v)` with `sign(0) = 0`.
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
pub fn sigmoid(u: f64) -> f64 {
    if u <= 0.0 {
        let e = u.exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (-u).exp())
    }
}

/// `log(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// One round's loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossInstance {
    pub kind: LossKind,
    pub y: f64,
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub f: Option<f64>,
    #[serde(default)]
    pub reg: Regularizer,
}

impl LossInstance {
    fn plain(kind: LossKind, y: f64) -> Self {
        Self {
            kind,
            y,
            x: None,
            f: None,
            reg: Regularizer::None,
        }
    }

    pub fn squared(y: f64) -> Self {
        Self::plain(LossKind::Squared, y)
    }

    pub fn absolute(y: f64) -> Self {
        Self::plain(LossKind::Absolute, y)
    }

    pub fn quantile(tau: f64, y: f64) -> Self {
        Self::plain(LossKind::Quantile { tau }, y)
    }

    pub fn gen_logistic(a: f64, b: f64, y: f64) -> Self {
        Self::plain(LossKind::GenLogistic { a, b }, y)
    }

    pub fn glm_linear(x: Vec<f64>, y: f64) -> Self {
        Self {
            x: Some(x),
            ..Self::plain(LossKind::GlmLinear, y)
        }
    }

    pub fn glm_logistic(a: f64, b: f64, x: Vec<f64>, y: f64) -> Self {
        Self {
            x: Some(x),
            ..Self::plain(LossKind::GlmLogistic { a, b }, y)
        }
    }

    pub fn with_base(mut self, f: f64) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_reg(mut self, reg: Regularizer) -> Self {
        self.reg = reg;
        self
    }

    /// Effective response `y - f`.
    pub fn response(&self) -> f64 {
        self.y - self.f.unwrap_or(0.0)
    }

    /// Parameter dimension this loss expects.
    pub fn dim(&self) -> usize {
        match (&self.kind, &self.x) {
            (k, Some(x)) if k.is_glm() => x.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.y.is_finite() || !self.f.unwrap_or(0.0).is_finite() {
            return Err(Error::InvalidLoss("response must be finite".into()));
        }
        let r = self.response();
        match self.kind {
            LossKind::Quantile { tau } => {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(Error::InvalidLoss(format!("tau must lie in [0, 1], got {tau}")));
                }
            }
            LossKind::GenLogistic { a, b } | LossKind::GlmLogistic { a, b } => {
                if !(a < b) {
                    return Err(Error::InvalidLoss(format!("need a < b, got a = {a}, b = {b}")));
                }
                if r < a || r > b {
                    return Err(Error::InvalidLoss(format!(
                        "response {r} outside the range [{a}, {b}]"
                    )));
                }
            }
            LossKind::Squared | LossKind::Absolute | LossKind::GlmLinear => {}
        }
        if self.kind.is_glm() {
            match &self.x {
                None => return Err(Error::InvalidLoss("GLM loss requires a feature vector".into())),
                Some(x) if x.iter().any(|v| !v.is_finite()) => {
                    return Err(Error::InvalidLoss("feature vector has non-finite entries".into()))
                }
                Some(_) => {}
            }
        }
        self.reg.validate()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        self.validate()?;
        check_dim(self.dim(), theta.len())
    }

    /// The scalar argument the family acts on: `θ` or `x·θ`.
    fn linear_arg(&self, theta: &[f64]) -> f64 {
        match &self.x {
            Some(x) if self.kind.is_glm() => dot(x, theta),
            _ => theta[0],
        }
    }

    fn family_value(&self, u: f64) -> f64 {
        let r = self.response();
        match self.kind {
            LossKind::Squared | LossKind::GlmLinear => 0.5 * (r - u) * (r - u),
            LossKind::Absolute => (r - u).abs(),
            LossKind::Quantile { tau } => {
                let e = r - u;
                if e >= 0.0 {
                    tau * e
                } else {
                    (tau - 1.0) * e
                }
            }
            LossKind::GenLogistic { a, b } | LossKind::GlmLogistic { a, b } => {
                -r * u + (b - a) * softplus(u) + a * u
            }
        }
    }

    /// Derivative of the family in its scalar argument.
    fn family_derivative(&self, u: f64) -> f64 {
        let r = self.response();
        match self.kind {
            LossKind::Squared | LossKind::GlmLinear => u - r,
            LossKind::Absolute => sign0(u - r),
            LossKind::Quantile { tau } => {
                if u > r {
                    1.0 - tau
                } else {
                    -tau
                }
            }
            LossKind::GenLogistic { a, b } | LossKind::GlmLogistic { a, b } => {
                -r + (b - a) * sigmoid(u) + a
            }
        }
    }

    /// Loss value at `θ`, including the attached penalty.
    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        Ok(self.family_value(self.linear_arg(theta)) + self.reg.value(theta))
    }

    /// Subgradient of the unpenalized loss.
    pub fn loss_subgradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let d = self.family_derivative(self.linear_arg(theta));
        Ok(match &self.x {
            Some(x) if self.kind.is_glm() => x.iter().map(|v| v * d).collect(),
            _ => vec![d],
        })
    }

    /// Subgradient of loss plus penalty. Set-characteristic penalties contribute
    /// nothing here; they are enforced by the proximal step.
    pub fn subgradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.loss_subgradient(theta)?;
        if !self.reg.is_set_characteristic() {
            let gr = self.reg.subgradient(theta)?;
            crate::vecops::add_assign(&mut g, &gr);
        }
        Ok(g)
    }
}

/// Curvature function `φ` of the restorative condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Curvature {
    Zero,
    Constant { kappa: f64 },
    /// `φ(θ) = (η/2) ‖g(θ)‖²`
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestorativeSpec {
    pub horizon: f64,
    pub curvature: Curvature,
}

/// Whether `g(θ)·θ ≥ φ(θ)` holds at `θ`, or `θ` lies inside the horizon.
pub fn restorative_check(
    loss: &LossInstance,
    theta: &[f64],
    spec: &RestorativeSpec,
    eta: f64,
) -> Result<bool> {
    if !(spec.horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be nonnegative, got {}",
            spec.horizon
        )));
    }
    let g = loss.subgradient(theta)?;
    if norm(theta) <= spec.horizon {
        return Ok(true);
    }
    let phi = match spec.curvature {
        Curvature::Zero => 0.0,
        Curvature::Constant { kappa } => {
            if !(kappa >= 0.0) {
                return Err(Error::InvalidParameter(format!("kappa must be nonnegative, got {kappa}")));
            }
            kappa
        }
        Curvature::Quadratic => {
            if !(eta > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "quadratic curvature needs a positive step size, got {eta}"
                )));
            }
            0.5 * eta * dot(&g, &g)
        }
    };
    Ok(dot(&g, theta) >= phi)
}

pub fn horizon_quantile(y: f64) -> f64 {
    y.abs()
}

/// Smallest horizon for the generalized logistic loss at response `y`.
/// Returns `+∞` when `y` sits on an endpoint.
pub fn horizon_logistic(y: f64, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidParameter(format!("need a < b, got a = {a}, b = {b}")));
    }
    if y < a || y > b {
        return Err(Error::InvalidParameter(format!("y = {y} outside [{a}, {b}]")));
    }
    if y == a || y == b {
        return Ok(f64::INFINITY);
    }
    Ok(((y - a) / (b - y)).ln().abs())
}

/// Horizon for responses kept at least `ε` away from both endpoints.
pub fn horizon_logistic_bounded(epsilon: f64, a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidParameter(format!("need a < b, got a = {a}, b = {b}")));
    }
    if !(epsilon > 0.0 && epsilon < (b - a) / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, {}), got {epsilon}",
            (b - a) / 2.0
        )));
    }
    Ok(((b - a) / (2.0 * epsilon)).ln())
}

/// Largest value of [`horizon_logistic`] over `y ∈ [a + ε, b - ε]`: `log((b - a - ε)/ε)`.
pub fn horizon_logistic_margin(epsilon: f64, a: f64, b: f64) -> Result<f64> {
    horizon_logistic_bounded(epsilon, a, b)?;
    Ok(((b - a - epsilon) / epsilon).ln())
}

/// Horizon `|y|/δ` for squared loss with quadratic curvature.
pub fn horizon_squared(y: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(y.abs() / delta)
}

/// Largest step size `2(1-δ)/(1+δ)²` for which the squared-loss bias bound applies.
pub fn max_step_squared(delta: f64) -> f64 {
    2.0 * (1.0 - delta) / ((1.0 + delta) * (1.0 + delta))
}

const BISECTION_TOL: f64 = 1e-10;

/// Minimizer `u*` of `(σ(u) - 1) u`, the root of `u = 1 + e^{-u}`.
pub fn logistic_inner_argmin() -> f64 {
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid - 1.0 - (-mid).exp() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `inf_u g(u)·u` for the generalized logistic loss on `[a, b]`: `(b - a) c*`.
pub fn infimum_logistic_inner(a: f64, b: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::InvalidParameter(format!("need a < b, got a = {a}, b = {b}")));
    }
    let u = logistic_inner_argmin();
    let c_star = (sigmoid(u) - 1.0) * u;
    Ok((b - a) * c_star)
}

/// Lower bound on `(a1 u - a2 y) u` over all `u` and `|y| ≤ b`.
pub fn infimum_squared_inner(a1: f64, a2: f64, bound: f64) -> Result<f64> {
    if !(a1 > a2) {
        return Err(Error::InvalidParameter(format!("need a1 > a2, got a1 = {a1}, a2 = {a2}")));
    }
    let b2 = bound * bound;
    Ok(-(a1 - 2.0 * a2).powi(2) * b2 / (4.0 * (a1 - a2)) - a2 * b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eval_examples() {
        assert_eq!(LossInstance::squared(1.0).eval(&[0.0]).unwrap(), 0.5);
        assert_eq!(LossInstance::quantile(0.5, 0.0).eval(&[2.0]).unwrap(), 1.0);
        let v = LossInstance::gen_logistic(0.0, 1.0, 0.0).eval(&[0.0]).unwrap();
        assert!(close(v, std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(LossInstance::quantile(0.5, 1.0).subgradient(&[0.0]).unwrap(), vec![-0.5]);
        assert_eq!(LossInstance::quantile(0.3, 1.0).subgradient(&[1.0]).unwrap(), vec![-0.3]);
        assert_eq!(LossInstance::squared(1.0).subgradient(&[3.0]).unwrap(), vec![2.0]);
        let glm = LossInstance::glm_linear(vec![1.0, 0.0], 2.0);
        assert_eq!(glm.subgradient(&[0.0, 5.0]).unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn base_prediction_shifts_the_response() {
        let l = LossInstance::squared(3.0).with_base(1.0);
        assert_eq!(l.subgradient(&[0.5]).unwrap(), vec![-1.5]);
    }

    #[test]
    fn l1_penalty_is_zero_at_zero() {
        let l = LossInstance::glm_linear(vec![1.0, 1.0], 0.0).with_reg(Regularizer::L1 { lambda: 0.5 });
        let g = l.subgradient(&[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn invalid_losses_are_rejected() {
        assert!(matches!(
            LossInstance::quantile(1.5, 0.0).eval(&[0.0]),
            Err(Error::InvalidLoss(_))
        ));
        assert!(matches!(
            LossInstance::gen_logistic(1.0, 0.0, 0.5).eval(&[0.0]),
            Err(Error::InvalidLoss(_))
        ));
        assert!(matches!(
            LossInstance::gen_logistic(0.0, 1.0, 2.0).eval(&[0.0]),
            Err(Error::InvalidLoss(_))
        ));
        assert!(matches!(
            LossInstance::squared(0.0).eval(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut glm = LossInstance::glm_linear(vec![1.0], 0.0);
        glm.x = None;
        assert!(matches!(glm.eval(&[0.0]), Err(Error::InvalidLoss(_))));
        let glm = LossInstance::glm_linear(vec![f64::NAN], 0.0);
        assert!(matches!(glm.eval(&[0.0]), Err(Error::InvalidLoss(_))));
    }

    #[test]
    fn restorative_examples() {
        let q = LossInstance::quantile(0.5, 0.5);
        let zero = RestorativeSpec {
            horizon: 1.0,
            curvature: Curvature::Zero,
        };
        assert!(restorative_check(&q, &[2.0], &zero, 0.0).unwrap());

        let s = LossInstance::squared(1.0);
        let quad = RestorativeSpec {
            horizon: 0.1,
            curvature: Curvature::Quadratic,
        };
        // g = -0.5, g·θ = -0.25 while φ = 0.0625
        assert!(!restorative_check(&s, &[0.5], &quad, 0.5).unwrap());

        let inside = RestorativeSpec {
            horizon: 0.3,
            curvature: Curvature::Constant { kappa: 10.0 },
        };
        assert!(restorative_check(&s, &[0.0], &inside, 0.1).unwrap());
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon_quantile(-3.0), 3.0);
        assert_eq!(horizon_logistic(0.5, 0.0, 1.0).unwrap(), 0.0);
        assert!(close(
            horizon_logistic_bounded(0.05, 0.0, 1.0).unwrap(),
            10f64.ln(),
            1e-15
        ));
        assert_eq!(horizon_logistic(0.0, 0.0, 1.0).unwrap(), f64::INFINITY);
        assert!(horizon_logistic_bounded(0.6, 0.0, 1.0).is_err());
        assert!(horizon_logistic(2.0, 0.0, 1.0).is_err());
        let margin = horizon_logistic_margin(0.05, 0.0, 1.0).unwrap();
        assert!(close(margin, 19f64.ln(), 1e-15));
        assert!(close(horizon_logistic(0.05, 0.0, 1.0).unwrap(), margin, 1e-12));
    }

    /// Minimum of `(σ(u) - 1) u` over a dense grid on `[-20, 20]`.
    fn grid_min_logistic_inner() -> f64 {
        let n = 1_000_000;
        (0..=n)
            .map(|i| {
                let u = -20.0 + 40.0 * i as f64 / n as f64;
                (1.0 / (1.0 + (-u).exp()) - 1.0) * u
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn logistic_infimum_matches_grid_oracle() {
        let v = infimum_logistic_inner(0.0, 1.0).unwrap();
        assert!(close(v, -0.2784645, 5e-8));
        assert!(v >= -0.279);
        assert!(close(v, grid_min_logistic_inner(), 1e-6));
        assert!(close(infimum_logistic_inner(0.0, 2.0).unwrap(), -0.5569290, 1e-7));
        // pointwise value at u = 0 sits above the infimum
        let g0 = LossInstance::gen_logistic(0.0, 1.0, 0.5).subgradient(&[0.0]).unwrap()[0] * 0.0;
        assert!(g0 >= v);
    }

    /// `min a1 (u - y) u - a2 (u - y)²` over a grid of `u`, with `y ∈ {-b, b}`
    /// (the objective is concave in `y`).
    fn grid_min_squared_inner(a1: f64, a2: f64, b: f64) -> f64 {
        let n = 400_000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let u = -10.0 + 20.0 * i as f64 / n as f64;
            for y in [-b, b] {
                best = best.min(a1 * (u - y) * u - a2 * (u - y) * (u - y));
            }
        }
        best
    }

    #[test]
    fn squared_infimum_examples() {
        assert!(close(infimum_squared_inner(1.0, 0.0, 1.0).unwrap(), -0.25, 1e-15));
        assert!(close(grid_min_squared_inner(1.0, 0.0, 1.0), -0.25, 1e-8));
        assert_eq!(infimum_squared_inner(2.0, 1.0, 0.0).unwrap(), 0.0);
        let v = infimum_squared_inner(1.0, 0.25, 2.0).unwrap();
        assert!(close(v, -4.0 / 3.0, 1e-12));
        assert!(close(v, grid_min_squared_inner(1.0, 0.25, 2.0), 1e-6));
        assert!(infimum_squared_inner(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!(softplus(800.0).is_finite());
        assert!(close(softplus(-800.0), 0.0, 1e-300));
    }

    fn univariate_losses() -> impl Strategy<Value = LossInstance> {
        prop_oneof![
            (-5.0..5.0f64).prop_map(LossInstance::squared),
            (-5.0..5.0f64).prop_map(LossInstance::absolute),
            (0.0..=1.0f64, -5.0..5.0f64).prop_map(|(t, y)| LossInstance::quantile(t, y)),
            (-3.0..0.0f64, 0.1..3.0f64, 0.0..=1.0f64)
                .prop_map(|(a, w, s)| LossInstance::gen_logistic(a, a + w, a + s * w)),
        ]
    }

    fn glm_losses() -> impl Strategy<Value = LossInstance> {
        let x = prop::collection::vec(-2.0..2.0f64, 3);
        prop_oneof![
            (x.clone(), -3.0..3.0f64).prop_map(|(x, y)| LossInstance::glm_linear(x, y)),
            (x, 0.0..=1.0f64).prop_map(|(x, s)| LossInstance::glm_logistic(-1.0, 1.0, x, 2.0 * s - 1.0)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn finite_difference_matches_subgradient(loss in univariate_losses(), theta in -6.0..6.0f64) {
            let r = loss.response();
            prop_assume!((theta - r).abs() > 1e-3);
            let h = 1e-5;
            let fd = (loss.eval(&[theta + h]).unwrap() - loss.eval(&[theta - h]).unwrap()) / (2.0 * h);
            let g = loss.subgradient(&[theta]).unwrap()[0];
            prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0), "g = {g}, fd = {fd}");
        }

        #[test]
        fn glm_finite_difference(loss in glm_losses(), theta in prop::collection::vec(-2.0..2.0f64, 3)) {
            let g = loss.subgradient(&theta).unwrap();
            let h = 1e-5;
            for i in 0..3 {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (loss.eval(&p).unwrap() - loss.eval(&m).unwrap()) / (2.0 * h);
                prop_assert!((g[i] - fd).abs() <= 1e-6 * g[i].abs().max(1.0));
            }
        }

        #[test]
        fn subgradient_inequality(loss in univariate_losses(), theta in -6.0..6.0f64, z in -6.0..6.0f64) {
            let g = loss.subgradient(&[theta]).unwrap()[0];
            let lhs = loss.eval(&[z]).unwrap();
            let rhs = loss.eval(&[theta]).unwrap() + g * (z - theta);
            prop_assert!(lhs >= rhs - 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn subgradient_inequality_glm(
            loss in glm_losses(),
            theta in prop::collection::vec(-2.0..2.0f64, 3),
            z in prop::collection::vec(-2.0..2.0f64, 3),
        ) {
            let g = loss.subgradient(&theta).unwrap();
            let lhs = loss.eval(&z).unwrap();
            let step: Vec<f64> = z.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let rhs = loss.eval(&theta).unwrap() + dot(&g, &step);
            prop_assert!(lhs >= rhs - 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn quantile_horizon_is_restorative(tau in 0.0..=1.0f64, y in -10.0..10.0f64, positive in any::<bool>()) {
            let h = horizon_quantile(y);
            let theta = if positive { h + 1e-6 } else { -(h + 1e-6) };
            let spec = RestorativeSpec { horizon: h, curvature: Curvature::Zero };
            prop_assert!(restorative_check(&LossInstance::quantile(tau, y), &[theta], &spec, 0.1).unwrap());
        }

        #[test]
        fn logistic_horizon_is_restorative(a in -3.0..0.0f64, w in 0.1..3.0f64, s in 0.01..0.99f64, positive in any::<bool>()) {
            let b = a + w;
            let y = a + s * w;
            let h = horizon_logistic(y, a, b).unwrap();
            let theta = if positive { h + 1e-6 } else { -(h + 1e-6) };
            let spec = RestorativeSpec { horizon: h, curvature: Curvature::Zero };
            prop_assert!(restorative_check(&LossInstance::gen_logistic(a, b, y), &[theta], &spec, 0.1).unwrap());
        }

        #[test]
        fn margin_horizon_covers_interior(eps in 0.01..0.49f64, s in 0.0..=1.0f64, positive in any::<bool>()) {
            let y = eps + s * (1.0 - 2.0 * eps);
            let h = horizon_logistic_margin(eps, 0.0, 1.0).unwrap();
            prop_assert!(horizon_logistic(y, 0.0, 1.0).unwrap() <= h + 1e-12);
            let theta = if positive { h + 1e-6 } else { -(h + 1e-6) };
            let spec = RestorativeSpec { horizon: h, curvature: Curvature::Zero };
            prop_assert!(restorative_check(&LossInstance::gen_logistic(0.0, 1.0, y), &[theta], &spec, 0.1).unwrap());
        }

        #[test]
        fn squared_horizon_has_quadratic_curvature(y in -5.0..5.0f64, delta in 0.05..0.95f64, positive in any::<bool>()) {
            let eta = max_step_squared(delta);
            let h = horizon_squared(y, delta).unwrap();
            let theta = if positive { h + 1e-6 } else { -(h + 1e-6) };
            let spec = RestorativeSpec { horizon: h, curvature: Curvature::Quadratic };
            prop_assert!(restorative_check(&LossInstance::squared(y), &[theta], &spec, eta).unwrap());
        }

        #[test]
        fn logistic_infimum_scales_exactly(a in -5.0..5.0f64, w in 0.01..10.0f64) {
            let base = infimum_logistic_inner(0.0, 1.0).unwrap();
            prop_assert_eq!(infimum_logistic_inner(a, a + w).unwrap(), ((a + w) - a) * base);
        }
    }
}
