//! Equilibrium diagnostics over recorded trajectories.
//!
//! The central quantity is the prefix average gradient `(1/T) Σ_{t≤T} g_t(θ_t)`.
//! Alongside it this module evaluates the exact telescoping identities (constant step,
//! arbitrary steps, proximal mirror descent), the finite-sample bounds that control the
//! average gradient, regret against a best fixed parameter, and a sampled estimate of
//! no-move regret.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::descent::{MirrorMap, Trajectory};
use crate::losses::{LossInstance, LossKind, Regularizer};
use crate::vecops::{add_assign, axpy, check_dim, dot, norm};
use crate::{Error, Result};

/// Relative slack used when comparing a norm to its bound.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EquilibriumReport {
    pub prefix_avg_grad_norm: Vec<f64>,
    pub identity_residual: Vec<f64>,
    pub bound_series: Option<Vec<f64>>,
    pub satisfied: Option<Vec<bool>>,
}

/// Compact JSON view of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub steps: usize,
    pub final_avg_grad_norm: Option<f64>,
    pub max_identity_residual: Option<f64>,
    pub final_bound: Option<f64>,
    pub bound_satisfaction_fraction: Option<f64>,
}

pub fn satisfies(norm: f64, bound: f64) -> bool {
    norm <= bound * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE
}

impl EquilibriumReport {
    pub fn len(&self) -> usize {
        self.prefix_avg_grad_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix_avg_grad_norm.is_empty()
    }

    /// Attach a bound series and derive the satisfied flags.
    pub fn attach_bound(&mut self, bound: Vec<f64>) -> Result<()> {
        check_dim(self.len(), bound.len())?;
        let flags = self
            .prefix_avg_grad_norm
            .iter()
            .zip(&bound)
            .map(|(n, b)| satisfies(*n, *b))
            .collect();
        self.bound_series = Some(bound);
        self.satisfied = Some(flags);
        Ok(())
    }

    pub fn satisfaction_fraction(&self) -> Option<f64> {
        let flags = self.satisfied.as_ref()?;
        if flags.is_empty() {
            return None;
        }
        Some(flags.iter().filter(|s| **s).count() as f64 / flags.len() as f64)
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            steps: self.len(),
            final_avg_grad_norm: self.prefix_avg_grad_norm.last().copied(),
            max_identity_residual: self
                .identity_residual
                .iter()
                .copied()
                .reduce(f64::max),
            final_bound: self.bound_series.as_ref().and_then(|b| b.last().copied()),
            bound_satisfaction_fraction: self.satisfaction_fraction(),
        }
    }

    /// One row per prefix: `t, avg_grad_norm, identity_residual, bound, satisfied`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "avg_grad_norm", "identity_residual", "bound", "satisfied"])?;
        for i in 0..self.len() {
            let bound = self.bound_series.as_ref().map(|b| b[i].to_string()).unwrap_or_default();
            let sat = self.satisfied.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
            w.write_record([
                (i + 1).to_string(),
                self.prefix_avg_grad_norm[i].to_string(),
                self.identity_residual.get(i).map(f64::to_string).unwrap_or_default(),
                bound,
                sat,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Norms of the running averages of `grads`.
pub fn prefix_avg_grad_norms(grads: &[Vec<f64>]) -> Vec<f64> {
    let d = grads.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; d];
    grads
        .iter()
        .enumerate()
        .map(|(i, g)| {
            add_assign(&mut sum, g);
            norm(&sum) / (i + 1) as f64
        })
        .collect()
}

/// Average of all gradients.
pub fn mean_gradient(grads: &[Vec<f64>]) -> Vec<f64> {
    let d = grads.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; d];
    for g in grads {
        add_assign(&mut sum, g);
    }
    let n = grads.len().max(1) as f64;
    sum.iter().map(|s| s / n).collect()
}

/// Prefix average-gradient norms together with the identity residual that matches
/// the way the trajectory was produced.
pub fn avg_gradient(traj: &Trajectory) -> Result<EquilibriumReport> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let prefix_avg_grad_norm = prefix_avg_grad_norms(&traj.grads);
    let identity_residual = if traj.etas.contains(&0.0) {
        vec![f64::NAN; traj.len()]
    } else if traj.reg_subgrads.is_some() {
        identity_pmd(traj, None)?
    } else if traj.constant_eta().is_some() {
        identity_constant_step(traj)?
    } else {
        identity_decaying_step(traj)?
    };
    Ok(EquilibriumReport {
        prefix_avg_grad_norm,
        identity_residual,
        bound_series: None,
        satisfied: None,
    })
}

fn check_shape(traj: &Trajectory) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    if traj.thetas.len() != traj.len() + 1 {
        return Err(Error::MissingRecord("one iterate per round plus the final iterate"));
    }
    if traj.etas.len() != traj.len() {
        return Err(Error::MissingRecord("step sizes"));
    }
    Ok(())
}

/// `‖(1/T) Σ g_t − (θ_1 − θ_{T+1})/(ηT)‖` for every prefix.
pub fn identity_constant_step(traj: &Trajectory) -> Result<Vec<f64>> {
    check_shape(traj)?;
    let eta = traj.constant_eta().ok_or(Error::NonConstantSchedule)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter("identity needs a positive step size".into()));
    }
    let theta1 = &traj.thetas[0];
    let mut sum = vec![0.0; traj.dim()];
    let mut out = Vec::with_capacity(traj.len());
    for (i, g) in traj.grads.iter().enumerate() {
        add_assign(&mut sum, g);
        let n = (i + 1) as f64;
        let next = &traj.thetas[i + 1];
        let diff: Vec<f64> = (0..sum.len())
            .map(|k| sum[k] / n - (theta1[k] - next[k]) / (eta * n))
            .collect();
        out.push(norm(&diff));
    }
    Ok(out)
}

/// Residual of `(1/T) Σ g_t = (1/T) Σ Δ_t (θ_t − θ_{T+1})` with `Δ_t = 1/η_t − 1/η_{t−1}`.
pub fn identity_decaying_step(traj: &Trajectory) -> Result<Vec<f64>> {
    check_shape(traj)?;
    if let Some(bad) = traj.etas.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidParameter(format!("step sizes must be positive, got {bad}")));
    }
    let d = traj.dim();
    let mut grad_sum = vec![0.0; d];
    let mut weighted = vec![0.0; d];
    let mut delta_sum = 0.0;
    let mut prev_inv = 0.0;
    let mut out = Vec::with_capacity(traj.len());
    for (i, g) in traj.grads.iter().enumerate() {
        let inv = 1.0 / traj.etas[i];
        let delta = inv - prev_inv;
        prev_inv = inv;
        add_assign(&mut grad_sum, g);
        axpy(&mut weighted, delta, &traj.thetas[i]);
        delta_sum += delta;
        let n = (i + 1) as f64;
        let next = &traj.thetas[i + 1];
        let diff: Vec<f64> = (0..d)
            .map(|k| (grad_sum[k] - (weighted[k] - delta_sum * next[k])) / n)
            .collect();
        out.push(norm(&diff));
    }
    Ok(out)
}

/// Residual of the proximal mirror descent identity
/// `(1/T) Σ (g_t + g_r(θ_t)) = [∇Φ(θ_1) + η g_r(θ_1) − ∇Φ(θ_{T+1}) − η g_r(θ_{T+1})]/(ηT)`.
/// `g_r1` defaults to zero.
pub fn identity_pmd(traj: &Trajectory, g_r1: Option<&[f64]>) -> Result<Vec<f64>> {
    check_shape(traj)?;
    let eta = traj.constant_eta().ok_or(Error::NonConstantSchedule)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter("identity needs a positive step size".into()));
    }
    let d = traj.dim();
    let zeros = vec![vec![0.0; d]; traj.len()];
    let reg_subgrads = match (&traj.reg_subgrads, traj.mirror) {
        (Some(r), _) => r,
        (None, MirrorMap::Identity) => &zeros,
        (None, MirrorMap::NegativeEntropy) => return Err(Error::MissingRecord("regularizer subgradients")),
    };
    if reg_subgrads.len() != traj.len() {
        return Err(Error::MissingRecord("one regularizer subgradient per round"));
    }
    let gr1 = match g_r1 {
        Some(v) => {
            check_dim(d, v.len())?;
            v.to_vec()
        }
        None => vec![0.0; d],
    };
    let phi1 = traj.mirror.gradient(&traj.thetas[0]);
    let mut sum = vec![0.0; d];
    let mut out = Vec::with_capacity(traj.len());
    for (i, g) in traj.grads.iter().enumerate() {
        add_assign(&mut sum, g);
        let gr_t = if i == 0 { &gr1 } else { &reg_subgrads[i - 1] };
        add_assign(&mut sum, gr_t);
        let n = (i + 1) as f64;
        let phi_next = traj.mirror.gradient(&traj.thetas[i + 1]);
        let gr_next = &reg_subgrads[i];
        let diff: Vec<f64> = (0..d)
            .map(|k| {
                let rhs = (phi1[k] + eta * gr1[k] - phi_next[k] - eta * gr_next[k]) / (eta * n);
                sum[k] / n - rhs
            })
            .collect();
        out.push(norm(&diff));
    }
    Ok(out)
}

/// First prefix (1-based) whose residual exceeds `tol`.
pub fn first_violation(residuals: &[f64], tol: f64) -> Option<usize> {
    residuals.iter().position(|r| !(*r <= tol)).map(|i| i + 1)
}

/// Identifier of a bound display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundId {
    /// `(‖θ_1‖ + ‖θ_{T+1}‖)/(ηT)`
    GdAvgGrad,
    /// `(2/T) max_{t≤T+1}‖θ_t‖ Σ|Δ_t|`
    GdAvgGradLrt,
    /// `2 max_{t≤T+1}‖θ_t‖/(η_T T)`
    GdAvgGradDec,
    /// `2|θ_1|/(ηT) + L/T + h/(ηT)`
    ZeroCurv1d,
    /// `2‖θ_1‖/(ηT) + sqrt(L²/T + 2Lh/(ηT))`
    ZeroCurv,
    PosCurv,
    /// As [`BoundId::PosCurv`] with the local constant `L_T`.
    QuadCurv,
    /// `(2|θ_1| + η + b)/(ηT)`
    QuantileAvgGrad,
    /// `(η + b)/(ηT)`
    QuantileCoverage,
    /// `(2|θ_1| + bη(1 + 1/δ) + b/δ)/(ηT)`
    SquaredAvgGrad,
    /// `(bη(1 + 1/δ) + b/δ)/(ηT)`
    SquaredBias,
    /// `(2|θ_1| + (b−a)η + log((b−a)/(2ε)))/(ηT)`
    LogisticAvgGrad,
    /// `(2η + log(1/ε))/(ηT)`
    LogisticBias,
    SquaredGroupwise,
    LogisticGroupwise,
    GlmLinearAvgGrad,
    GlmLogisticAvgGrad,
    /// `(2‖θ_1‖)/(ηT) + L/T + C_2/(ληT) + λ√d` with `L = c(b−a) + λ√d`.
    LogisticLassoAvgGrad,
    /// `(2c + λ√d)/T + (1.116 + η(2c + λ√d)²)/(2ληT) + λ√d`
    LogisticLassoCovariance,
    LogisticLassoMultiaccuracy,
    /// `C_1/(ηT) + C_2/(√λ ηT) + C_3`
    SquaredRidgeAvgGrad,
    /// `bc/T + √C/(√λ ηT) + √(λC) + ληbc`
    SquaredRidgeCovariance,
    SquaredRidgeMultiaccuracy,
    /// `2|θ_1|/c / T^{1−α} + 2(L + h/c)/T^{1−α}`
    ZeroCurv1dLrt,
    /// `2‖θ_1‖/c / T^{1−α} + sqrt(Σ_{t≤T}(t^{−2α}L² + 2t^{−α}hL/c)/T^{2(1−α)})`
    ZeroCurvLrt,
    PosCurvLrt,
    QuadCurvLrt,
}

impl BoundId {
    pub const ALL: [BoundId; 27] = [
        BoundId::GdAvgGrad,
        BoundId::GdAvgGradLrt,
        BoundId::GdAvgGradDec,
        BoundId::ZeroCurv1d,
        BoundId::ZeroCurv,
        BoundId::PosCurv,
        BoundId::QuadCurv,
        BoundId::QuantileAvgGrad,
        BoundId::QuantileCoverage,
        BoundId::SquaredAvgGrad,
        BoundId::SquaredBias,
        BoundId::LogisticAvgGrad,
        BoundId::LogisticBias,
        BoundId::SquaredGroupwise,
        BoundId::LogisticGroupwise,
        BoundId::GlmLinearAvgGrad,
        BoundId::GlmLogisticAvgGrad,
        BoundId::LogisticLassoAvgGrad,
        BoundId::LogisticLassoCovariance,
        BoundId::LogisticLassoMultiaccuracy,
        BoundId::SquaredRidgeAvgGrad,
        BoundId::SquaredRidgeCovariance,
        BoundId::SquaredRidgeMultiaccuracy,
        BoundId::ZeroCurv1dLrt,
        BoundId::ZeroCurvLrt,
        BoundId::PosCurvLrt,
        BoundId::QuadCurvLrt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoundId::GdAvgGrad => "gd-avg-grad",
            BoundId::GdAvgGradLrt => "gd-avg-grad-lrt",
            BoundId::GdAvgGradDec => "gd-avg-grad-dec",
            BoundId::ZeroCurv1d => "zero-curv-1d",
            BoundId::ZeroCurv => "zero-curv",
            BoundId::PosCurv => "pos-curv",
            BoundId::QuadCurv => "quad-curv",
            BoundId::QuantileAvgGrad => "quantile-avg-grad",
            BoundId::QuantileCoverage => "quantile-coverage",
            BoundId::SquaredAvgGrad => "squared-avg-grad",
            BoundId::SquaredBias => "squared-bias",
            BoundId::LogisticAvgGrad => "logistic-avg-grad",
            BoundId::LogisticBias => "logistic-bias",
            BoundId::SquaredGroupwise => "squared-groupwise",
            BoundId::LogisticGroupwise => "logistic-groupwise",
            BoundId::GlmLinearAvgGrad => "glm-linear-avg-grad",
            BoundId::GlmLogisticAvgGrad => "glm-logistic-avg-grad",
            BoundId::LogisticLassoAvgGrad => "logistic-lasso-avg-grad",
            BoundId::LogisticLassoCovariance => "logistic-lasso-covariance",
            BoundId::LogisticLassoMultiaccuracy => "logistic-lasso-multiaccuracy",
            BoundId::SquaredRidgeAvgGrad => "squared-ridge-avg-grad",
            BoundId::SquaredRidgeCovariance => "squared-ridge-covariance",
            BoundId::SquaredRidgeMultiaccuracy => "squared-ridge-multiaccuracy",
            BoundId::ZeroCurv1dLrt => "zero-curv-1d-lrt",
            BoundId::ZeroCurvLrt => "zero-curv-lrt",
            BoundId::PosCurvLrt => "pos-curv-lrt",
            BoundId::QuadCurvLrt => "quad-curv-lrt",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownBound(s.to_string()))
    }
}

/// Constants consumed by the bound displays. Each display reads only what it needs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundParams {
    pub eta: Option<f64>,
    /// Lipschitz constant `L` (or the local constant `L_T`).
    pub lipschitz: Option<f64>,
    pub horizon: Option<f64>,
    /// Range endpoints of a generalized logistic response.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    /// Feature norm bound, or the step scale of `η_t = c t^{−α}` for the decaying displays.
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub dim: Option<f64>,
}

macro_rules! setter {
    ($name:ident) => {
        pub fn $name(mut self, v: f64) -> Self {
            self.$name = Some(v);
            self
        }
    };
}

impl BoundParams {
    pub fn new() -> Self {
        Self::default()
    }

    setter!(eta);
    setter!(lipschitz);
    setter!(horizon);
    setter!(a);
    setter!(b);
    setter!(delta);
    setter!(epsilon);
    setter!(c);
    setter!(alpha);
    setter!(lambda);
    setter!(dim);

    fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
        v.ok_or(Error::MissingConstant(name))
    }
}

/// Trajectory quantities at a given prefix length.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundContext {
    /// Prefix length `T` (or a group count `T_j`).
    pub t: usize,
    pub theta1_norm: f64,
    pub theta_next_norm: f64,
    /// `max_{s≤T+1} ‖θ_s‖`
    pub max_norm: f64,
    /// `Σ_{s≤T} |Δ_s|`
    pub sum_abs_delta: f64,
    /// `η_T`
    pub eta_t: f64,
}

/// `C_0(λ)` of the ridge-penalized squared loss.
pub fn ridge_c0(eta: f64, lambda: f64, b: f64, c: f64) -> f64 {
    let c2 = c * c;
    let b2 = b * b;
    let first = (1.0 - lambda * eta - eta * c2).powi(2) * b2 / (4.0 * (1.0 - lambda * eta - eta * c2 / 2.0));
    (first + eta * c2 * b2 / 2.0) / (1.0 - lambda * eta / 2.0)
}

fn check_ridge_step(eta: f64, lambda: f64, c: f64) -> Result<()> {
    if !(eta < 1.0 / (lambda + c * c / 2.0)) {
        return Err(Error::InvalidConfig(format!(
            "step size {eta} must be below 1/(λ + c²/2) = {}",
            1.0 / (lambda + c * c / 2.0)
        )));
    }
    Ok(())
}

fn zero_curv_lrt_sum(t: usize, alpha: f64, l: f64, h: f64, c: f64) -> f64 {
    (1..=t)
        .map(|s| {
            let s = s as f64;
            s.powf(-2.0 * alpha) * l * l + 2.0 * s.powf(-alpha) * h * l / c
        })
        .sum()
}

/// Right-hand side of a bound display at one prefix.
pub fn bound_at(id: BoundId, p: &BoundParams, ctx: &BoundContext) -> Result<f64> {
    use BoundParams as P;
    if ctx.t == 0 {
        return Err(Error::InvalidParameter("bounds are defined for T ≥ 1".into()));
    }
    let t = ctx.t as f64;
    let th1 = ctx.theta1_norm;
    let value = match id {
        BoundId::GdAvgGrad => {
            let eta = P::need(p.eta, "eta")?;
            (th1 + ctx.theta_next_norm) / (eta * t)
        }
        BoundId::GdAvgGradLrt => 2.0 / t * ctx.max_norm * ctx.sum_abs_delta,
        BoundId::GdAvgGradDec => 2.0 * ctx.max_norm / (ctx.eta_t * t),
        BoundId::ZeroCurv1d | BoundId::PosCurv | BoundId::QuadCurv => {
            let eta = P::need(p.eta, "eta")?;
            let l = P::need(p.lipschitz, "lipschitz")?;
            let h = P::need(p.horizon, "horizon")?;
            2.0 * th1 / (eta * t) + l / t + h / (eta * t)
        }
        BoundId::ZeroCurv => {
            let eta = P::need(p.eta, "eta")?;
            let l = P::need(p.lipschitz, "lipschitz")?;
            let h = P::need(p.horizon, "horizon")?;
            2.0 * th1 / (eta * t) + (l * l / t + 2.0 * l * h / (eta * t)).sqrt()
        }
        BoundId::QuantileAvgGrad => {
            let eta = P::need(p.eta, "eta")?;
            let b = P::need(p.b, "b")?;
            (2.0 * th1 + eta + b) / (eta * t)
        }
        BoundId::QuantileCoverage => {
            let eta = P::need(p.eta, "eta")?;
            let b = P::need(p.b, "b")?;
            (eta + b) / (eta * t)
        }
        BoundId::SquaredAvgGrad | BoundId::GlmLinearAvgGrad => {
            let eta = P::need(p.eta, "eta")?;
            let b = P::need(p.b, "b")?;
            let delta = P::need(p.delta, "delta")?;
            (2.0 * th1 + b * eta * (1.0 + 1.0 / delta) + b / delta) / (eta * t)
        }
        BoundId::SquaredBias | BoundId::SquaredGroupwise => {
            let eta = P::need(p.eta, "eta")?;
            let b = P::need(p.b, "b")?;
            let delta = P::need(p.delta, "delta")?;
            (b * eta * (1.0 + 1.0 / delta) + b / delta) / (eta * t)
        }
        BoundId::LogisticAvgGrad | BoundId::GlmLogisticAvgGrad => {
            let eta = P::need(p.eta, "eta")?;
            let a = P::need(p.a, "a")?;
            let b = P::need(p.b, "b")?;
            let eps = P::need(p.epsilon, "epsilon")?;
            (2.0 * th1 + (b - a) * eta + ((b - a) / (2.0 * eps)).ln()) / (eta * t)
        }
        BoundId::LogisticBias | BoundId::LogisticGroupwise => {
            let eta = P::need(p.eta, "eta")?;
            let eps = P::need(p.epsilon, "epsilon")?;
            (2.0 * eta + (1.0 / eps).ln()) / (eta * t)
        }
        BoundId::LogisticLassoAvgGrad => {
            let eta = P::need(p.eta, "eta")?;
            let a = P::need(p.a, "a")?;
            let b = P::need(p.b, "b")?;
            let c = P::need(p.c, "c")?;
            let lambda = P::need(p.lambda, "lambda")?;
            let d = P::need(p.dim, "dim")?;
            let l = c * (b - a) + lambda * d.sqrt();
            let c2 = 0.279 * (b - a) + eta * l * l / 2.0;
            2.0 * th1 / (eta * t) + l / t + c2 / (lambda * eta * t) + lambda * d.sqrt()
        }
        BoundId::LogisticLassoCovariance | BoundId::LogisticLassoMultiaccuracy => {
            let eta = P::need(p.eta, "eta")?;
            let c = P::need(p.c, "c")?;
            let lambda = P::need(p.lambda, "lambda")?;
            let d = P::need(p.dim, "dim")?;
            let l = 2.0 * c + lambda * d.sqrt();
            l / t + (1.116 + eta * l * l) / (2.0 * lambda * eta * t) + lambda * d.sqrt()
        }
        BoundId::SquaredRidgeAvgGrad => {
            let eta = P::need(p.eta, "eta")?;
            let b = P::need(p.b, "b")?;
            let c = P::need(p.c, "c")?;
            let lambda = P::need(p.lambda, "lambda")?;
            check_ridge_step(eta, lambda, c)?;
            let c0 = ridge_c0(eta, lambda, b, c);
            let c1 = 2.0 * th1 + eta * b * c;
            let c2 = c0.sqrt() * (eta * (c * c + lambda) + 1.0);
            let c3 = lambda.sqrt() * c2 + lambda * (th1 + eta * b * c);
            c1 / (eta * t) + c2 / (lambda.sqrt() * eta * t) + c3
        }
        BoundId::SquaredRidgeCovariance | BoundId::SquaredRidgeMultiaccuracy => {
            let eta = P::need(p.eta, "eta")?;
            let b = P::need(p.b, "b")?;
            let c = P::need(p.c, "c")?;
            let lambda = P::need(p.lambda, "lambda")?;
            check_ridge_step(eta, lambda, c)?;
            let big_c = ridge_c0(eta, lambda, b, c) * (eta * (c * c + lambda) + 1.0);
            b * c / t + big_c.sqrt() / (lambda.sqrt() * eta * t) + (lambda * big_c).sqrt() + lambda * eta * b * c
        }
        BoundId::ZeroCurv1dLrt | BoundId::PosCurvLrt | BoundId::QuadCurvLrt => {
            let c = P::need(p.c, "c")?;
            let alpha = P::need(p.alpha, "alpha")?;
            let l = P::need(p.lipschitz, "lipschitz")?;
            let h = P::need(p.horizon, "horizon")?;
            let scale = t.powf(1.0 - alpha);
            2.0 * th1 / c / scale + 2.0 * (l + h / c) / scale
        }
        BoundId::ZeroCurvLrt => {
            let c = P::need(p.c, "c")?;
            let alpha = P::need(p.alpha, "alpha")?;
            let l = P::need(p.lipschitz, "lipschitz")?;
            let h = P::need(p.horizon, "horizon")?;
            let scale = t.powf(1.0 - alpha);
            2.0 * th1 / c / scale + (zero_curv_lrt_sum(ctx.t, alpha, l, h, c) / (scale * scale)).sqrt()
        }
    };
    Ok(value)
}

/// Evaluate a bound display at every prefix of `traj`.
pub fn bound_eval(traj: &Trajectory, id: BoundId, params: &BoundParams) -> Result<Vec<f64>> {
    check_shape(traj)?;
    let theta1_norm = norm(&traj.thetas[0]);
    let mut max_norm = theta1_norm;
    let mut sum_abs_delta = 0.0;
    let mut prev_inv = 0.0;
    let mut lrt_sum = 0.0;
    let mut out = Vec::with_capacity(traj.len());
    for i in 0..traj.len() {
        let eta_t = traj.etas[i];
        let inv = 1.0 / eta_t;
        sum_abs_delta += (inv - prev_inv).abs();
        prev_inv = inv;
        let next_norm = norm(&traj.thetas[i + 1]);
        max_norm = max_norm.max(next_norm);
        let ctx = BoundContext {
            t: i + 1,
            theta1_norm,
            theta_next_norm: next_norm,
            max_norm,
            sum_abs_delta,
            eta_t,
        };
        let value = if id == BoundId::ZeroCurvLrt {
            let c = BoundParams::need(params.c, "c")?;
            let alpha = BoundParams::need(params.alpha, "alpha")?;
            let l = BoundParams::need(params.lipschitz, "lipschitz")?;
            let h = BoundParams::need(params.horizon, "horizon")?;
            let s = (i + 1) as f64;
            lrt_sum += s.powf(-2.0 * alpha) * l * l + 2.0 * s.powf(-alpha) * h * l / c;
            let scale = s.powf(1.0 - alpha);
            2.0 * theta1_norm / c / scale + (lrt_sum / (scale * scale)).sqrt()
        } else {
            bound_at(id, params, &ctx)?
        };
        out.push(value);
    }
    Ok(out)
}

/// How the best fixed parameter was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleKind {
    ClosedForm,
    Numeric { method: String, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub cumulative_loss: f64,
    pub oracle_loss: f64,
    pub oracle_theta: Vec<f64>,
    pub avg_regret: f64,
    pub oracle_kind: OracleKind,
}

/// Total loss of a fixed parameter over the sequence.
pub fn total_loss(losses: &[LossInstance], theta: &[f64]) -> Result<f64> {
    losses.iter().try_fold(0.0, |acc, l| Ok(acc + l.eval(theta)?))
}

/// Lower empirical `τ`-quantile: the smallest order statistic whose cumulative
/// fraction reaches `τ`.
pub fn lower_quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((tau * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    v[k - 1]
}

fn closed_form_oracle(losses: &[LossInstance]) -> Option<f64> {
    let first = losses.first()?;
    if losses.iter().any(|l| l.reg != Regularizer::None || l.kind != first.kind) {
        return None;
    }
    let r: Vec<f64> = losses.iter().map(LossInstance::response).collect();
    match first.kind {
        LossKind::Squared => Some(r.iter().sum::<f64>() / r.len() as f64),
        LossKind::Quantile { tau } => Some(lower_quantile(&r, tau)),
        LossKind::Absolute => Some(lower_quantile(&r, 0.5)),
        _ => None,
    }
}

const GOLDEN_TOL: f64 = 1e-8;
const GRADIENT_TOL: f64 = 1e-6;

fn golden_section(f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    // bracket a minimizer of a convex function by expanding outward from 0
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut expansions = 0;
    while f(lo)? < f(lo / 2.0)? || f(hi)? < f(hi / 2.0)? {
        if f(lo)? < f(lo / 2.0)? {
            lo *= 2.0;
        }
        if f(hi)? < f(hi / 2.0)? {
            hi *= 2.0;
        }
        expansions += 1;
        if expansions > 80 {
            return Err(Error::NonConvergence("could not bracket a minimizer".into()));
        }
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..500 {
        if hi - lo <= GOLDEN_TOL {
            return Ok(0.5 * (lo + hi));
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Err(Error::NonConvergence("golden-section search exceeded its iteration budget".into()))
}

fn proximal_gradient(losses: &[LossInstance], d: usize) -> Result<Vec<f64>> {
    let reg = losses[0].reg;
    if losses.iter().any(|l| l.reg != reg) {
        return Err(Error::Unsupported("regret oracle needs a common regularizer".into()));
    }
    let n = losses.len() as f64;
    let smooth_grad = |theta: &[f64]| -> Result<Vec<f64>> {
        let mut g = vec![0.0; d];
        for l in losses {
            axpy(&mut g, 1.0 / n, &l.loss_subgradient(theta)?);
        }
        if !matches!(reg, Regularizer::L1 { .. }) && !reg.is_set_characteristic() {
            add_assign(&mut g, &reg.subgradient(theta)?);
        }
        Ok(g)
    };
    let smooth_value = |theta: &[f64]| -> Result<f64> {
        let mut v = 0.0;
        for l in losses {
            let mut plain = l.clone();
            plain.reg = Regularizer::None;
            v += plain.eval(theta)? / n;
        }
        if !matches!(reg, Regularizer::L1 { .. }) && !reg.is_set_characteristic() {
            v += reg.value(theta);
        }
        Ok(v)
    };
    let prox = |z: &[f64], s: f64| -> Vec<f64> {
        match reg {
            Regularizer::L1 { lambda } => z.iter().map(|v| v.signum() * (v.abs() - s * lambda).max(0.0)).collect(),
            Regularizer::Simplex => crate::descent::project_simplex(z),
            Regularizer::L2Ball { radius } => crate::descent::project_ball(z, radius),
            _ => z.to_vec(),
        }
    };
    let mut theta = prox(&vec![0.0; d], 1.0);
    let mut step = 1.0;
    for _ in 0..200_000 {
        let g = smooth_grad(&theta)?;
        let f0 = smooth_value(&theta)?;
        loop {
            let z: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let cand = prox(&z, step);
            let diff: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let model = f0 + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * step);
            if smooth_value(&cand)? <= model + 1e-15 * f0.abs() {
                let mapping = norm(&diff) / step;
                theta = cand;
                if mapping <= GRADIENT_TOL {
                    return Ok(theta);
                }
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::NonConvergence("backtracking collapsed".into()));
            }
        }
    }
    Err(Error::NonConvergence("proximal gradient did not reach the gradient-mapping tolerance".into()))
}

/// Regret of the trajectory against the best fixed parameter in hindsight.
pub fn regret(traj: &Trajectory, losses: &[LossInstance]) -> Result<RegretReport> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    check_dim(traj.len(), losses.len())?;
    let mut cumulative_loss = 0.0;
    for (l, theta) in losses.iter().zip(&traj.thetas) {
        cumulative_loss += l.eval(theta)?;
    }
    let d = traj.dim();
    let (oracle_theta, oracle_kind) = if let (1, Some(theta)) = (d, closed_form_oracle(losses)) {
        (vec![theta], OracleKind::ClosedForm)
    } else if d == 1 {
        let theta = golden_section(|x| total_loss(losses, &[x]))?;
        (
            vec![theta],
            OracleKind::Numeric {
                method: "golden-section".into(),
                tolerance: GOLDEN_TOL,
            },
        )
    } else {
        (
            proximal_gradient(losses, d)?,
            OracleKind::Numeric {
                method: "proximal-gradient".into(),
                tolerance: GRADIENT_TOL,
            },
        )
    };
    let oracle_loss = total_loss(losses, &oracle_theta)?;
    Ok(RegretReport {
        cumulative_loss,
        oracle_loss,
        avg_regret: (cumulative_loss - oracle_loss) / losses.len() as f64,
        oracle_theta,
        oracle_kind,
    })
}

/// `(1/T) Σ [ℓ_t(θ_t + δ) − ℓ_t(θ_t)]`.
pub fn nmr_shift_value(traj: &Trajectory, losses: &[LossInstance], delta: &[f64]) -> Result<f64> {
    check_dim(traj.len(), losses.len())?;
    check_dim(traj.dim(), delta.len())?;
    let mut acc = 0.0;
    for (l, theta) in losses.iter().zip(&traj.thetas) {
        let shifted: Vec<f64> = theta.iter().zip(delta).map(|(a, b)| a + b).collect();
        acc += l.eval(&shifted)? - l.eval(theta)?;
    }
    Ok(acc / losses.len().max(1) as f64)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

const PRIMES: [u64; 30] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103,
    107, 109, 113,
];

/// Deterministic sample of shifts in the ball of the given radius: the origin, the
/// axis points `±r e_i`, and `grid_size` further points (a uniform grid in one
/// dimension, radially projected Halton points otherwise).
pub fn nmr_grid(dim: usize, radius: f64, grid_size: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim]];
    for i in 0..dim {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; dim];
            e[i] = s * radius;
            out.push(e);
        }
    }
    if dim == 1 {
        if grid_size >= 2 {
            out.extend((0..grid_size).map(|i| vec![-radius + 2.0 * radius * i as f64 / (grid_size - 1) as f64]));
        }
        return out;
    }
    for i in 1..=grid_size as u64 {
        let v: Vec<f64> = (0..dim)
            .map(|k| 2.0 * radical_inverse(i, PRIMES[k % PRIMES.len()]) - 1.0)
            .collect();
        let n = norm(&v);
        let scale = if n > 1.0 { radius / n } else { radius };
        out.push(v.iter().map(|x| x * scale).collect());
    }
    out
}

/// Smallest sampled value of the no-move-regret average over shifts of norm at most `radius`.
pub fn nmr_estimate(traj: &Trajectory, losses: &[LossInstance], radius: f64, grid_size: usize) -> Result<f64> {
    if !(radius > 0.0) || grid_size == 0 {
        return Err(Error::InvalidParameter("radius must be positive and grid_size at least 1".into()));
    }
    let mut best = f64::INFINITY;
    for delta in nmr_grid(traj.dim(), radius, grid_size) {
        best = best.min(nmr_shift_value(traj, losses, &delta)?);
    }
    Ok(best)
}
