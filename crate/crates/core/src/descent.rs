//! Online update engines.
//!
//! [`gd_step`] is plain online gradient descent. [`prox_mirror_step`] performs a mirror
//! step `∇Φ(z) = ∇Φ(θ) - ηg` followed by the Bregman proximal map of the regularizer and
//! returns the implied regularizer subgradient `g_r(θ') = (∇Φ(z) - ∇Φ(θ'))/η`.
//! [`run_stream`] drives either engine over a sequence of losses.

use serde::{Deserialize, Serialize};

use crate::losses::{LossInstance, Regularizer};
use crate::vecops::{add_assign, check_dim, norm, sub};
use crate::{Error, Result};

/// Weights below this value are raised to it before renormalization.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `η_t = c · t^{-α}`
    Polynomial { c: f64, alpha: f64 },
    Explicit { etas: Vec<f64> },
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Self {
        StepSchedule::Constant { eta }
    }

    pub fn polynomial(c: f64, alpha: f64) -> Self {
        StepSchedule::Polynomial { c, alpha }
    }

    /// A constant step of zero is accepted as a no-op baseline.
    pub fn validate(&self) -> Result<()> {
        match self {
            StepSchedule::Constant { eta } => {
                if !(eta.is_finite() && *eta >= 0.0) {
                    return Err(Error::InvalidParameter(format!("step size must be finite and nonnegative, got {eta}")));
                }
            }
            StepSchedule::Polynomial { c, alpha } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::InvalidParameter(format!("step scale must be positive, got {c}")));
                }
                if !(0.0..1.0).contains(alpha) {
                    return Err(Error::InvalidParameter(format!("decay exponent must lie in [0, 1), got {alpha}")));
                }
            }
            StepSchedule::Explicit { etas } => {
                if let Some(bad) = etas.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                    return Err(Error::InvalidParameter(format!("explicit step sizes must be positive, got {bad}")));
                }
            }
        }
        Ok(())
    }

    /// Step size at the 1-based round `t`.
    pub fn eta(&self, t: usize) -> Result<f64> {
        match self {
            StepSchedule::Constant { eta } => Ok(*eta),
            StepSchedule::Polynomial { c, alpha } => Ok(c * (t as f64).powf(-alpha)),
            StepSchedule::Explicit { etas } => etas
                .get(t.wrapping_sub(1))
                .copied()
                .ok_or(Error::ScheduleExhausted(t)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, StepSchedule::Constant { .. })
    }

    /// Whether the first `horizon` step sizes are nonincreasing.
    pub fn is_nonincreasing(&self, horizon: usize) -> bool {
        match self {
            StepSchedule::Constant { .. } | StepSchedule::Polynomial { .. } => true,
            StepSchedule::Explicit { etas } => etas
                .iter()
                .take(horizon)
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[1] <= w[0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MirrorMap {
    #[default]
    Identity,
    NegativeEntropy,
}

impl MirrorMap {
    /// `∇Φ(θ)`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            MirrorMap::Identity => theta.to_vec(),
            MirrorMap::NegativeEntropy => theta.iter().map(|w| 1.0 + w.ln()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub theta: Vec<f64>,
    pub grad: Vec<f64>,
    pub eta: f64,
    /// Regularizer subgradient at the next iterate.
    pub reg_subgrad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub theta: Vec<f64>,
    /// Index of the current round, starting at 1.
    pub t: usize,
    pub schedule: StepSchedule,
    pub mirror: MirrorMap,
    pub reg: Regularizer,
    pub trace: Option<Vec<TraceEntry>>,
}

impl LearnerState {
    pub fn new(theta: Vec<f64>, schedule: StepSchedule) -> Self {
        Self {
            theta,
            t: 1,
            schedule,
            mirror: MirrorMap::Identity,
            reg: Regularizer::None,
            trace: None,
        }
    }

    pub fn with_mirror(mut self, mirror: MirrorMap) -> Self {
        self.mirror = mirror;
        self
    }

    pub fn with_reg(mut self, reg: Regularizer) -> Self {
        self.reg = reg;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidParameter("round counter starts at 1".into()));
        }
        self.schedule.validate()?;
        self.reg.validate()?;
        if self.mirror == MirrorMap::NegativeEntropy && self.theta.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::NonPositiveWeights);
        }
        Ok(())
    }

    fn is_plain(&self) -> bool {
        self.mirror == MirrorMap::Identity && self.reg == Regularizer::None
    }

    fn record(&mut self, theta: Vec<f64>, grad: &[f64], eta: f64, reg_subgrad: &[f64]) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry {
                theta,
                grad: grad.to_vec(),
                eta,
                reg_subgrad: reg_subgrad.to_vec(),
            });
        }
    }
}

/// `θ ← θ - η_t g`.
pub fn gd_step(state: &mut LearnerState, g: &[f64]) -> Result<()> {
    check_dim(state.theta.len(), g.len())?;
    if !state.is_plain() {
        return Err(Error::Unsupported(
            "gradient step requires the identity mirror map and no regularizer".into(),
        ));
    }
    let eta = state.schedule.eta(state.t)?;
    let previous = state.trace.as_ref().map(|_| state.theta.clone());
    for (th, gi) in state.theta.iter_mut().zip(g) {
        *th -= eta * gi;
    }
    if let Some(prev) = previous {
        let zeros = vec![0.0; g.len()];
        state.record(prev, g, eta, &zeros);
    }
    state.t += 1;
    Ok(())
}

/// Mirror step plus proximal map. Returns `g_r(θ_{t+1})`.
pub fn prox_mirror_step(state: &mut LearnerState, g: &[f64]) -> Result<Vec<f64>> {
    check_dim(state.theta.len(), g.len())?;
    let eta = state.schedule.eta(state.t)?;
    let (next, reg_subgrad) = match state.mirror {
        MirrorMap::Identity => identity_prox(&state.theta, g, eta, &state.reg)?,
        MirrorMap::NegativeEntropy => entropic_prox(&state.theta, g, eta, &state.reg)?,
    };
    let previous = std::mem::replace(&mut state.theta, next);
    state.record(previous, g, eta, &reg_subgrad);
    state.t += 1;
    Ok(reg_subgrad)
}

fn implied_subgrad(z: &[f64], next: &[f64], eta: f64) -> Vec<f64> {
    if eta == 0.0 {
        return vec![0.0; z.len()];
    }
    z.iter().zip(next).map(|(a, b)| (a - b) / eta).collect()
}

fn identity_prox(theta: &[f64], g: &[f64], eta: f64, reg: &Regularizer) -> Result<(Vec<f64>, Vec<f64>)> {
    let z: Vec<f64> = theta.iter().zip(g).map(|(th, gi)| th - eta * gi).collect();
    let next = match *reg {
        Regularizer::None => return Ok((z.clone(), vec![0.0; z.len()])),
        Regularizer::L1 { lambda } => {
            let k = eta * lambda;
            z.iter().map(|&v| v.signum() * (v.abs() - k).max(0.0)).collect()
        }
        Regularizer::L2Half { lambda } => z.iter().map(|v| v / (1.0 + eta * lambda)).collect(),
        Regularizer::L2Full { lambda } => z.iter().map(|v| v / (1.0 + 2.0 * eta * lambda)).collect(),
        Regularizer::L2Ball { radius } => project_ball(&z, radius),
        Regularizer::Simplex => project_simplex(&z),
    };
    let gr = implied_subgrad(&z, &next, eta);
    Ok((next, gr))
}

fn entropic_prox(theta: &[f64], g: &[f64], eta: f64, reg: &Regularizer) -> Result<(Vec<f64>, Vec<f64>)> {
    if theta.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::NonPositiveWeights);
    }
    let log_z: Vec<f64> = theta.iter().zip(g).map(|(w, gi)| w.ln() - eta * gi).collect();
    match reg {
        Regularizer::None => {
            let next: Vec<f64> = log_z.iter().map(|l| l.exp().max(WEIGHT_FLOOR)).collect();
            let gr = log_z
                .iter()
                .zip(&next)
                .map(|(l, w)| if eta == 0.0 { 0.0 } else { (l - w.ln()) / eta })
                .collect();
            Ok((next, gr))
        }
        Regularizer::Simplex => {
            let m = log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let raw: Vec<f64> = log_z.iter().map(|l| (l - m).exp().max(WEIGHT_FLOOR)).collect();
            let total: f64 = raw.iter().sum();
            let next: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let gr = log_z
                .iter()
                .zip(&next)
                .map(|(l, w)| if eta == 0.0 { 0.0 } else { (l - w.ln()) / eta })
                .collect();
            Ok((next, gr))
        }
        other => Err(Error::Unsupported(format!(
            "negative-entropy mirror map with {other:?}"
        ))),
    }
}

/// Euclidean projection onto the ball of the given radius.
pub fn project_ball(z: &[f64], radius: f64) -> Vec<f64> {
    let n = norm(z);
    if n <= radius {
        z.to_vec()
    } else {
        z.iter().map(|v| v * radius / n).collect()
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(z: &[f64]) -> Vec<f64> {
    let mut u = z.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (j, &v) in u.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    z.iter().map(|v| (v - shift).max(0.0)).collect()
}

/// Subgradient of an L1 or ridge penalty.
pub fn regularizer_subgradient(reg: &Regularizer, theta: &[f64]) -> Result<Vec<f64>> {
    reg.validate()?;
    reg.subgradient(theta)
}

/// Dense record of a run: `T + 1` iterates and `T` gradients, step sizes and losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Trajectory {
    pub thetas: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
    pub etas: Vec<f64>,
    /// Loss values `ℓ_t(θ_t)`; empty when the run has no losses attached.
    pub losses: Vec<f64>,
    /// `g_r(θ_{t+1})` for each round, present for proximal runs.
    pub reg_subgrads: Option<Vec<Vec<f64>>>,
    pub mirror: MirrorMap,
}

impl Trajectory {
    pub fn start(theta: Vec<f64>) -> Self {
        Self {
            thetas: vec![theta],
            ..Default::default()
        }
    }

    /// Number of rounds.
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas.first().map_or(0, Vec::len)
    }

    pub fn last_theta(&self) -> &[f64] {
        self.thetas.last().map_or(&[], Vec::as_slice)
    }

    /// The common step size, if every round used the same one.
    pub fn constant_eta(&self) -> Option<f64> {
        let first = *self.etas.first()?;
        self.etas.iter().all(|&e| e == first).then_some(first)
    }

    /// Write one row per iterate: `t, eta, loss, theta_*, grad_*`. The final row carries
    /// only the last iterate.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "eta".into(), "loss".into()];
        header.extend((0..d).map(|i| format!("theta_{i}")));
        header.extend((0..d).map(|i| format!("grad_{i}")));
        w.write_record(&header)?;
        for (i, theta) in self.thetas.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.push(self.etas.get(i).map(f64::to_string).unwrap_or_default());
            row.push(self.losses.get(i).map(f64::to_string).unwrap_or_default());
            row.extend(theta.iter().map(f64::to_string));
            match self.grads.get(i) {
                Some(g) => row.extend(g.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), d)),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_losses(losses: &[LossInstance], d: usize) -> Result<()> {
    for (i, l) in losses.iter().enumerate() {
        l.validate().map_err(|e| e.at(i + 1))?;
        check_dim(d, l.dim()).map_err(|e| e.at(i + 1))?;
    }
    Ok(())
}

/// Run the configured engine over `losses`, recording every round.
pub fn run_stream(losses: &[LossInstance], mut state: LearnerState) -> Result<Trajectory> {
    state.validate()?;
    check_losses(losses, state.theta.len())?;
    let proximal = !state.is_plain();
    let mut traj = Trajectory::start(state.theta.clone());
    traj.mirror = state.mirror;
    if proximal {
        traj.reg_subgrads = Some(Vec::with_capacity(losses.len()));
    }
    for l in losses {
        let t = state.t;
        let step = |state: &mut LearnerState, traj: &mut Trajectory| -> Result<()> {
            let g = l.subgradient(&state.theta)?;
            let value = l.eval(&state.theta)?;
            let eta = state.schedule.eta(t)?;
            if proximal {
                let gr = prox_mirror_step(state, &g)?;
                if let Some(rs) = traj.reg_subgrads.as_mut() {
                    rs.push(gr);
                }
            } else {
                gd_step(state, &g)?;
            }
            traj.grads.push(g);
            traj.losses.push(value);
            traj.etas.push(eta);
            traj.thetas.push(state.theta.clone());
            Ok(())
        };
        step(&mut state, &mut traj).map_err(|e| e.at(t))?;
    }
    Ok(traj)
}

/// Running sums of a constant-step gradient-descent run, kept without storing iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub theta_first: Vec<f64>,
    pub theta_last: Vec<f64>,
    pub grad_sum: Vec<f64>,
    pub loss_sum: f64,
    pub schedule: StepSchedule,
}

impl RunSummary {
    pub fn avg_gradient(&self) -> Vec<f64> {
        let n = self.steps.max(1) as f64;
        self.grad_sum.iter().map(|g| g / n).collect()
    }

    /// Residual of the constant-step identity computed from the stored endpoints.
    pub fn identity_residual(&self) -> Result<f64> {
        let eta = match self.schedule {
            StepSchedule::Constant { eta } if eta > 0.0 => eta,
            StepSchedule::Constant { .. } => {
                return Err(Error::InvalidParameter("identity needs a positive step size".into()))
            }
            _ => return Err(Error::NonConstantSchedule),
        };
        if self.steps == 0 {
            return Err(Error::EmptyTrajectory);
        }
        let n = self.steps as f64;
        let moved = sub(&self.theta_first, &self.theta_last);
        let diff: Vec<f64> = self
            .grad_sum
            .iter()
            .zip(&moved)
            .map(|(g, m)| g / n - m / (eta * n))
            .collect();
        Ok(norm(&diff))
    }
}

/// Plain gradient descent over `losses` keeping only running sums.
pub fn run_stream_summary(losses: &[LossInstance], mut state: LearnerState) -> Result<RunSummary> {
    state.validate()?;
    check_losses(losses, state.theta.len())?;
    state.trace = None;
    let mut summary = RunSummary {
        steps: 0,
        theta_first: state.theta.clone(),
        theta_last: state.theta.clone(),
        grad_sum: vec![0.0; state.theta.len()],
        loss_sum: 0.0,
        schedule: state.schedule.clone(),
    };
    for l in losses {
        let t = state.t;
        let step = |state: &mut LearnerState, summary: &mut RunSummary| -> Result<()> {
            let g = l.subgradient(&state.theta)?;
            summary.loss_sum += l.eval(&state.theta)?;
            gd_step(state, &g)?;
            add_assign(&mut summary.grad_sum, &g);
            summary.steps += 1;
            Ok(())
        };
        step(&mut state, &mut summary).map_err(|e| e.at(t))?;
    }
    summary.theta_last = state.theta;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::dot;
    use proptest::prelude::*;

    #[test]
    fn gd_step_examples() {
        let mut s = LearnerState::new(vec![0.0], StepSchedule::constant(0.5));
        gd_step(&mut s, &[1.0]).unwrap();
        assert_eq!(s.theta, vec![-0.5]);
        assert_eq!(s.t, 2);

        let mut s = LearnerState::new(vec![1.0, 1.0], StepSchedule::constant(0.1));
        gd_step(&mut s, &[10.0, 0.0]).unwrap();
        assert_eq!(s.theta, vec![0.0, 1.0]);

        let mut s = LearnerState::new(vec![0.0], StepSchedule::constant(0.5)).with_trace();
        gd_step(&mut s, &[1.0]).unwrap();
        gd_step(&mut s, &[-1.0]).unwrap();
        assert_eq!(s.theta, vec![0.0]);
        let trace = s.trace.unwrap();
        assert_eq!(trace.len(), 2);
        let avg = (trace[0].grad[0] + trace[1].grad[0]) / 2.0;
        assert_eq!(avg, (0.0 - s.theta[0]) / (0.5 * 2.0));
    }

    #[test]
    fn gd_step_rejects_bad_input() {
        let mut s = LearnerState::new(vec![0.0], StepSchedule::constant(0.5));
        assert!(matches!(gd_step(&mut s, &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        let mut s = s.with_reg(Regularizer::L1 { lambda: 1.0 });
        assert!(matches!(gd_step(&mut s, &[1.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn prox_identity_without_regularizer_is_gd() {
        let mut a = LearnerState::new(vec![0.3, -1.0], StepSchedule::constant(0.7));
        let mut b = a.clone();
        gd_step(&mut a, &[0.2, 5.0]).unwrap();
        let gr = prox_mirror_step(&mut b, &[0.2, 5.0]).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(gr, vec![0.0, 0.0]);
    }

    #[test]
    fn entropic_examples() {
        let mut s = LearnerState::new(vec![0.5, 0.5], StepSchedule::constant(3.0))
            .with_mirror(MirrorMap::NegativeEntropy)
            .with_reg(Regularizer::Simplex);
        prox_mirror_step(&mut s, &[0.0, 0.0]).unwrap();
        assert_eq!(s.theta, vec![0.5, 0.5]);

        let mut s = LearnerState::new(vec![0.5, 0.5], StepSchedule::constant(std::f64::consts::LN_2))
            .with_mirror(MirrorMap::NegativeEntropy)
            .with_reg(Regularizer::Simplex);
        prox_mirror_step(&mut s, &[1.0, 0.0]).unwrap();
        assert!((s.theta[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.theta[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn entropic_rejects_nonpositive_and_unsupported() {
        let mut s = LearnerState::new(vec![0.0, 1.0], StepSchedule::constant(1.0))
            .with_mirror(MirrorMap::NegativeEntropy)
            .with_reg(Regularizer::Simplex);
        assert!(matches!(prox_mirror_step(&mut s, &[1.0, 0.0]), Err(Error::NonPositiveWeights)));
        let mut s = LearnerState::new(vec![0.5, 0.5], StepSchedule::constant(1.0))
            .with_mirror(MirrorMap::NegativeEntropy)
            .with_reg(Regularizer::L1 { lambda: 1.0 });
        assert!(matches!(prox_mirror_step(&mut s, &[1.0, 0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn weight_floor_guards_underflow() {
        let mut s = LearnerState::new(vec![0.5, 0.5], StepSchedule::constant(1.0))
            .with_mirror(MirrorMap::NegativeEntropy)
            .with_reg(Regularizer::Simplex);
        prox_mirror_step(&mut s, &[1e4, 0.0]).unwrap();
        assert_eq!(s.theta[0], WEIGHT_FLOOR);
        assert_eq!(s.theta[1], 1.0);
    }

    #[test]
    fn regularizer_subgradient_examples() {
        let l1 = Regularizer::L1 { lambda: 0.5 };
        assert_eq!(regularizer_subgradient(&l1, &[2.0, 0.0, -1.0]).unwrap(), vec![0.5, 0.0, -0.5]);
        let half = Regularizer::L2Half { lambda: 2.0 };
        assert_eq!(regularizer_subgradient(&half, &[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        let full = Regularizer::L2Full { lambda: 1.0 };
        assert_eq!(regularizer_subgradient(&full, &[3.0]).unwrap(), vec![6.0]);
        assert!(matches!(
            regularizer_subgradient(&Regularizer::Simplex, &[1.0]),
            Err(Error::UseProx)
        ));
    }

    #[test]
    fn run_stream_empty_keeps_theta() {
        let traj = run_stream(&[], LearnerState::new(vec![1.5], StepSchedule::constant(0.1))).unwrap();
        assert!(traj.is_empty());
        assert_eq!(traj.thetas, vec![vec![1.5]]);
    }

    #[test]
    fn quantile_hand_trace() {
        let losses = vec![LossInstance::quantile(0.5, 0.0); 30];
        let traj = run_stream(&losses, LearnerState::new(vec![1.0], StepSchedule::constant(0.1))).unwrap();
        // θ > 0 moves down by η(1-τ) = 0.05; at or below 0 it moves up by ητ = 0.05
        let mut theta = 1.0_f64;
        for t in 0..30 {
            assert!((traj.thetas[t][0] - theta).abs() < 1e-12);
            theta += if theta > 0.0 { -0.05 } else { 0.05 };
        }
        assert!(traj.thetas[20][0].abs() < 1e-12);
        assert!((traj.thetas[21][0] - 0.05).abs() < 1e-12);
        assert!(traj.thetas[22][0].abs() < 1e-12);
    }

    #[test]
    fn run_stream_reports_failing_step() {
        let losses = vec![LossInstance::squared(0.0), LossInstance::quantile(2.0, 0.0)];
        let err = run_stream(&losses, LearnerState::new(vec![0.0], StepSchedule::constant(0.1))).unwrap_err();
        assert_eq!(err.timestep(), Some(2));

        let losses = vec![LossInstance::squared(0.0); 3];
        let sched = StepSchedule::Explicit { etas: vec![0.1, 0.1] };
        let err = run_stream(&losses, LearnerState::new(vec![0.0], sched)).unwrap_err();
        assert_eq!(err.timestep(), Some(3));
    }

    #[test]
    fn summary_mode_matches_dense_run() {
        let losses: Vec<_> = (0..50).map(|i| LossInstance::squared((i as f64).sin())).collect();
        let state = LearnerState::new(vec![0.4], StepSchedule::constant(0.3));
        let dense = run_stream(&losses, state.clone()).unwrap();
        let summary = run_stream_summary(&losses, state).unwrap();
        assert_eq!(summary.theta_last, dense.last_theta());
        assert!(summary.identity_residual().unwrap() < 1e-12);
    }

    #[test]
    fn trajectory_csv_has_constant_width() {
        let losses = vec![LossInstance::squared(1.0); 3];
        let traj = run_stream(&losses, LearnerState::new(vec![0.0], StepSchedule::constant(0.5))).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let width = r.headers().unwrap().len();
        let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.len() == width));
    }

    fn positive_simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01..1.0f64, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    #[test]
    fn entropic_steps_stay_on_simplex() {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut s = LearnerState::new(vec![0.1; 10], StepSchedule::constant(0.5))
            .with_mirror(MirrorMap::NegativeEntropy)
            .with_reg(Regularizer::Simplex);
        for _ in 0..100_000 {
            let g: Vec<f64> = (0..10)
                .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0)
                .collect();
            prox_mirror_step(&mut s, &g).unwrap();
            assert!(s.theta.iter().all(|w| *w > 0.0));
            assert!((s.theta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn prox_records_a_valid_subgradient(
            theta in prop::collection::vec(-3.0..3.0f64, 4),
            g in prop::collection::vec(-3.0..3.0f64, 4),
            u in prop::collection::vec(-3.0..3.0f64, 4),
            eta in 0.01..2.0f64,
            lambda in 0.0..2.0f64,
            which in 0usize..5,
        ) {
            let reg = match which {
                0 => Regularizer::L1 { lambda },
                1 => Regularizer::L2Half { lambda },
                2 => Regularizer::L2Full { lambda },
                3 => Regularizer::L2Ball { radius: 1.0 + lambda },
                _ => Regularizer::Simplex,
            };
            let mut s = LearnerState::new(theta, StepSchedule::constant(eta)).with_reg(reg);
            let gr = prox_mirror_step(&mut s, &g).unwrap();
            let next = s.theta.clone();
            let candidate = match reg {
                Regularizer::Simplex => project_simplex(&u),
                Regularizer::L2Ball { radius } => project_ball(&u, radius),
                _ => u,
            };
            let step: Vec<f64> = candidate.iter().zip(&next).map(|(a, b)| a - b).collect();
            let lhs = reg.value(&candidate);
            let rhs = reg.value(&next) + dot(&gr, &step);
            prop_assert!(lhs >= rhs - 1e-9, "{lhs} < {rhs}");
        }

        #[test]
        fn ball_projection_stays_inside(
            theta in prop::collection::vec(-3.0..3.0f64, 3),
            g in prop::collection::vec(-10.0..10.0f64, 3),
            radius in 0.1..3.0f64,
        ) {
            let start = project_ball(&theta, radius);
            let mut s = LearnerState::new(start, StepSchedule::constant(0.5))
                .with_reg(Regularizer::L2Ball { radius });
            let gr = prox_mirror_step(&mut s, &g).unwrap();
            prop_assert!(norm(&s.theta) <= radius * (1.0 + 1e-12));
            prop_assert!(dot(&gr, &s.theta) >= -1e-12);
        }

        #[test]
        fn simplex_projection_lands_on_simplex(z in prop::collection::vec(-5.0..5.0f64, 1..8)) {
            let p = project_simplex(&z);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn entropic_step_is_multiplicative_weights(w in positive_simplex(5), g in prop::collection::vec(-2.0..2.0f64, 5), eta in 0.01..2.0f64) {
            let mut s = LearnerState::new(w.clone(), StepSchedule::constant(eta))
                .with_mirror(MirrorMap::NegativeEntropy)
                .with_reg(Regularizer::Simplex);
            prox_mirror_step(&mut s, &g).unwrap();
            let raw: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi * (-eta * gi).exp()).collect();
            let total: f64 = raw.iter().sum();
            for (a, b) in s.theta.iter().zip(&raw) {
                prop_assert!((a - b / total).abs() < 1e-12);
            }
        }
    }
}
