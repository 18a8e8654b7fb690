use serde::{Deserialize, Serialize};

use super::{check_classification, check_epsilon, check_finite, check_step, prefix_abs_mean, PipelineRun, StepRow, StreamRecord};
use crate::descent::{run_stream, LearnerState, StepSchedule};
use crate::equilibrium::{bound_eval, BoundId, BoundParams};
use crate::losses::{max_step_squared, sigmoid, LossInstance};
use crate::{Error, Result};

/// Constants behind the squared-loss bias guarantee: `|y_t − f_t| ≤ b` and the
/// curvature margin `δ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquaredGuarantee {
    pub b: f64,
    pub delta: f64,
}

impl SquaredGuarantee {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidParameter(format!("b must be finite and nonnegative, got {}", self.b)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Push warnings when the guarantee does not apply to this run.
    pub(crate) fn audit(&self, eta: f64, stream: &[StreamRecord], warnings: &mut Vec<String>) {
        let max_eta = max_step_squared(self.delta);
        if eta > max_eta {
            warnings.push(format!(
                "step size {eta} exceeds 2(1-δ)/(1+δ)² = {max_eta}; the bias guarantee does not apply"
            ));
        }
        if let Some(i) = stream.iter().position(|r| (r.y - r.f).abs() > self.b) {
            warnings.push(format!("row {} has |y - f| above b = {}; the bias guarantee does not apply", i + 1, self.b));
        }
    }

    pub(crate) fn params(&self, eta: f64) -> BoundParams {
        BoundParams::new().eta(eta).b(self.b).delta(self.delta)
    }
}

/// Additive debiasing of a real-valued base predictor: `θ_{t+1} = θ_t − η(f_t + θ_t − y_t)`,
/// emitting `f_t + θ_t`.
pub fn debias_regression(stream: &[StreamRecord], eta: f64, guarantee: Option<SquaredGuarantee>) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_finite(stream)?;
    if let Some(g) = &guarantee {
        g.validate()?;
        g.audit(eta, stream, &mut warnings);
    }
    let losses: Vec<LossInstance> = stream.iter().map(|r| LossInstance::squared(r.y).with_base(r.f)).collect();
    let traj = run_stream(&losses, LearnerState::new(vec![0.0], StepSchedule::constant(eta)))?;
    let rows: Vec<StepRow> = stream
        .iter()
        .zip(&traj.thetas)
        .enumerate()
        .map(|(i, (r, theta))| StepRow {
            t: i + 1,
            f: r.f,
            y: r.y,
            adjustment: theta[0],
            adjusted: r.f + theta[0],
            raw: None,
            z: None,
        })
        .collect();
    let residuals: Vec<f64> = rows.iter().map(StepRow::residual).collect();
    let mut run = PipelineRun::new("debias-regression", "bias", rows, traj)?;
    run.metric = prefix_abs_mean(&residuals);
    if let (Some(g), true) = (guarantee, eta > 0.0) {
        let bound = bound_eval(&run.trajectory, BoundId::SquaredBias, &g.params(eta))?;
        run.set_bound(bound)?;
    }
    run.warnings = warnings;
    Ok(run)
}

/// Clip every base probability into `[ε, 1 − ε]`, reporting how many moved.
pub(crate) fn clip_probabilities(stream: &[StreamRecord], epsilon: f64, warnings: &mut Vec<String>) -> Vec<StreamRecord> {
    let mut clipped = 0usize;
    let out = stream
        .iter()
        .map(|r| {
            let p = r.f.clamp(epsilon, 1.0 - epsilon);
            if p != r.f {
                clipped += 1;
            }
            StreamRecord { f: p, ..r.clone() }
        })
        .collect();
    if clipped > 0 {
        warnings.push(format!("{clipped} base probabilities clipped into [{epsilon}, {}]", 1.0 - epsilon));
    }
    out
}

/// Debiasing of a probability forecaster through
/// `θ_{t+1} = θ_t − η(p_t − y_t + 2σ(θ_t) − 1)`, emitting `p_t + 2σ(θ_t) − 1`.
pub fn debias_classification(stream: &[StreamRecord], eta: f64, epsilon: f64) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_epsilon(epsilon)?;
    check_finite(stream)?;
    check_classification(stream)?;
    let stream = clip_probabilities(stream, epsilon, &mut warnings);
    let losses: Vec<LossInstance> = stream
        .iter()
        .map(|r| LossInstance::gen_logistic(-1.0, 1.0, r.y).with_base(r.f))
        .collect();
    let traj = run_stream(&losses, LearnerState::new(vec![0.0], StepSchedule::constant(eta)))?;
    let rows: Vec<StepRow> = stream
        .iter()
        .zip(&traj.thetas)
        .enumerate()
        .map(|(i, (r, theta))| {
            let adjustment = 2.0 * sigmoid(theta[0]) - 1.0;
            let raw = r.f + adjustment;
            StepRow {
                t: i + 1,
                f: r.f,
                y: r.y,
                adjustment,
                adjusted: raw.clamp(0.0, 1.0),
                raw: Some(raw),
                z: None,
            }
        })
        .collect();
    let residuals: Vec<f64> = rows.iter().map(StepRow::residual).collect();
    let mut run = PipelineRun::new("debias-classification", "bias", rows, traj)?;
    run.metric = prefix_abs_mean(&residuals);
    if eta > 0.0 {
        let params = BoundParams::new().eta(eta).epsilon(epsilon);
        let bound = bound_eval(&run.trajectory, BoundId::LogisticBias, &params)?;
        run.set_bound(bound)?;
    }
    run.warnings = warnings;
    Ok(run)
}
