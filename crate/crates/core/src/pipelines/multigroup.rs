use serde::{Deserialize, Serialize};

use super::debias::clip_probabilities;
use super::{
    check_classification, check_epsilon, check_finite, check_step, features, group_reports, PipelineRun, SquaredGuarantee,
    StepRow, StreamRecord,
};
use crate::descent::{run_stream, LearnerState, StepSchedule};
use crate::equilibrium::{BoundId, BoundParams};
use crate::losses::{sigmoid, LossInstance};
use crate::vecops::dot;
use crate::{Error, Result};

/// Group names and whether the stream promises that each record belongs to at most one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub labels: Vec<String>,
    pub disjoint: bool,
}

impl GroupLayout {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, disjoint: bool) -> Self {
        Self {
            labels: labels.into_iter().map(Into::into).collect(),
            disjoint,
        }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Read and check the indicator vectors of `stream`.
    fn indicators(&self, stream: &[StreamRecord]) -> Result<Vec<Vec<f64>>> {
        if self.labels.is_empty() {
            return Err(Error::InvalidConfig("at least one group label is required".into()));
        }
        let zs = features(stream, self.dim())?;
        for (i, z) in zs.iter().enumerate() {
            if z.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Input {
                    row: i + 1,
                    message: "group indicators must be 0 or 1".into(),
                });
            }
            if self.disjoint && z.iter().filter(|&&v| v == 1.0).count() > 1 {
                return Err(Error::Input {
                    row: i + 1,
                    message: "record belongs to several groups but the layout is declared disjoint".into(),
                });
            }
        }
        Ok(zs)
    }
}

/// Multigroup debiasing of a real-valued predictor:
/// `θ_{t+1} = θ_t − η z_t(f_t + z_t·θ_t − y_t)`, emitting `f_t + z_t·θ_t`.
pub fn multigroup_regression(
    stream: &[StreamRecord],
    layout: &GroupLayout,
    eta: f64,
    guarantee: Option<SquaredGuarantee>,
) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_finite(stream)?;
    let zs = layout.indicators(stream)?;
    if let Some(g) = &guarantee {
        g.validate()?;
        g.audit(eta, stream, &mut warnings);
    }
    let losses: Vec<LossInstance> = stream
        .iter()
        .zip(&zs)
        .map(|(r, z)| LossInstance::glm_linear(z.clone(), r.y).with_base(r.f))
        .collect();
    let theta1 = vec![0.0; layout.dim()];
    let traj = run_stream(&losses, LearnerState::new(theta1.clone(), StepSchedule::constant(eta)))?;
    let rows: Vec<StepRow> = stream
        .iter()
        .zip(&zs)
        .zip(&traj.thetas)
        .enumerate()
        .map(|(i, ((r, z), theta))| {
            let adjustment = dot(z, theta);
            StepRow {
                t: i + 1,
                f: r.f,
                y: r.y,
                adjustment,
                adjusted: r.f + adjustment,
                raw: None,
                z: Some(z.clone()),
            }
        })
        .collect();
    let bound = match (guarantee, layout.disjoint && eta > 0.0) {
        (Some(g), true) => Some((BoundId::GlmLinearAvgGrad, g.params(eta))),
        _ => None,
    };
    finish("multigroup-regression", rows, traj, layout, &zs, &theta1, bound, warnings)
}

/// Multigroup debiasing of a probability forecaster:
/// `θ_{t+1} = θ_t − η z_t(p_t − y_t + 2σ(z_t·θ_t) − 1)`, emitting `p_t + 2σ(z_t·θ_t) − 1`.
pub fn multigroup_classification(stream: &[StreamRecord], layout: &GroupLayout, eta: f64, epsilon: f64) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_epsilon(epsilon)?;
    check_finite(stream)?;
    check_classification(stream)?;
    let zs = layout.indicators(stream)?;
    let stream = clip_probabilities(stream, epsilon, &mut warnings);
    let losses: Vec<LossInstance> = stream
        .iter()
        .zip(&zs)
        .map(|(r, z)| LossInstance::glm_logistic(-1.0, 1.0, z.clone(), r.y).with_base(r.f))
        .collect();
    let theta1 = vec![0.0; layout.dim()];
    let traj = run_stream(&losses, LearnerState::new(theta1.clone(), StepSchedule::constant(eta)))?;
    let rows: Vec<StepRow> = stream
        .iter()
        .zip(&zs)
        .zip(&traj.thetas)
        .enumerate()
        .map(|(i, ((r, z), theta))| {
            let adjustment = 2.0 * sigmoid(dot(z, theta)) - 1.0;
            let raw = r.f + adjustment;
            StepRow {
                t: i + 1,
                f: r.f,
                y: r.y,
                adjustment,
                adjusted: raw.clamp(0.0, 1.0),
                raw: Some(raw),
                z: Some(z.clone()),
            }
        })
        .collect();
    let bound = (layout.disjoint && eta > 0.0).then(|| {
        (
            BoundId::GlmLogisticAvgGrad,
            BoundParams::new().eta(eta).a(-1.0).b(1.0).epsilon(epsilon),
        )
    });
    finish("multigroup-classification", rows, traj, layout, &zs, &theta1, bound, warnings)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    name: &'static str,
    rows: Vec<StepRow>,
    traj: crate::descent::Trajectory,
    layout: &GroupLayout,
    zs: &[Vec<f64>],
    theta1: &[f64],
    bound: Option<(BoundId, BoundParams)>,
    warnings: Vec<String>,
) -> Result<PipelineRun> {
    let residuals: Vec<f64> = rows.iter().map(StepRow::residual).collect();
    let mut run = PipelineRun::new(name, "avg_grad_norm", rows, traj)?;
    run.metric = run.report.prefix_avg_grad_norm.clone();
    run.groups = group_reports(&layout.labels, zs, &residuals, theta1, bound.as_ref().map(|(id, p)| (*id, p)))?;
    run.group_labels = layout.labels.clone();
    run.warnings = warnings;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::{debias_classification, debias_regression};

    fn two_groups(n: usize) -> Vec<StreamRecord> {
        (0..n)
            .map(|i| {
                let g = i % 2;
                let y = ((i * 37) % 11) as f64 / 11.0 - 0.5;
                let f = if g == 1 { y - 1.0 } else { y };
                let z = if g == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
                StreamRecord::new(f, y).with_z(z)
            })
            .collect()
    }

    #[test]
    fn disjoint_groups_decouple() {
        let s = two_groups(400);
        let layout = GroupLayout::new(["unbiased", "offset"], true);
        let run = multigroup_regression(&s, &layout, 0.2, Some(SquaredGuarantee { b: 2.0, delta: 0.5 })).unwrap();
        let last = run.trajectory.last_theta();
        assert!(last[0].abs() < 1e-12);
        assert!((last[1] - 1.0).abs() < 1e-12);
        for g in &run.groups {
            assert!(g.bias.unwrap().abs() < 0.05);
            assert_eq!(g.within_bound, Some(true));
        }
        // closed form for the offset group: θ_k = 1 − 0.8^k after k visits
        let offset_thetas: Vec<f64> = run.trajectory.thetas.iter().skip(2).step_by(2).map(|t| t[1]).collect();
        for (k, th) in offset_thetas.iter().enumerate().take(50) {
            assert!((th - (1.0 - 0.8f64.powi(k as i32 + 1))).abs() < 1e-12);
        }
    }

    #[test]
    fn single_group_reduces_to_simple_debias() {
        let s: Vec<_> = (0..300)
            .map(|i| StreamRecord::new((i as f64 * 0.3).sin(), (i as f64 * 0.7).cos()).with_z(vec![1.0]))
            .collect();
        let layout = GroupLayout::new(["all"], true);
        let a = multigroup_regression(&s, &layout, 0.1, None).unwrap();
        let b = debias_regression(&s, 0.1, None).unwrap();
        assert_eq!(a.trajectory.thetas, b.trajectory.thetas);
        let adj_a: Vec<f64> = a.rows.iter().map(|r| r.adjusted).collect();
        let adj_b: Vec<f64> = b.rows.iter().map(|r| r.adjusted).collect();
        assert_eq!(adj_a, adj_b);

        let c: Vec<_> = (0..300)
            .map(|i| StreamRecord::new(0.2 + 0.6 * ((i * 13) % 7) as f64 / 7.0, (i % 3 == 0) as u8 as f64).with_z(vec![1.0]))
            .collect();
        let a = multigroup_classification(&c, &layout, 0.3, 0.05).unwrap();
        let b = debias_classification(&c, 0.3, 0.05).unwrap();
        assert_eq!(a.trajectory.thetas, b.trajectory.thetas);
        let raw_a: Vec<_> = a.rows.iter().map(|r| r.raw).collect();
        let raw_b: Vec<_> = b.rows.iter().map(|r| r.raw).collect();
        assert_eq!(raw_a, raw_b);
    }

    #[test]
    fn classification_starts_unadjusted() {
        let s: Vec<_> = (0..5).map(|i| StreamRecord::new(0.4, (i % 2) as f64).with_z(vec![1.0, (i % 2) as f64])).collect();
        let layout = GroupLayout::new(["a", "b"], false);
        let run = multigroup_classification(&s, &layout, 0.1, 0.1).unwrap();
        assert_eq!(run.rows[0].adjustment, 0.0);
        assert!(run.groups.iter().all(|g| g.bound.is_none()));
    }

    #[test]
    fn layout_violations() {
        let s = vec![StreamRecord::new(0.0, 0.0).with_z(vec![1.0, 1.0])];
        let disjoint = GroupLayout::new(["a", "b"], true);
        assert!(matches!(multigroup_regression(&s, &disjoint, 0.1, None), Err(Error::Input { row: 1, .. })));
        let s = vec![StreamRecord::new(0.0, 0.0).with_z(vec![0.5, 0.0])];
        assert!(multigroup_regression(&s, &disjoint, 0.1, None).is_err());
        let s = vec![StreamRecord::new(0.0, 0.0)];
        assert!(multigroup_regression(&s, &disjoint, 0.1, None).is_err());
    }
}
