use serde::{Deserialize, Serialize};

use super::{check_classification, check_finite, check_step, features, prefix_covariance, PipelineRun, StepRow, StreamRecord};
use crate::descent::{run_stream, LearnerState, StepSchedule};
use crate::equilibrium::{bound_eval, BoundId, BoundParams};
use crate::losses::{sigmoid, LossInstance, Regularizer};
use crate::vecops::{axpy, check_dim, dot, norm};
use crate::{Error, Result};

/// Standard choices of the penalty strength for a horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaPreset {
    /// `λ = 1/√T`
    InvSqrtT,
    /// `λ = 1/T`
    InvT,
}

pub fn lambda_preset(preset: LambdaPreset, horizon: usize) -> f64 {
    let t = horizon.max(1) as f64;
    match preset {
        LambdaPreset::InvSqrtT => 1.0 / t.sqrt(),
        LambdaPreset::InvT => 1.0 / t,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

fn check_feature_norms(zs: &[Vec<f64>], c: f64) -> Result<()> {
    for (i, z) in zs.iter().enumerate() {
        if norm(z) > c * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!("row {}: feature norm {} exceeds c = {c}", i + 1, norm(z))));
        }
    }
    Ok(())
}

fn covariance_run(name: &'static str, rows: Vec<StepRow>, zs: &[Vec<f64>], traj: crate::descent::Trajectory) -> Result<PipelineRun> {
    let residuals: Vec<f64> = rows.iter().map(StepRow::residual).collect();
    let mut run = PipelineRun::new(name, "covariance", rows, traj)?;
    run.metric = prefix_covariance(&residuals, zs);
    Ok(run)
}

/// Gradient descent on `½(f_t + z_t·θ − y_t)² + (λ/2)‖θ‖²`, emitting `f_t + z_t·θ_t` and
/// tracking `‖(1/T) Σ (f_t + z_t·θ_t − y_t) z_t‖`.
pub fn decorrelate_ridge(stream: &[StreamRecord], eta: f64, lambda: f64, b: f64, c: f64) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_lambda(lambda)?;
    check_finite(stream)?;
    let d = stream.first().and_then(|r| r.z.as_ref()).map_or(0, Vec::len);
    let zs = features(stream, d)?;
    check_feature_norms(&zs, c)?;
    if let Some(i) = stream.iter().position(|r| (r.y - r.f).abs() > b) {
        return Err(Error::InvalidConfig(format!("row {}: |y - f| exceeds b = {b}", i + 1)));
    }
    if !(eta < 1.0 / (lambda + c * c / 2.0)) {
        return Err(Error::InvalidConfig(format!(
            "step size {eta} must be below 1/(λ + c²/2) = {}",
            1.0 / (lambda + c * c / 2.0)
        )));
    }
    let reg = Regularizer::L2Half { lambda };
    let losses: Vec<LossInstance> = stream
        .iter()
        .zip(&zs)
        .map(|(r, z)| LossInstance::glm_linear(z.clone(), r.y).with_base(r.f).with_reg(reg))
        .collect();
    let traj = run_stream(&losses, LearnerState::new(vec![0.0; d], StepSchedule::constant(eta)))?;
    let rows = stream
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
    let mut run = covariance_run("decorrelate-ridge", rows, &zs, traj)?;
    if eta > 0.0 {
        let params = BoundParams::new().eta(eta).b(b).c(c).lambda(lambda);
        let bound = bound_eval(&run.trajectory, BoundId::SquaredRidgeCovariance, &params)?;
        run.set_bound(bound)?;
    }
    run.warnings = warnings;
    Ok(run)
}

/// Gradient descent on the lasso-penalized logistic loss with range `[−1, 1]` on residuals,
/// emitting `p_t + 2σ(z_t·θ_t) − 1` and tracking `‖(1/T) Σ (p_t + 2σ(z_t·θ_t) − 1 − y_t) z_t‖`.
pub fn decorrelate_lasso_logistic(stream: &[StreamRecord], eta: f64, lambda: f64, c: f64) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_lambda(lambda)?;
    check_finite(stream)?;
    check_classification(stream)?;
    let d = stream.first().and_then(|r| r.z.as_ref()).map_or(0, Vec::len);
    let zs = features(stream, d)?;
    check_feature_norms(&zs, c)?;
    let reg = Regularizer::L1 { lambda };
    let losses: Vec<LossInstance> = stream
        .iter()
        .zip(&zs)
        .map(|(r, z)| LossInstance::glm_logistic(-1.0, 1.0, z.clone(), r.y).with_base(r.f).with_reg(reg))
        .collect();
    let traj = run_stream(&losses, LearnerState::new(vec![0.0; d], StepSchedule::constant(eta)))?;
    let rows = stream
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
    let mut run = covariance_run("decorrelate-lasso", rows, &zs, traj)?;
    if eta > 0.0 {
        let params = BoundParams::new().eta(eta).c(c).lambda(lambda).dim(d as f64);
        let bound = bound_eval(&run.trajectory, BoundId::LogisticLassoCovariance, &params)?;
        run.set_bound(bound)?;
    }
    run.warnings = warnings;
    Ok(run)
}

/// `sup { (1/T) Σ r_t α·z_t : ‖α‖ ≤ cap } = cap · ‖(1/T) Σ r_t z_t‖`.
pub fn multiaccuracy_sup(residuals: &[f64], zs: &[Vec<f64>], cap: f64) -> Result<f64> {
    check_dim(residuals.len(), zs.len())?;
    if residuals.is_empty() {
        return Ok(0.0);
    }
    let d = zs[0].len();
    let mut acc = vec![0.0; d];
    for (r, z) in residuals.iter().zip(zs) {
        check_dim(d, z.len())?;
        axpy(&mut acc, *r, z);
    }
    Ok(norm(&acc) / residuals.len() as f64 * cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::debias_classification;

    #[test]
    fn zero_features_freeze_theta() {
        let s: Vec<_> = (0..20).map(|i| StreamRecord::new(0.0, (i % 3) as f64 / 3.0).with_z(vec![0.0, 0.0])).collect();
        let run = decorrelate_ridge(&s, 0.2, 0.01, 1.0, 1.0).unwrap();
        assert!(run.trajectory.thetas.iter().all(|t| t == &vec![0.0, 0.0]));
        assert!(run.metric.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn unit_feature_covariance_is_absolute_bias() {
        let s: Vec<_> = (0..200).map(|i| StreamRecord::new(0.1, ((i * 7) % 5) as f64 / 5.0).with_z(vec![1.0])).collect();
        let run = decorrelate_ridge(&s, 0.2, 0.01, 1.0, 1.0).unwrap();
        let mut acc = 0.0;
        for (i, row) in run.rows.iter().enumerate() {
            acc += row.residual();
            assert!((run.metric[i] - (acc / (i + 1) as f64).abs()).abs() < 1e-15);
        }
        assert!(run.satisfied.unwrap().iter().all(|v| *v));
    }

    #[test]
    fn ridge_rejects_inadmissible_inputs() {
        let s = vec![StreamRecord::new(0.0, 0.5).with_z(vec![1.0])];
        assert!(matches!(decorrelate_ridge(&s, 0.7, 1.0, 1.0, 1.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(decorrelate_ridge(&s, 0.1, 1.0, 0.1, 1.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(decorrelate_ridge(&s, 0.1, 1.0, 1.0, 0.5), Err(Error::InvalidConfig(_))));
        assert!(decorrelate_ridge(&s, 0.1, 0.0, 1.0, 1.0).is_err());
        assert!(decorrelate_lasso_logistic(&s, 0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn lasso_first_adjustment_is_zero() {
        let s: Vec<_> = (0..3).map(|i| StreamRecord::new(0.3, (i % 2) as f64).with_z(vec![0.6, -0.8])).collect();
        let run = decorrelate_lasso_logistic(&s, 0.5, 0.05, 1.0).unwrap();
        assert_eq!(run.rows[0].adjustment, 0.0);
    }

    #[test]
    fn vanishing_lasso_approaches_simple_debias() {
        let s: Vec<_> = (0..2000)
            .map(|i| StreamRecord::new(0.2 + 0.6 * ((i * 31) % 17) as f64 / 17.0, ((i * 7) % 3 == 0) as u8 as f64).with_z(vec![1.0]))
            .collect();
        let lasso = decorrelate_lasso_logistic(&s, 0.3, 1e-8, 1.0).unwrap();
        let plain = debias_classification(&s, 0.3, 0.01).unwrap();
        let gap = lasso
            .trajectory
            .thetas
            .iter()
            .zip(&plain.trajectory.thetas)
            .map(|(a, b)| (a[0] - b[0]).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-4, "gap {gap}");
    }

    #[test]
    fn multiaccuracy_examples() {
        let zs = vec![vec![1.0, 0.0]; 5];
        assert_eq!(multiaccuracy_sup(&[0.0; 5], &zs, 1.0).unwrap(), 0.0);
        assert_eq!(multiaccuracy_sup(&[1.0; 5], &zs, 1.0).unwrap(), 1.0);
        assert_eq!(multiaccuracy_sup(&[1.0; 5], &zs, 2.5).unwrap(), 2.5);

        let s: Vec<_> = (0..500)
            .map(|i| {
                let a = (i as f64 * 0.9).sin();
                StreamRecord::new(0.0, (i as f64 * 0.4).cos() * 0.9).with_z(vec![a * 0.6, (1.0 - a * a).sqrt() * 0.6])
            })
            .collect();
        let run = decorrelate_ridge(&s, 0.2, 0.01, 1.0, 1.0).unwrap();
        let residuals: Vec<f64> = run.rows.iter().map(StepRow::residual).collect();
        let zs: Vec<Vec<f64>> = run.rows.iter().map(|r| r.z.clone().unwrap()).collect();
        assert_eq!(multiaccuracy_sup(&residuals, &zs, 1.0).unwrap(), *run.metric.last().unwrap());
    }

    #[test]
    fn presets() {
        assert_eq!(lambda_preset(LambdaPreset::InvSqrtT, 10_000), 0.01);
        assert_eq!(lambda_preset(LambdaPreset::InvT, 10_000), 1e-4);
    }
}
