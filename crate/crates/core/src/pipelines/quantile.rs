use serde::{Deserialize, Serialize};

use super::{check_finite, check_step, PipelineRun, StepRow, StreamRecord};
use crate::descent::{prox_mirror_step, LearnerState, MirrorMap, StepSchedule, Trajectory};
use crate::equilibrium::{bound_eval, BoundId, BoundParams};
use crate::losses::Regularizer;
use crate::vecops::dot;
use crate::{Error, Result};

/// Pinball loss `ρ_τ(y − q)`.
pub fn pinball(tau: f64, y: f64, q: f64) -> f64 {
    let e = y - q;
    if e >= 0.0 {
        tau * e
    } else {
        (tau - 1.0) * e
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

fn signed_error(tau: f64, y: f64, q: f64) -> f64 {
    (if y <= q { 1.0 } else { 0.0 }) - tau
}

fn coverage_metric(run: &mut PipelineRun, hits: &[bool], tau: f64) {
    let mut count = 0u64;
    run.metric = hits
        .iter()
        .enumerate()
        .map(|(i, h)| {
            count += *h as u64;
            (count as f64 / (i + 1) as f64 - tau).abs()
        })
        .collect();
    run.coverage = Some(count as f64 / hits.len().max(1) as f64);
}

/// Online quantile tracking: `θ_{t+1} = θ_t − η(1{y_t ≤ f_t + θ_t} − τ)`, emitting
/// `f_t + θ_t`. With a score bound `b` the coverage bound `(η + b)/(ηT)` is attached.
pub fn quantile_track(stream: &[StreamRecord], tau: f64, eta: f64, b: Option<f64>) -> Result<PipelineRun> {
    let mut warnings = Vec::new();
    check_step(eta, &mut warnings)?;
    check_tau(tau)?;
    check_finite(stream)?;
    let mut traj = Trajectory::start(vec![0.0]);
    let mut rows = Vec::with_capacity(stream.len());
    let mut hits = Vec::with_capacity(stream.len());
    let mut theta = 0.0;
    for (i, r) in stream.iter().enumerate() {
        let q = r.f + theta;
        let g = signed_error(tau, r.y, q);
        hits.push(r.y <= q);
        rows.push(StepRow {
            t: i + 1,
            f: r.f,
            y: r.y,
            adjustment: theta,
            adjusted: q,
            raw: None,
            z: None,
        });
        traj.losses.push(pinball(tau, r.y, q));
        traj.grads.push(vec![g]);
        traj.etas.push(eta);
        theta -= eta * g;
        traj.thetas.push(vec![theta]);
    }
    if stream.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut run = PipelineRun::new("track-quantile", "coverage_gap", rows, traj)?;
    coverage_metric(&mut run, &hits, tau);
    if let (Some(b), true) = (b, eta > 0.0) {
        if let Some(i) = stream.iter().position(|r| (r.y - r.f).abs() > b) {
            run.warnings.push(format!("row {} has |y - f| above b = {b}; the coverage guarantee does not apply", i + 1));
        }
        let bound = bound_eval(&run.trajectory, BoundId::QuantileCoverage, &BoundParams::new().eta(eta).b(b))?;
        run.set_bound(bound)?;
    }
    run.warnings.extend(warnings);
    Ok(run)
}

/// Expert step sizes and the ensemble rate of the multiplicative-weights layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub tau: f64,
    pub nus: Vec<f64>,
    pub nu_ens: f64,
}

/// Ensemble output plus the per-expert bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    /// Ensemble predictions; `trajectory` holds the weight iterates.
    pub run: PipelineRun,
    /// Expert parameters `Θ_t`, `T + 1` rows of length `K`.
    pub expert_thetas: Vec<Vec<f64>>,
    pub expert_coverage: Vec<f64>,
    pub expert_pinball: Vec<f64>,
    pub ensemble_pinball: f64,
}

impl EnsembleRun {
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.run.trajectory.thetas
    }

    pub fn expert_gaps(&self, tau: f64) -> Vec<f64> {
        self.expert_coverage.iter().map(|c| (c - tau).abs()).collect()
    }
}

/// Quantile ensembling. Each expert runs its own tracker with rate `ν_k`, and weights
/// follow `w_{t+1,k} ∝ w_{tk} exp(−ν θ^k_t σ_t)` with `σ_t = 1{y_t ≤ f_t + w_t·Θ_t} − τ`.
pub fn quantile_ensemble(stream: &[StreamRecord], config: &EnsembleConfig) -> Result<EnsembleRun> {
    let tau = config.tau;
    check_tau(tau)?;
    check_finite(stream)?;
    let k = config.nus.len();
    if k == 0 {
        return Err(Error::InvalidConfig("at least one expert is required".into()));
    }
    if config.nus.iter().chain([&config.nu_ens]).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("expert and ensemble rates must be positive".into()));
    }
    if stream.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut weights = LearnerState::new(vec![1.0 / k as f64; k], StepSchedule::constant(config.nu_ens))
        .with_mirror(MirrorMap::NegativeEntropy)
        .with_reg(Regularizer::Simplex);
    let mut traj = Trajectory::start(weights.theta.clone());
    traj.mirror = MirrorMap::NegativeEntropy;
    let mut reg_subgrads = Vec::with_capacity(stream.len());
    let mut experts = vec![0.0; k];
    let mut expert_thetas = vec![experts.clone()];
    let mut expert_hits = vec![0u64; k];
    let mut expert_loss = vec![0.0; k];
    let mut ensemble_loss = 0.0;
    let mut rows = Vec::with_capacity(stream.len());
    let mut hits = Vec::with_capacity(stream.len());
    for (i, r) in stream.iter().enumerate() {
        let combined = dot(&weights.theta, &experts);
        let q = r.f + combined;
        let sigma = signed_error(tau, r.y, q);
        hits.push(r.y <= q);
        ensemble_loss += pinball(tau, r.y, q);
        rows.push(StepRow {
            t: i + 1,
            f: r.f,
            y: r.y,
            adjustment: combined,
            adjusted: q,
            raw: None,
            z: None,
        });
        let g: Vec<f64> = experts.iter().map(|th| th * sigma).collect();
        traj.losses.push(pinball(tau, r.y, q));
        let gr = prox_mirror_step(&mut weights, &g).map_err(|e| e.at(i + 1))?;
        reg_subgrads.push(gr);
        traj.grads.push(g);
        traj.etas.push(config.nu_ens);
        traj.thetas.push(weights.theta.clone());
        for j in 0..k {
            let qk = r.f + experts[j];
            expert_hits[j] += (r.y <= qk) as u64;
            expert_loss[j] += pinball(tau, r.y, qk);
            experts[j] -= config.nus[j] * signed_error(tau, r.y, qk);
        }
        expert_thetas.push(experts.clone());
    }
    traj.reg_subgrads = Some(reg_subgrads);
    let n = stream.len() as f64;
    let mut run = PipelineRun::new("ensemble", "coverage_gap", rows, traj)?;
    coverage_metric(&mut run, &hits, tau);
    Ok(EnsembleRun {
        run,
        expert_thetas,
        expert_coverage: expert_hits.iter().map(|h| *h as f64 / n).collect(),
        expert_pinball: expert_loss.iter().map(|l| l / n).collect(),
        ensemble_pinball: ensemble_loss / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::identity_pmd;
    use proptest::prelude::*;

    fn scores(values: &[f64]) -> Vec<StreamRecord> {
        values.iter().map(|&y| StreamRecord::new(0.0, y)).collect()
    }

    #[test]
    fn full_level_covers_everything_eventually() {
        let s: Vec<_> = (0..1000).map(|i| StreamRecord::new(0.0, ((i * 37) % 101) as f64 / 50.0 - 1.0)).collect();
        let run = quantile_track(&s, 1.0, 0.1, Some(1.0)).unwrap();
        let tail_hits = run.rows[900..].iter().filter(|r| r.y <= r.adjusted).count();
        assert_eq!(tail_hits, 100);
        assert!(run.coverage.unwrap() > 0.97);
    }

    #[test]
    fn alternating_scores_median() {
        let ys: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let run = quantile_track(&scores(&ys), 0.5, 0.1, Some(1.0)).unwrap();
        assert!(run.satisfied.as_ref().unwrap().iter().all(|v| *v));
        assert!((run.coverage.unwrap() - 0.5).abs() <= 1.1 / 100.0);
    }

    #[test]
    fn coverage_bound_arithmetic() {
        let ys: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        let run = quantile_track(&scores(&ys), 0.9, 0.1, Some(1.0)).unwrap();
        let last = *run.bound.as_ref().unwrap().last().unwrap();
        assert!((last - 0.011).abs() < 1e-15);
        assert!(*run.metric.last().unwrap() <= last);
    }

    #[test]
    fn constant_scores_oscillate_with_step_width() {
        let run = quantile_track(&scores(&[0.37; 400]), 0.5, 0.1, None).unwrap();
        let tail: Vec<f64> = run.trajectory.thetas[200..].iter().map(|t| t[0]).collect();
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 0.1 + 1e-12);
        assert!(lo <= 0.37 + 1e-12 && hi >= 0.37 - 1e-12);
    }

    #[test]
    fn single_expert_equals_tracking() {
        let ys: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() + if i > 250 { 1.0 } else { 0.0 }).collect();
        let s = scores(&ys);
        let track = quantile_track(&s, 0.8, 0.05, None).unwrap();
        let ens = quantile_ensemble(&s, &EnsembleConfig { tau: 0.8, nus: vec![0.05], nu_ens: 0.3 }).unwrap();
        let a: Vec<f64> = track.rows.iter().map(|r| r.adjusted).collect();
        let b: Vec<f64> = ens.run.rows.iter().map(|r| r.adjusted).collect();
        assert_eq!(a, b);
        assert!(ens.weights().iter().all(|w| w == &vec![1.0]));
        assert_eq!(track.coverage, ens.run.coverage);
    }

    #[test]
    fn identical_experts_keep_uniform_weights() {
        let ys: Vec<f64> = (0..300).map(|i| (i as f64 * 1.3).cos()).collect();
        let ens = quantile_ensemble(&scores(&ys), &EnsembleConfig { tau: 0.3, nus: vec![0.1; 4], nu_ens: 1.0 }).unwrap();
        assert!(ens.weights().iter().all(|w| w.iter().all(|v| *v == 0.25)));
    }

    #[test]
    fn weight_identity_and_simplex() {
        let ys: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.11).sin() * 2.0).collect();
        let ens = quantile_ensemble(&scores(&ys), &EnsembleConfig { tau: 0.9, nus: vec![0.01, 0.05, 0.5], nu_ens: 0.5 }).unwrap();
        for w in ens.weights() {
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|v| *v > 0.0));
        }
        assert!(identity_pmd(&ens.run.trajectory, None).unwrap().iter().all(|r| *r < 1e-9));
    }

    #[test]
    fn rejects_bad_configs() {
        let s = scores(&[0.0]);
        assert!(quantile_track(&s, 1.5, 0.1, None).is_err());
        assert!(quantile_ensemble(&s, &EnsembleConfig { tau: 0.5, nus: vec![], nu_ens: 1.0 }).is_err());
        assert!(quantile_ensemble(&s, &EnsembleConfig { tau: 0.5, nus: vec![0.0], nu_ens: 1.0 }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn coverage_counter_identity(ys in prop::collection::vec(-1.0..1.0f64, 1..300), tau in 0.0..1.0f64, eta in 0.01..1.0f64) {
            let run = quantile_track(&scores(&ys), tau, eta, Some(1.0)).unwrap();
            let hits = run.rows.iter().filter(|r| r.y <= r.adjusted).count() as f64;
            let gsum: f64 = run.trajectory.grads.iter().map(|g| g[0]).sum();
            prop_assert!((hits - (gsum + tau * ys.len() as f64)).abs() < 1e-9);
            prop_assert!(run.satisfied.unwrap().iter().all(|v| *v));
        }
    }
}
