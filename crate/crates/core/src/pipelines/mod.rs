//! Post-hoc adjustment procedures built on online gradient descent.
//!
//! Every pipeline consumes a sequence of [`StreamRecord`]s and returns a
//! [`PipelineRun`]: the per-step adjusted predictions, the underlying parameter
//! trajectory with its equilibrium report, a tracked metric (bias, covariance or
//! coverage gap) and, when the required constants are supplied, the matching bound
//! series.

mod debias;
mod decorrelate;
mod elo;
mod multigroup;
mod quantile;

pub use debias::{debias_classification, debias_regression, SquaredGuarantee};
pub use decorrelate::{
    decorrelate_lasso_logistic, decorrelate_ridge, lambda_preset, multiaccuracy_sup, LambdaPreset,
};
pub use elo::{elo_run, Battle, EloRow, EloRun, EloTable};
pub use multigroup::{multigroup_classification, multigroup_regression, GroupLayout};
pub use quantile::{pinball, quantile_ensemble, quantile_track, EnsembleConfig, EnsembleRun};

use serde::{Deserialize, Serialize};

use crate::descent::Trajectory;
use crate::equilibrium::{bound_at, satisfies, BoundContext, BoundId, BoundParams, EquilibriumReport};
use crate::vecops::norm;
use crate::{Error, Result};

/// One observation: base prediction `f`, response `y`, optional group or feature vector `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StreamRecord {
    #[serde(default)]
    pub key: Option<String>,
    pub f: f64,
    pub y: f64,
    #[serde(default)]
    pub z: Option<Vec<f64>>,
}

impl StreamRecord {
    pub fn new(f: f64, y: f64) -> Self {
        Self {
            key: None,
            f,
            y,
            z: None,
        }
    }

    pub fn with_z(mut self, z: Vec<f64>) -> Self {
        self.z = Some(z);
        self
    }
}

/// Output of one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: usize,
    pub f: f64,
    pub y: f64,
    pub adjustment: f64,
    /// Reported prediction (clamped to `[0, 1]` for classification).
    pub adjusted: f64,
    /// Unclamped prediction, present for classification pipelines.
    pub raw: Option<f64>,
    pub z: Option<Vec<f64>>,
}

impl StepRow {
    /// `prediction − y` using the unclamped prediction.
    pub fn residual(&self) -> f64 {
        self.raw.unwrap_or(self.adjusted) - self.y
    }
}

/// Per-group summary over `I_j = {t : z_tj = 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: String,
    pub count: usize,
    /// `(1/|I_j|) Σ_{t∈I_j} (prediction_t − y_t)`; null for an empty group.
    pub bias: Option<f64>,
    /// Bound at `T_j = |I_j|`, attached for disjoint layouts when constants are known.
    pub bound: Option<f64>,
    /// False when `|I_j| < √T`.
    pub bound_meaningful: bool,
    /// Whether `|bias|` stayed within the bound at every prefix of the group.
    pub within_bound: Option<bool>,
}

/// Result of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub name: &'static str,
    pub rows: Vec<StepRow>,
    pub trajectory: Trajectory,
    pub report: EquilibriumReport,
    /// Name of the tracked metric: `bias`, `covariance` or `coverage_gap`.
    pub metric_name: &'static str,
    pub metric: Vec<f64>,
    pub bound: Option<Vec<f64>>,
    pub satisfied: Option<Vec<bool>>,
    pub coverage: Option<f64>,
    pub group_labels: Vec<String>,
    pub groups: Vec<GroupReport>,
    pub warnings: Vec<String>,
}

/// JSON-friendly summary of a [`PipelineRun`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub pipeline: String,
    pub steps: usize,
    pub metric: String,
    pub final_metric: Option<f64>,
    pub final_avg_grad_norm: Option<f64>,
    pub max_identity_residual: Option<f64>,
    pub final_bound: Option<f64>,
    pub bound_satisfaction_fraction: Option<f64>,
    pub coverage: Option<f64>,
    pub groups: Vec<GroupReport>,
    pub warnings: Vec<String>,
}

impl PipelineRun {
    pub(crate) fn new(name: &'static str, metric_name: &'static str, rows: Vec<StepRow>, trajectory: Trajectory) -> Result<Self> {
        let report = crate::equilibrium::avg_gradient(&trajectory)?;
        Ok(Self {
            name,
            rows,
            trajectory,
            report,
            metric_name,
            metric: Vec::new(),
            bound: None,
            satisfied: None,
            coverage: None,
            group_labels: Vec::new(),
            groups: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub(crate) fn set_bound(&mut self, bound: Vec<f64>) -> Result<()> {
        crate::vecops::check_dim(self.metric.len(), bound.len())?;
        self.satisfied = Some(self.metric.iter().zip(&bound).map(|(m, b)| satisfies(*m, *b)).collect());
        self.bound = Some(bound);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Signed average residual over the whole run.
    pub fn mean_residual(&self) -> f64 {
        self.rows.iter().map(StepRow::residual).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn bound_satisfaction_fraction(&self) -> Option<f64> {
        let s = self.satisfied.as_ref()?;
        if s.is_empty() {
            return None;
        }
        Some(s.iter().filter(|v| **v).count() as f64 / s.len() as f64)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            pipeline: self.name.to_string(),
            steps: self.len(),
            metric: self.metric_name.to_string(),
            final_metric: self.metric.last().copied(),
            final_avg_grad_norm: self.report.prefix_avg_grad_norm.last().copied(),
            max_identity_residual: self
                .report
                .identity_residual
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .reduce(f64::max),
            final_bound: self.bound.as_ref().and_then(|b| b.last().copied()),
            bound_satisfaction_fraction: self.bound_satisfaction_fraction(),
            coverage: self.coverage,
            groups: self.groups.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// One row per timestep:
    /// `t, f, y, adjustment, adjusted, raw, group:*, avg_grad_norm, identity_residual, metric, bound, satisfied`.
    pub fn write_metrics_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["t", "f", "y", "adjustment", "adjusted", "raw"].map(String::from).to_vec();
        header.extend(self.group_labels.iter().map(|l| format!("group:{l}")));
        header.extend(["avg_grad_norm", "identity_residual", self.metric_name, "bound", "satisfied"].map(String::from));
        w.write_record(&header)?;
        let d = self.group_labels.len();
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![
                row.t.to_string(),
                row.f.to_string(),
                row.y.to_string(),
                row.adjustment.to_string(),
                row.adjusted.to_string(),
                row.raw.map(|v| v.to_string()).unwrap_or_default(),
            ];
            match &row.z {
                Some(z) if d > 0 => rec.extend(z.iter().map(f64::to_string)),
                _ => rec.extend(std::iter::repeat_n(String::new(), d)),
            }
            rec.push(self.report.prefix_avg_grad_norm[i].to_string());
            rec.push(self.report.identity_residual[i].to_string());
            rec.push(self.metric[i].to_string());
            rec.push(self.bound.as_ref().map(|b| b[i].to_string()).unwrap_or_default());
            rec.push(self.satisfied.as_ref().map(|s| s[i].to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per group: `group, count, bias, bound, bound_meaningful, within_bound`.
    pub fn write_groups_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "count", "bias", "bound", "bound_meaningful", "within_bound"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for g in &self.groups {
            w.write_record([
                g.label.clone(),
                g.count.to_string(),
                opt(g.bias),
                opt(g.bound),
                g.bound_meaningful.to_string(),
                g.within_bound.map(|b| b.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_step(eta: f64, warnings: &mut Vec<String>) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be finite and nonnegative, got {eta}")));
    }
    if eta == 0.0 {
        warnings.push("step size 0 leaves every prediction unchanged".into());
    }
    Ok(())
}

pub(crate) fn check_finite(stream: &[StreamRecord]) -> Result<()> {
    for (i, r) in stream.iter().enumerate() {
        let bad_z = r.z.as_ref().is_some_and(|z| z.iter().any(|v| !v.is_finite()));
        if !r.f.is_finite() || !r.y.is_finite() || bad_z {
            return Err(Error::Input {
                row: i + 1,
                message: "non-finite value".into(),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_classification(stream: &[StreamRecord]) -> Result<()> {
    for (i, r) in stream.iter().enumerate() {
        if r.y != 0.0 && r.y != 1.0 {
            return Err(Error::Input {
                row: i + 1,
                message: format!("label must be 0 or 1, got {}", r.y),
            });
        }
        if !(0.0..=1.0).contains(&r.f) {
            return Err(Error::Input {
                row: i + 1,
                message: format!("base probability must lie in [0, 1], got {}", r.f),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    Ok(())
}

pub(crate) fn features(stream: &[StreamRecord], d: usize) -> Result<Vec<Vec<f64>>> {
    stream
        .iter()
        .enumerate()
        .map(|(i, r)| match &r.z {
            Some(z) if z.len() == d => Ok(z.clone()),
            Some(z) => Err(Error::Input {
                row: i + 1,
                message: format!("expected {d} group or feature entries, found {}", z.len()),
            }),
            None => Err(Error::Input {
                row: i + 1,
                message: "missing group or feature vector".into(),
            }),
        })
        .collect()
}

/// Prefix norms of `(1/t) Σ_{s≤t} r_s z_s`.
pub(crate) fn prefix_covariance(residuals: &[f64], zs: &[Vec<f64>]) -> Vec<f64> {
    let d = zs.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; d];
    residuals
        .iter()
        .zip(zs)
        .enumerate()
        .map(|(i, (r, z))| {
            crate::vecops::axpy(&mut acc, *r, z);
            norm(&acc) / (i + 1) as f64
        })
        .collect()
}

/// Prefix values of `|(1/t) Σ_{s≤t} r_s|`.
pub(crate) fn prefix_abs_mean(residuals: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    residuals
        .iter()
        .enumerate()
        .map(|(i, r)| {
            acc += r;
            (acc / (i + 1) as f64).abs()
        })
        .collect()
}

/// Per-group bias reports. Bounds are attached only when `bound` is given.
pub(crate) fn group_reports(
    labels: &[String],
    zs: &[Vec<f64>],
    residuals: &[f64],
    theta1: &[f64],
    bound: Option<(BoundId, &BoundParams)>,
) -> Result<Vec<GroupReport>> {
    let total = residuals.len() as f64;
    let mut out = Vec::with_capacity(labels.len());
    for (j, label) in labels.iter().enumerate() {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut within = true;
        let mut last_bound = None;
        for (z, r) in zs.iter().zip(residuals) {
            if z[j] == 0.0 {
                continue;
            }
            count += 1;
            sum += r;
            if let Some((id, params)) = bound {
                let ctx = BoundContext {
                    t: count,
                    theta1_norm: theta1[j].abs(),
                    ..Default::default()
                };
                let b = bound_at(id, params, &ctx)?;
                within &= satisfies((sum / count as f64).abs(), b);
                last_bound = Some(b);
            }
        }
        out.push(GroupReport {
            label: label.clone(),
            count,
            bias: (count > 0).then(|| sum / count as f64),
            bound: last_bound,
            bound_meaningful: count as f64 >= total.sqrt(),
            within_bound: last_bound.map(|_| within),
        });
    }
    Ok(out)
}
