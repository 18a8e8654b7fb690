use serde::{Deserialize, Serialize};

use crate::descent::{StepSchedule, Trajectory};
use crate::losses::{sigmoid, sign0};
use crate::{Error, Result};

/// A pairwise comparison between models `a` and `b` (0-based); `y = 1` when `b` wins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battle {
    pub a: usize,
    pub b: usize,
    pub y: f64,
}

/// Scores and per-model residual tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub scores: Vec<f64>,
    pub counts: Vec<usize>,
    /// `Σ_{t∈I_m} z_tm (p_t − y_t)` with `z_ta = −1`, `z_tb = +1`.
    pub signed_residual: Vec<f64>,
    /// `Σ_{t∈I_m} (p_t − y_t)`.
    pub raw_residual: Vec<f64>,
}

impl EloTable {
    fn empty(scores: Vec<f64>) -> Self {
        let m = scores.len();
        Self {
            scores,
            counts: vec![0; m],
            signed_residual: vec![0.0; m],
            raw_residual: vec![0.0; m],
        }
    }

    fn record(&mut self, battle: &Battle, p: f64) {
        let r = p - battle.y;
        self.counts[battle.a] += 1;
        self.counts[battle.b] += 1;
        self.signed_residual[battle.a] -= r;
        self.signed_residual[battle.b] += r;
        self.raw_residual[battle.a] += r;
        self.raw_residual[battle.b] += r;
    }

    pub fn signed_bias(&self, m: usize) -> Option<f64> {
        (self.counts[m] > 0).then(|| self.signed_residual[m] / self.counts[m] as f64)
    }

    pub fn raw_bias(&self, m: usize) -> Option<f64> {
        (self.counts[m] > 0).then(|| self.raw_residual[m] / self.counts[m] as f64)
    }

    /// `model, score, count, signed_bias, raw_bias`; models default to their 1-based index.
    pub fn write_csv<W: std::io::Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "score", "count", "signed_bias", "raw_bias"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in 0..self.scores.len() {
            let name = names.and_then(|n| n.get(m).cloned()).unwrap_or_else(|| (m + 1).to_string());
            w.write_record([
                name,
                self.scores[m].to_string(),
                self.counts[m].to_string(),
                opt(self.signed_bias(m)),
                opt(self.raw_bias(m)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloRow {
    pub t: usize,
    pub a: usize,
    pub b: usize,
    pub y: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EloRun {
    pub rows: Vec<EloRow>,
    /// Score iterates; the recorded gradients include the lasso term when present.
    pub trajectory: Trajectory,
    pub table: EloTable,
}

impl EloRun {
    /// Table after the first `t` battles.
    pub fn table_at(&self, t: usize) -> EloTable {
        let m = self.table.scores.len();
        let mut table = EloTable::empty(self.trajectory.thetas[t].clone());
        debug_assert_eq!(table.scores.len(), m);
        for row in &self.rows[..t] {
            table.record(
                &Battle {
                    a: row.a,
                    b: row.b,
                    y: row.y,
                },
                row.p,
            );
        }
        table
    }

    /// Mean of the score iterates `θ_{start+1}, …, θ_{T+1}`.
    pub fn average_scores(&self, start: usize) -> Vec<f64> {
        let tail = &self.trajectory.thetas[start.min(self.rows.len())..];
        let mut avg = vec![0.0; self.table.scores.len()];
        for theta in tail {
            crate::vecops::add_assign(&mut avg, theta);
        }
        avg.iter().map(|v| v / tail.len() as f64).collect()
    }

    /// `t, model_a, model_b, y, p` per battle (1-based models).
    pub fn write_metrics_csv<W: std::io::Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "model_a", "model_b", "y", "p"])?;
        let name = |m: usize| names.and_then(|n| n.get(m).cloned()).unwrap_or_else(|| (m + 1).to_string());
        for r in &self.rows {
            w.write_record([r.t.to_string(), name(r.a), name(r.b), r.y.to_string(), r.p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_battle(i: usize, battle: &Battle, m: usize) -> Result<()> {
    let fail = |message: String| Err(Error::Input { row: i + 1, message });
    if battle.a >= m || battle.b >= m {
        return fail(format!("competitor index out of range for {m} models"));
    }
    if battle.a == battle.b {
        return fail("a model cannot battle itself".into());
    }
    if battle.y != 0.0 && battle.y != 1.0 {
        return fail(format!("outcome must be 0 or 1, got {}", battle.y));
    }
    Ok(())
}

/// Online Elo as gradient descent on the Bradley–Terry logistic loss:
/// `p_t = σ(θ_b − θ_a)`, `θ ← θ − η_t z_t (p_t − y_t)` with an optional `λ sign(θ)` term.
pub fn elo_run(battles: &[Battle], m: usize, schedule: StepSchedule, lasso: Option<f64>) -> Result<EloRun> {
    if m < 2 {
        return Err(Error::InvalidConfig("Elo needs at least two models".into()));
    }
    schedule.validate()?;
    if let Some(l) = lasso {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidParameter(format!("lasso strength must be nonnegative, got {l}")));
        }
    }
    for (i, b) in battles.iter().enumerate() {
        check_battle(i, b, m)?;
    }
    let mut theta = vec![0.0; m];
    let mut traj = Trajectory::start(theta.clone());
    let mut table = EloTable::empty(theta.clone());
    let mut rows = Vec::with_capacity(battles.len());
    for (i, battle) in battles.iter().enumerate() {
        let t = i + 1;
        let eta = schedule.eta(t).map_err(|e| e.at(t))?;
        let p = sigmoid(theta[battle.b] - theta[battle.a]);
        let r = p - battle.y;
        let mut g = vec![0.0; m];
        g[battle.a] = -r;
        g[battle.b] = r;
        if let Some(l) = lasso {
            for (gk, th) in g.iter_mut().zip(&theta) {
                *gk += l * sign0(*th);
            }
        }
        for (th, gk) in theta.iter_mut().zip(&g) {
            *th -= eta * gk;
        }
        table.record(battle, p);
        rows.push(EloRow {
            t,
            a: battle.a,
            b: battle.b,
            y: battle.y,
            p,
        });
        traj.grads.push(g);
        traj.etas.push(eta);
        traj.thetas.push(theta.clone());
    }
    table.scores = theta;
    Ok(EloRun { rows, trajectory: traj, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::mean_gradient;
    use proptest::prelude::*;

    #[test]
    fn symmetric_first_step() {
        let run = elo_run(&[Battle { a: 0, b: 1, y: 1.0 }], 2, StepSchedule::constant(0.4), None).unwrap();
        assert_eq!(run.rows[0].p, 0.5);
        assert!((run.table.scores[1] - 0.2).abs() < 1e-15);
        assert!((run.table.scores[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn absent_model_has_null_bias() {
        let run = elo_run(&[Battle { a: 0, b: 1, y: 0.0 }], 3, StepSchedule::constant(0.1), None).unwrap();
        assert_eq!(run.table.counts[2], 0);
        assert_eq!(run.table.signed_bias(2), None);
        let mut buf = Vec::new();
        run.table.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(3).unwrap(), "3,0,0,,");
    }

    #[test]
    fn invalid_battles() {
        let s = StepSchedule::constant(0.1);
        assert!(matches!(
            elo_run(&[Battle { a: 0, b: 0, y: 1.0 }], 2, s.clone(), None),
            Err(Error::Input { row: 1, .. })
        ));
        assert!(elo_run(&[Battle { a: 0, b: 5, y: 1.0 }], 2, s.clone(), None).is_err());
        assert!(elo_run(&[Battle { a: 0, b: 1, y: 0.5 }], 2, s, None).is_err());
    }

    #[test]
    fn lasso_shrinks_toward_zero() {
        let battles: Vec<_> = (0..2000).map(|i| Battle { a: 0, b: 1, y: (i % 5 != 0) as u8 as f64 }).collect();
        let plain = elo_run(&battles, 2, StepSchedule::constant(0.1), None).unwrap();
        let lasso = elo_run(&battles, 2, StepSchedule::constant(0.1), Some(0.05)).unwrap();
        assert!(lasso.table.scores[1] < plain.table.scores[1] - 0.1);
        assert!(lasso.table.scores[1] > 0.0);
    }

    #[test]
    fn average_scores_of_full_and_last_tail() {
        let battles = [Battle { a: 0, b: 1, y: 1.0 }, Battle { a: 1, b: 0, y: 1.0 }];
        let run = elo_run(&battles, 2, StepSchedule::constant(0.5), None).unwrap();
        assert_eq!(run.average_scores(2), run.table.scores);
        let all = run.average_scores(0);
        let expected: f64 = run.trajectory.thetas.iter().map(|t| t[1]).sum::<f64>() / 3.0;
        assert!((all[1] - expected).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn signed_residual_is_the_gradient_coordinate(
            raw in prop::collection::vec((0usize..4, 1usize..4, prop::bool::ANY), 1..300),
            eta in 0.01..1.0f64,
        ) {
            let battles: Vec<_> = raw.iter().map(|&(a, off, w)| Battle { a, b: (a + off) % 4, y: w as u8 as f64 }).collect();
            let run = elo_run(&battles, 4, StepSchedule::constant(eta), None).unwrap();
            let avg = mean_gradient(&run.trajectory.grads);
            let t = battles.len() as f64;
            for (m, a) in avg.iter().enumerate() {
                if let Some(sb) = run.table.signed_bias(m) {
                    let via_grad = a * t / run.table.counts[m] as f64;
                    prop_assert!((sb - via_grad).abs() <= 1e-10);
                }
            }
            prop_assert_eq!(run.table_at(battles.len()), run.table.clone());
            prop_assert_eq!(run.table.counts.iter().sum::<usize>(), 2 * battles.len());
        }
    }
}
