//! Sequences that separate no-regret from gradient equilibrium.
//!
//! Each generator returns a [`Construction`]: iterates, the gradients observed at
//! them, the losses (when the sequence is defined through a loss family) and the
//! closed-form values the construction is designed to hit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::descent::Trajectory;
use crate::equilibrium::{mean_gradient, regret};
use crate::losses::LossInstance;
use crate::vecops::norm;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub name: String,
    pub thetas: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
    /// Empty for the spiral, whose rounds are linear losses `g_t·θ`.
    pub losses: Vec<LossInstance>,
    /// Iterate after the last round, when the construction is a dynamic.
    pub next_theta: Option<Vec<f64>>,
    pub analytic: BTreeMap<String, f64>,
}

/// Quantities recomputed from the sequences themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub steps: usize,
    pub avg_gradient: Vec<f64>,
    pub avg_gradient_norm: f64,
    pub avg_loss: Option<f64>,
    pub avg_regret: Option<f64>,
}

impl Construction {
    fn new(name: &str, thetas: Vec<Vec<f64>>, losses: Vec<LossInstance>) -> Result<Self> {
        let grads = losses
            .iter()
            .zip(&thetas)
            .map(|(l, th)| l.subgradient(th))
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.to_string(),
            thetas,
            grads,
            losses,
            next_theta: None,
            analytic: BTreeMap::new(),
        })
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.analytic.insert(key.to_string(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Trajectory view for export; the final iterate is included when known.
    pub fn trajectory(&self) -> Trajectory {
        let mut thetas = self.thetas.clone();
        thetas.extend(self.next_theta.clone());
        Trajectory {
            thetas,
            grads: self.grads.clone(),
            ..Default::default()
        }
    }

    pub fn measure(&self) -> Result<Measured> {
        if self.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let avg_gradient = mean_gradient(&self.grads);
        let (avg_loss, avg_regret) = if self.losses.is_empty() {
            (None, None)
        } else {
            let r = regret(&self.trajectory(), &self.losses)?;
            (Some(r.cumulative_loss / self.len() as f64), Some(r.avg_regret))
        };
        Ok(Measured {
            steps: self.len(),
            avg_gradient_norm: norm(&avg_gradient),
            avg_gradient,
            avg_loss,
            avg_regret,
        })
    }
}

fn harmonic(t: usize) -> f64 {
    (1..=t).map(|k| 1.0 / k as f64).sum()
}

/// `θ_t = 1/t` on `|θ|`: regret vanishes while every gradient is `+1`.
pub fn nr_not_geq_abs(t: usize) -> Result<Construction> {
    if t == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    let thetas = (1..=t).map(|k| vec![1.0 / k as f64]).collect();
    Ok(Construction::new("nr-not-geq-abs", thetas, vec![LossInstance::absolute(0.0); t])?
        .with("avg_gradient", 1.0)
        .with("avg_regret", harmonic(t) / t as f64))
}

/// `θ_t = ±c` alternating on `|θ|`: gradients cancel while regret stays at `c`.
pub fn geq_not_nr_abs(t: usize, c: f64) -> Result<Construction> {
    if t == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    let thetas = (1..=t).map(|k| vec![if k % 2 == 1 { c } else { -c }]).collect();
    Ok(Construction::new("geq-not-nr-abs", thetas, vec![LossInstance::absolute(0.0); t])?
        .with("avg_gradient", (t % 2) as f64 / t as f64)
        .with("avg_regret", c))
}

/// Smallest power of ten that turns `v` into an integer, if one up to `10^12` exists.
fn integer_scale(v: f64) -> Option<i32> {
    (0..=12).find(|&k| {
        let s = v * 10f64.powi(k);
        s.is_finite() && s == s.round() && s.abs() < 9.0e15
    })
}

/// Check `n a + m b = 0` exactly after scaling `a` and `b` to integers.
fn balanced(a: f64, b: f64, n: u64, m: u64) -> Result<bool> {
    let k = integer_scale(a)
        .zip(integer_scale(b))
        .map(|(x, y)| x.max(y))
        .ok_or_else(|| Error::InvalidParameter("a and b must be decimals with at most 12 fractional digits".into()))?;
    let scale = 10f64.powi(k);
    let ai = (a * scale).round() as i128;
    let bi = (b * scale).round() as i128;
    Ok(n as i128 * ai + m as i128 * bi == 0)
}

/// Squared losses on the pattern `(a × n, b × m, ...)` with iterates `(u × n, v × m, ...)`,
/// `u = a`, `v = b + √(αa²/β + b²)`: zero regret with average gradient `√(αβa² + β²b²)`.
pub fn nr_not_geq_squared(a: f64, b: f64, n: u64, m: u64, reps: usize) -> Result<Construction> {
    if !(a < 0.0 && 0.0 < b) {
        return Err(Error::InvalidParameter("need a < 0 < b".into()));
    }
    if !(n > m && m >= 1) {
        return Err(Error::InvalidParameter("need n > m ≥ 1".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if !balanced(a, b, n, m)? {
        return Err(Error::InvalidParameter(format!("n a + m b must be exactly 0, got {}", n as f64 * a + m as f64 * b)));
    }
    let total = (n + m) as f64;
    let alpha = n as f64 / total;
    let beta = m as f64 / total;
    let v = b + (alpha * a * a / beta + b * b).sqrt();
    let mut thetas = Vec::new();
    let mut losses = Vec::new();
    for _ in 0..reps {
        for _ in 0..n {
            thetas.push(vec![a]);
            losses.push(LossInstance::squared(a));
        }
        for _ in 0..m {
            thetas.push(vec![v]);
            losses.push(LossInstance::squared(b));
        }
    }
    Ok(Construction::new("nr-not-geq-squared", thetas, losses)?
        .with("alpha", alpha)
        .with("beta", beta)
        .with("u", a)
        .with("v", v)
        .with("avg_gradient", (alpha * beta * a * a + beta * beta * b * b).sqrt())
        .with("avg_regret", 0.0)
        .with("oracle_avg_squared_error", alpha * a * a + beta * b * b))
}

/// `θ_t = y_t + s_T` for the sample standard deviation `s_T`: zero regret on squared
/// losses, average squared error `s_T²` and bias `s_T`.
pub fn zero_regret_bias(y: &[f64]) -> Result<Construction> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("y must be nonempty".into()));
    }
    let t = y.len() as f64;
    let mean = y.iter().sum::<f64>() / t;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
    let s = var.sqrt();
    let thetas = y.iter().map(|v| vec![v + s]).collect();
    let losses = y.iter().map(|&v| LossInstance::squared(v)).collect();
    Ok(Construction::new("zero-regret-bias", thetas, losses)?
        .with("s", s)
        .with("avg_squared_error", var)
        .with("bias", s)
        .with("avg_regret", 0.0))
}

/// Linear losses whose gradients have norm `L` and stay orthogonal to the iterate, so
/// gradient descent turns counter-clockwise with `‖θ_{T+1}‖² = ‖θ_1‖² + η²L²T`.
pub fn spiral_zero_curvature(theta1: [f64; 2], eta: f64, l: f64, t: usize) -> Result<Construction> {
    if theta1 == [0.0, 0.0] {
        return Err(Error::InvalidParameter("θ_1 must be nonzero".into()));
    }
    if !(eta > 0.0 && l > 0.0) {
        return Err(Error::InvalidParameter("eta and L must be positive".into()));
    }
    let mut theta = theta1.to_vec();
    let mut thetas = Vec::with_capacity(t);
    let mut grads = Vec::with_capacity(t);
    for _ in 0..t {
        let r = norm(&theta);
        let g = vec![l * theta[1] / r, -l * theta[0] / r];
        thetas.push(theta.clone());
        theta = vec![theta[0] - eta * g[0], theta[1] - eta * g[1]];
        grads.push(g);
    }
    let n1 = norm(&theta1);
    let final_sq = n1 * n1 + eta * eta * l * l * t as f64;
    let mut c = Construction {
        name: "spiral".into(),
        thetas,
        grads,
        losses: Vec::new(),
        next_theta: Some(theta),
        analytic: BTreeMap::new(),
    }
    .with("final_norm_sq", final_sq);
    if t > 0 {
        c = c.with("avg_gradient_upper", (n1 + final_sq.sqrt()) / (eta * t as f64));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::dot;
    use proptest::prelude::*;

    #[test]
    fn example_one_nr_side() {
        let c = nr_not_geq_abs(1).unwrap();
        let m = c.measure().unwrap();
        assert_eq!(m.avg_gradient, vec![1.0]);
        assert_eq!(m.avg_regret, Some(1.0));

        let m = nr_not_geq_abs(100).unwrap().measure().unwrap();
        assert_eq!(m.avg_gradient, vec![1.0]);
        assert!((m.avg_regret.unwrap() - 0.0519).abs() < 5e-5);

        let c = nr_not_geq_abs(10_000).unwrap();
        let m = c.measure().unwrap();
        assert!((m.avg_regret.unwrap() - 9.7876e-4).abs() < 1e-8);
        assert!((m.avg_regret.unwrap() - c.analytic["avg_regret"]).abs() < 1e-12);
    }

    #[test]
    fn example_one_geq_side() {
        let m = geq_not_nr_abs(100, 1.0).unwrap().measure().unwrap();
        assert_eq!(m.avg_gradient, vec![0.0]);
        let m = geq_not_nr_abs(101, 2.0).unwrap().measure().unwrap();
        assert!((m.avg_gradient_norm - 1.0 / 101.0).abs() < 1e-15);
        assert!((m.avg_regret.unwrap() - 2.0).abs() < 1e-12);
        let m = geq_not_nr_abs(100, 1e-9).unwrap().measure().unwrap();
        assert!(m.avg_regret.unwrap() < 1e-8);
        assert!(geq_not_nr_abs(10, 0.0).is_err());
    }

    #[test]
    fn example_two() {
        let c = nr_not_geq_squared(-1.0, 2.0, 2, 1, 10).unwrap();
        assert_eq!(c.len(), 30);
        assert!((c.analytic["v"] - (2.0 + 6f64.sqrt())).abs() < 1e-15);
        assert!((c.analytic["v"] - 4.4495).abs() < 1e-4);
        let m = c.measure().unwrap();
        assert!((m.avg_gradient_norm - 6f64.sqrt() / 3.0).abs() < 1e-12);
        assert!((m.avg_gradient_norm - 0.81650).abs() < 1e-5);
        assert!(m.avg_regret.unwrap().abs() <= 1e-12);

        // sample variance of y equals the oracle average squared error
        let ys: Vec<f64> = c.losses.iter().map(|l| l.y).collect();
        let mean = ys.iter().sum::<f64>() / 30.0;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / 30.0;
        assert!((var - 2.0).abs() < 1e-12);
        assert_eq!(c.analytic["oracle_avg_squared_error"], 2.0);

        let r = regret(&c.trajectory(), &c.losses).unwrap();
        assert!(r.oracle_theta[0].abs() < 1e-15);
    }

    #[test]
    fn example_two_exactness_check() {
        assert!(nr_not_geq_squared(-1.0, 2.0, 3, 1, 1).is_err());
        assert!(nr_not_geq_squared(-0.1, 0.2, 2, 1, 1).is_ok());
        assert!(nr_not_geq_squared(-0.3, 0.9, 3, 1, 1).is_ok());
        assert!(nr_not_geq_squared(-1.0 / 3.0, 2.0 / 3.0, 2, 1, 1).is_err());
        assert!(nr_not_geq_squared(1.0, 2.0, 2, 1, 1).is_err());
        assert!(nr_not_geq_squared(-1.0, 1.0, 1, 1, 1).is_err());
    }

    #[test]
    fn zero_regret_bias_examples() {
        let c = zero_regret_bias(&[0.0, 2.0]).unwrap();
        assert_eq!(c.thetas, vec![vec![1.0], vec![3.0]]);
        assert_eq!(c.analytic["avg_squared_error"], 1.0);
        assert_eq!(c.analytic["bias"], 1.0);

        let c = zero_regret_bias(&[4.0; 5]).unwrap();
        assert_eq!(c.analytic["s"], 0.0);
        assert_eq!(c.measure().unwrap().avg_loss, Some(0.0));

        let c = zero_regret_bias(&[-1.0, 0.0, 1.0]).unwrap();
        assert!((c.analytic["avg_squared_error"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.analytic["bias"] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn spiral_examples() {
        let c = spiral_zero_curvature([1.0, 0.0], 1.0, 1.0, 3).unwrap();
        assert!((norm(c.next_theta.as_ref().unwrap()) - 2.0).abs() < 1e-12);
        let c = spiral_zero_curvature([0.3, -0.4], 0.5, 1.0, 0).unwrap();
        assert_eq!(c.next_theta, Some(vec![0.3, -0.4]));
        let c = spiral_zero_curvature([1.0, 0.0], 0.1, 2.0, 100).unwrap();
        let sq = dot(c.next_theta.as_ref().unwrap(), c.next_theta.as_ref().unwrap());
        assert!((sq - 5.0).abs() < 1e-10);
        for (g, th) in c.grads.iter().zip(&c.thetas) {
            assert!(dot(g, th).abs() < 1e-12);
            assert!((norm(g) - 2.0).abs() < 1e-12);
        }
        assert!(spiral_zero_curvature([0.0, 0.0], 0.1, 1.0, 5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn zero_regret_bias_matches_targets(ys in prop::collection::vec(-5.0..5.0f64, 1..200)) {
            let c = zero_regret_bias(&ys).unwrap();
            let m = c.measure().unwrap();
            let sq: f64 = c.thetas.iter().zip(&ys).map(|(th, y)| (th[0] - y).powi(2)).sum::<f64>() / ys.len() as f64;
            prop_assert!((sq - c.analytic["avg_squared_error"]).abs() <= 1e-9);
            prop_assert!(m.avg_gradient_norm >= c.analytic["bias"] - 1e-9);
            prop_assert!(m.avg_regret.unwrap().abs() <= 1e-9);
        }

        #[test]
        fn abs_constructions_match_targets(t in 1usize..2000, c in 0.01..10.0f64) {
            let nr = nr_not_geq_abs(t).unwrap();
            let m = nr.measure().unwrap();
            prop_assert!((m.avg_gradient_norm - nr.analytic["avg_gradient"]).abs() <= 1e-10 * t as f64);
            prop_assert!((m.avg_regret.unwrap() - nr.analytic["avg_regret"]).abs() <= 1e-9);
            let geq = geq_not_nr_abs(t, c).unwrap();
            let m = geq.measure().unwrap();
            prop_assert!((m.avg_gradient_norm - geq.analytic["avg_gradient"]).abs() <= 1e-10 * t as f64);
            prop_assert!((m.avg_regret.unwrap() - geq.analytic["avg_regret"]).abs() <= 1e-9);
        }
    }
}
