//! Seeded synthetic streams.
//!
//! All randomness comes from a ChaCha8 generator seeded with the spec's 64-bit seed.
//! Uniforms take the top 53 bits of each `u64` draw and normals use the Box–Muller
//! transform with one normal per pair of uniforms, so a given spec produces the same
//! stream on every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::sigmoid;
use crate::pipelines::{Battle, StreamRecord};
use crate::{Error, Result};

/// A piece of a piecewise-constant Gaussian stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub length: usize,
    pub mu: f64,
    pub sigma: f64,
}

/// How group indicators are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GroupAssignment {
    /// Exactly one group per record, drawn with the given proportions.
    Disjoint { proportions: Vec<f64> },
    /// Each membership bit is an independent coin with the given probability.
    Overlapping { probabilities: Vec<f64> },
}

impl GroupAssignment {
    pub fn dim(&self) -> usize {
        match self {
            GroupAssignment::Disjoint { proportions } => proportions.len(),
            GroupAssignment::Overlapping { probabilities } => probabilities.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StreamKind {
    /// `y ~ N(μ, σ²)`, `f = 0`.
    IidGaussian { mu: f64, sigma: f64, length: usize },
    PiecewiseShift { segments: Vec<Segment> },
    /// `y_t ~ N(rate·t, σ²)`, `f = 0`.
    DriftingMean { rate: f64, sigma: f64, length: usize },
    /// `y ~ U[low, high]`, `f = 0`.
    Uniform { low: f64, high: f64, length: usize },
    Constant { value: f64, length: usize },
    /// True probability `q ~ U[p_low, p_high]`, label `y ~ Bernoulli(q)`, forecast `f = q + offset`
    /// clamped to `[0, 1]`.
    BernoulliCalibrated {
        length: usize,
        p_low: f64,
        p_high: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Battles between uniformly drawn distinct pairs; model `b` wins with probability
    /// `σ(s_b − s_a)`.
    BradleyTerry { strengths: Vec<f64>, battles: usize },
    /// A base stream with group indicators. Each active group `j` shifts the response by
    /// `offsets[j]` for real-valued bases, or the forecast by `offsets[j]` for Bernoulli bases.
    Grouped {
        base: Box<StreamKind>,
        assignment: GroupAssignment,
        #[serde(default)]
        offsets: Vec<f64>,
    },
}

/// Generator configuration. When `bound` is set, real-valued `y` and `f` are clipped to `[−b, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    #[serde(rename = "stream")]
    pub kind: StreamKind,
    pub seed: u64,
    #[serde(default)]
    pub bound: Option<f64>,
}

/// Uniform and normal draws on top of ChaCha8.
#[derive(Debug, Clone)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn check_length(length: usize) -> Result<()> {
    if length == 0 {
        return Err(invalid("stream length must be positive"));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    Ok(())
}

impl StreamKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            StreamKind::IidGaussian { mu, sigma, length } => {
                check_length(*length)?;
                check_sigma(*sigma)?;
                if !mu.is_finite() {
                    return Err(invalid("mu must be finite"));
                }
            }
            StreamKind::PiecewiseShift { segments } => {
                if segments.is_empty() {
                    return Err(invalid("at least one segment is required"));
                }
                for s in segments {
                    check_length(s.length)?;
                    check_sigma(s.sigma)?;
                    if !s.mu.is_finite() {
                        return Err(invalid("segment means must be finite"));
                    }
                }
            }
            StreamKind::DriftingMean { rate, sigma, length } => {
                check_length(*length)?;
                check_sigma(*sigma)?;
                if !rate.is_finite() {
                    return Err(invalid("rate must be finite"));
                }
            }
            StreamKind::Uniform { low, high, length } => {
                check_length(*length)?;
                if !(low <= high && low.is_finite() && high.is_finite()) {
                    return Err(invalid("uniform range must be finite with low ≤ high"));
                }
            }
            StreamKind::Constant { value, length } => {
                check_length(*length)?;
                if !value.is_finite() {
                    return Err(invalid("constant must be finite"));
                }
            }
            StreamKind::BernoulliCalibrated { length, p_low, p_high, offset } => {
                check_length(*length)?;
                if !(0.0 <= *p_low && p_low <= p_high && *p_high <= 1.0) {
                    return Err(invalid("need 0 ≤ p_low ≤ p_high ≤ 1"));
                }
                if !offset.is_finite() {
                    return Err(invalid("offset must be finite"));
                }
            }
            StreamKind::BradleyTerry { strengths, battles } => {
                check_length(*battles)?;
                if strengths.len() < 2 {
                    return Err(invalid("at least two models are required"));
                }
                if strengths.iter().any(|s| !s.is_finite()) {
                    return Err(invalid("strengths must be finite"));
                }
            }
            StreamKind::Grouped { base, assignment, offsets } => {
                if matches!(**base, StreamKind::Grouped { .. } | StreamKind::BradleyTerry { .. }) {
                    return Err(invalid("grouped streams need a scalar base stream"));
                }
                base.validate()?;
                let d = assignment.dim();
                if d == 0 {
                    return Err(invalid("at least one group is required"));
                }
                match assignment {
                    GroupAssignment::Disjoint { proportions } => {
                        if proportions.iter().any(|p| !(*p >= 0.0)) || (proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                            return Err(invalid("proportions must be nonnegative and sum to 1"));
                        }
                    }
                    GroupAssignment::Overlapping { probabilities } => {
                        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
                            return Err(invalid("membership probabilities must lie in [0, 1]"));
                        }
                    }
                }
                if !offsets.is_empty() && offsets.len() != d {
                    return Err(invalid(format!("expected {d} offsets, found {}", offsets.len())));
                }
            }
        }
        Ok(())
    }

    fn is_classification(&self) -> bool {
        match self {
            StreamKind::BernoulliCalibrated { .. } => true,
            StreamKind::Grouped { base, .. } => base.is_classification(),
            _ => false,
        }
    }

    fn scalar(&self, rng: &mut StreamRng, out: &mut Vec<StreamRecord>) {
        match self {
            StreamKind::IidGaussian { mu, sigma, length } => {
                out.extend((0..*length).map(|_| StreamRecord::new(0.0, mu + sigma * rng.normal())));
            }
            StreamKind::PiecewiseShift { segments } => {
                for s in segments {
                    out.extend((0..s.length).map(|_| StreamRecord::new(0.0, s.mu + s.sigma * rng.normal())));
                }
            }
            StreamKind::DriftingMean { rate, sigma, length } => {
                out.extend((1..=*length).map(|t| StreamRecord::new(0.0, rate * t as f64 + sigma * rng.normal())));
            }
            StreamKind::Uniform { low, high, length } => {
                out.extend((0..*length).map(|_| StreamRecord::new(0.0, low + (high - low) * rng.uniform())));
            }
            StreamKind::Constant { value, length } => {
                out.extend((0..*length).map(|_| StreamRecord::new(0.0, *value)));
            }
            StreamKind::BernoulliCalibrated { length, p_low, p_high, offset } => {
                out.extend((0..*length).map(|_| {
                    let q = p_low + (p_high - p_low) * rng.uniform();
                    let y = rng.bernoulli(q) as u8 as f64;
                    StreamRecord::new((q + offset).clamp(0.0, 1.0), y)
                }));
            }
            StreamKind::BradleyTerry { .. } | StreamKind::Grouped { .. } => unreachable!("validated"),
        }
    }
}

impl StreamSpec {
    pub fn new(kind: StreamKind, seed: u64) -> Self {
        Self { kind, seed, bound: None }
    }

    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid(format!("bound must be positive, got {b}")));
            }
        }
        self.kind.validate()
    }
}

/// Generate the records of a scalar or grouped stream.
pub fn generate(spec: &StreamSpec) -> Result<Vec<StreamRecord>> {
    spec.validate()?;
    let mut rng = StreamRng::new(spec.seed);
    let mut out = Vec::new();
    match &spec.kind {
        StreamKind::BradleyTerry { .. } => {
            return Err(invalid("Bradley–Terry specs produce battles; use generate_battles"));
        }
        StreamKind::Grouped { base, assignment, offsets } => {
            base.scalar(&mut rng, &mut out);
            let classification = base.is_classification();
            for r in out.iter_mut() {
                let z: Vec<f64> = match assignment {
                    GroupAssignment::Disjoint { proportions } => {
                        let u = rng.uniform();
                        let mut acc = 0.0;
                        let mut pick = proportions.len() - 1;
                        for (j, p) in proportions.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = j;
                                break;
                            }
                        }
                        (0..proportions.len()).map(|j| (j == pick) as u8 as f64).collect()
                    }
                    GroupAssignment::Overlapping { probabilities } => {
                        probabilities.iter().map(|p| rng.bernoulli(*p) as u8 as f64).collect()
                    }
                };
                let shift: f64 = offsets.iter().zip(&z).map(|(o, zj)| o * zj).sum();
                if classification {
                    r.f = (r.f + shift).clamp(0.0, 1.0);
                } else {
                    r.y += shift;
                }
                r.z = Some(z);
            }
        }
        kind => kind.scalar(&mut rng, &mut out),
    }
    if let (Some(b), false) = (spec.bound, spec.kind.is_classification()) {
        for r in out.iter_mut() {
            r.y = r.y.clamp(-b, b);
            r.f = r.f.clamp(-b, b);
        }
    }
    Ok(out)
}

/// Generate the battles of a Bradley–Terry spec.
pub fn generate_battles(spec: &StreamSpec) -> Result<Vec<Battle>> {
    spec.validate()?;
    let StreamKind::BradleyTerry { strengths, battles } = &spec.kind else {
        return Err(invalid("battles can only be generated from a Bradley–Terry spec"));
    };
    let m = strengths.len();
    let mut rng = StreamRng::new(spec.seed);
    Ok((0..*battles)
        .map(|_| {
            let a = rng.index(m);
            let mut b = rng.index(m - 1);
            if b >= a {
                b += 1;
            }
            let y = rng.bernoulli(sigmoid(strengths[b] - strengths[a])) as u8 as f64;
            Battle { a, b, y }
        })
        .collect())
}

/// Scores `s_t = y_t − f_t` clipped to `[−b, b]`.
pub fn bounded_scores(spec: &StreamSpec, b: f64) -> Result<Vec<f64>> {
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!("b must be positive, got {b}")));
    }
    Ok(generate(spec)?.iter().map(|r| (r.y - r.f).clamp(-b, b)).collect())
}

/// A stable stream that ends with an abrupt regime change: `N(0, 1)` for the first 90%
/// and `N(−2, 0.5²)` for the final 10%.
pub fn regime_switch_preset(length: usize, seed: u64) -> StreamSpec {
    let tail = (length / 10).max(1);
    let head = length.saturating_sub(tail).max(1);
    StreamSpec::new(
        StreamKind::PiecewiseShift {
            segments: vec![
                Segment {
                    length: head,
                    mu: 0.0,
                    sigma: 1.0,
                },
                Segment {
                    length: tail,
                    mu: -2.0,
                    sigma: 0.5,
                },
            ],
        },
        seed,
    )
}
