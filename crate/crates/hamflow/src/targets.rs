//! Benchmark targets and prior densities: the 9-mode Gaussian mixture, the
//! soft-uniform plateau prior, isotropic Gaussians, and an unnormalized
//! uniform box. Plain evaluators for data generation and diagnostics, plus
//! tape-valued log densities for use inside losses.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{HamflowError, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// A log density evaluable on the tape, one value per sample.
pub trait TapeLogDensity {
    fn dim(&self) -> usize;
    /// `x` has length `batch * dim`; returns a length-`batch` node.
    fn log_density_on(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId>;
}

// ── gaussian mixture ─────────────────────────────────────────────────

/// Equally-shaped Gaussian mixture with shared isotropic covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(centers: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(HamflowError::Config("mixture needs at least one center".into()));
        }
        let dim = centers[0].len();
        if centers.iter().any(|c| c.len() != dim) {
            return Err(HamflowError::Config("mixture centers must share a dimension".into()));
        }
        let n = centers.len();
        Ok(GaussianMixture {
            centers,
            sigma,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// The 3x3 grid of modes at {-s, 0, s}^2 with shared stddev.
    pub fn grid9(spacing: f64, sigma: f64) -> Self {
        let offsets = [-spacing, 0.0, spacing];
        let mut centers = Vec::with_capacity(9);
        for &y in &offsets {
            for &x in &offsets {
                centers.push(vec![x, y]);
            }
        }
        GaussianMixture::new(centers, sigma).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Log density via a max-shifted log-sum-exp over components.
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let log_norm = -0.5 * d * LN_2PI - d * self.sigma.ln();
        let inv2s2 = 0.5 / (self.sigma * self.sigma);
        let mut terms = Vec::with_capacity(self.centers.len());
        for (c, &w) in self.centers.iter().zip(&self.weights) {
            let sq: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            terms.push(w.ln() + log_norm - sq * inv2s2);
        }
        log_sum_exp(&terms)
    }

    /// Ancestral sampling: component index, then a Gaussian draw.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        self.sample_with_components(n, rng).0
    }

    pub fn sample_with_components<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut cum = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        let mut samples = Vec::with_capacity(n);
        let mut components = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let idx = cum.iter().position(|&c| u <= c).unwrap_or(cum.len() - 1);
            samples.push(
                self.centers[idx]
                    .iter()
                    .map(|&c| c + self.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            components.push(idx);
        }
        (samples, components)
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Nearest-center assignment within `radius`; returns per-mode counts.
pub fn mode_occupancy(samples: &[Vec<f64>], centers: &[Vec<f64>], radius: f64) -> Vec<usize> {
    let mut counts = vec![0usize; centers.len()];
    for s in samples {
        let mut best = None;
        let mut best_d2 = radius * radius;
        for (i, c) in centers.iter().enumerate() {
            let d2: f64 = s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= best_d2 {
                best = Some(i);
                best_d2 = d2;
            }
        }
        if let Some(i) = best {
            counts[i] += 1;
        }
    }
    counts
}

// ── soft-uniform ─────────────────────────────────────────────────────

/// Smooth plateau density proportional to s(x+b) s(-x+b) per coordinate,
/// with s the logistic sigmoid. Unnormalized.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SoftUniform {
    pub half_width: f64,
}

impl SoftUniform {
    pub fn new(half_width: f64) -> Self {
        SoftUniform { half_width }
    }

    /// Sum over coordinates of log s(x+b) + log s(b-x); no normalization.
    pub fn logpdf_unnorm(&self, x: &[f64]) -> f64 {
        let b = self.half_width;
        x.iter()
            .map(|&v| log_sigmoid(v + b) + log_sigmoid(b - v))
            .sum()
    }

    /// Exact per-coordinate rejection sampling with a uniform envelope on
    /// [-b-10, b+10] and the plateau value s(b)^2 as the envelope constant.
    pub fn sample<R: Rng>(&self, n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| self.sample_coord(rng)).collect())
            .collect()
    }

    pub fn sample_coord<R: Rng>(&self, rng: &mut R) -> f64 {
        let b = self.half_width;
        let lo = -b - 10.0;
        let hi = b + 10.0;
        let log_envelope = 2.0 * log_sigmoid(b);
        loop {
            let x = rng.gen_range(lo..hi);
            let log_ratio = log_sigmoid(x + b) + log_sigmoid(b - x) - log_envelope;
            if rng.gen::<f64>().ln() < log_ratio {
                return x;
            }
        }
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -(crate::autodiff::softplus(-x))
}

// ── priors ───────────────────────────────────────────────────────────

/// Prior over positions. Soft-uniform and the uniform box are unnormalized;
/// their additive constant shifts losses but not gradients.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    SoftUniform { half_width: f64 },
    Gaussian { sigma: f64 },
    UniformBox { half_width: f64 },
}

impl Prior {
    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        match self {
            Prior::SoftUniform { half_width } => {
                Ok(SoftUniform::new(*half_width).logpdf_unnorm(x))
            }
            Prior::Gaussian { sigma } => {
                let d = x.len() as f64;
                let sq: f64 = x.iter().map(|v| v * v).sum();
                Ok(-0.5 * d * LN_2PI - d * sigma.ln() - 0.5 * sq / (sigma * sigma))
            }
            Prior::UniformBox { half_width } => {
                if x.iter().any(|v| v.abs() > *half_width) {
                    Err(HamflowError::Domain(format!(
                        "point outside the uniform box of half-width {half_width}"
                    )))
                } else {
                    Ok(0.0)
                }
            }
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            Prior::SoftUniform { half_width } => {
                SoftUniform::new(*half_width).sample(n, dim, rng)
            }
            Prior::Gaussian { sigma } => (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect(),
            Prior::UniformBox { half_width } => (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.gen_range(-half_width..*half_width))
                        .collect()
                })
                .collect(),
        }
    }
}

/// A prior paired with the dimension it applies to, usable on the tape.
#[derive(Debug, Clone)]
pub struct PriorDensity {
    pub prior: Prior,
    pub dim: usize,
}

impl TapeLogDensity for PriorDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_on(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let batch = tape.len_of(x) / self.dim;
        match &self.prior {
            Prior::SoftUniform { half_width } => {
                let b = *half_width;
                let plus = tape.offset(x, b);
                let lp = tape.log_sigmoid(plus);
                let negx = tape.neg(x);
                let minus = tape.offset(negx, b);
                let lm = tape.log_sigmoid(minus);
                let s = tape.add(lp, lm);
                Ok(tape.chunk_sum(s, self.dim))
            }
            Prior::Gaussian { sigma } => {
                let d = self.dim as f64;
                let sq = tape.square(x);
                let s = tape.chunk_sum(sq, self.dim);
                let scaled = tape.scale(s, -0.5 / (sigma * sigma));
                Ok(tape.offset(scaled, -0.5 * d * LN_2PI - d * sigma.ln()))
            }
            Prior::UniformBox { half_width } => {
                for (i, chunk) in tape.value(x).chunks(self.dim).enumerate() {
                    if chunk.iter().any(|v| v.abs() > *half_width) {
                        return Err(HamflowError::Loss {
                            sample: i,
                            detail: format!(
                                "position outside the uniform box of half-width {half_width}"
                            ),
                        });
                    }
                }
                Ok(tape.constant(vec![0.0; batch]))
            }
        }
    }
}

/// Standard normal N(0, I) log density; the base momentum distribution and
/// the target momentum density.
#[derive(Debug, Clone, Copy)]
pub struct UnitGaussian {
    pub dim: usize,
}

impl UnitGaussian {
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        -0.5 * (self.dim as f64) * LN_2PI - 0.5 * sq
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

impl TapeLogDensity for UnitGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_on(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let sq = tape.square(x);
        let s = tape.chunk_sum(sq, self.dim);
        let scaled = tape.scale(s, -0.5);
        Ok(tape.offset(scaled, -0.5 * (self.dim as f64) * LN_2PI))
    }
}
