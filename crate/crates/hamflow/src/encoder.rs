//! Position-conditioned Gaussian encoder: lifts positions into phase space
//! by drawing artificial momenta p = mu(q) + sigma(q) * eps with a
//! reparameterized draw, and evaluates the exact diagonal-Gaussian
//! log density on the tape.

use rand::Rng;

use crate::autodiff::{BoundNet, DenseNetwork, NodeId, Tape, Tensor};
use crate::error::{HamflowError, Result};
use crate::targets::LN_2PI;

/// Clamp range applied to exp(raw sigma output).
pub const SIGMA_CLAMP: (f64, f64) = (1e-6, 1e6);

/// Two (D, H, H, D) networks for the mean and the log of the stddev.
#[derive(Debug, Clone)]
pub struct GaussianEncoder {
    pub mu_net: DenseNetwork,
    pub sigma_net: DenseNetwork,
}

impl GaussianEncoder {
    pub fn new<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        GaussianEncoder {
            mu_net: DenseNetwork::new(&[dim, hidden, hidden, dim], rng),
            sigma_net: DenseNetwork::new(&[dim, hidden, hidden, dim], rng),
        }
    }

    /// Zero weights: mu = 0 and sigma = exp(0) = 1 everywhere.
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        GaussianEncoder {
            mu_net: DenseNetwork::zeros(&[dim, hidden, hidden, dim]),
            sigma_net: DenseNetwork::zeros(&[dim, hidden, hidden, dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu_net.input_dim()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.mu_net.tensors();
        t.extend(self.sigma_net.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.mu_net.tensors_mut();
        t.extend(self.sigma_net.tensors_mut());
        t
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            mu: self.mu_net.bind(tape),
            sigma: self.sigma_net.bind(tape),
            dim: self.dim(),
        }
    }
}

/// Tape nodes produced by one encoding pass.
pub struct EncoderNodes {
    pub p: NodeId,
    pub mu: NodeId,
    pub sigma: NodeId,
    /// log f(p|q), one entry per sample.
    pub log_density: NodeId,
}

pub struct BoundEncoder {
    mu: BoundNet,
    sigma: BoundNet,
    dim: usize,
}

impl BoundEncoder {
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = self.mu.param_ids();
        ids.extend(self.sigma.param_ids());
        ids
    }

    fn mu_sigma(&self, tape: &mut Tape, q: NodeId) -> Result<(NodeId, NodeId)> {
        let mu = self.mu.forward(tape, q)?;
        let raw = self.sigma.forward(tape, q)?;
        let e = tape.exp(raw);
        let sigma = tape.clamp(e, SIGMA_CLAMP.0, SIGMA_CLAMP.1);
        if !tape.value(mu).iter().all(|v| v.is_finite())
            || !tape.value(sigma).iter().all(|v| v.is_finite())
        {
            return Err(HamflowError::Encoding(
                "encoder produced non-finite mean or stddev".into(),
            ));
        }
        Ok((mu, sigma))
    }

    /// Reparameterized draw: p = mu + sigma * noise, with noise supplied by
    /// the caller's seeded generator.
    pub fn encode(&self, tape: &mut Tape, q: NodeId, noise: &[f64]) -> Result<EncoderNodes> {
        if noise.len() != tape.len_of(q) {
            return Err(HamflowError::Config(format!(
                "noise length {} does not match position length {}",
                noise.len(),
                tape.len_of(q)
            )));
        }
        let (mu, sigma) = self.mu_sigma(tape, q)?;
        let eps = tape.constant(noise.to_vec());
        let scaled = tape.mul(sigma, eps);
        let p = tape.add(mu, scaled);
        let log_density = diag_gaussian_logpdf(tape, p, mu, sigma, self.dim);
        Ok(EncoderNodes {
            p,
            mu,
            sigma,
            log_density,
        })
    }

    /// log f(p|q) for an arbitrary momentum node.
    pub fn log_density(&self, tape: &mut Tape, q: NodeId, p: NodeId) -> Result<NodeId> {
        let (mu, sigma) = self.mu_sigma(tape, q)?;
        Ok(diag_gaussian_logpdf(tape, p, mu, sigma, self.dim))
    }
}

/// Per-sample diagonal Gaussian log pdf on the tape.
fn diag_gaussian_logpdf(
    tape: &mut Tape,
    x: NodeId,
    mu: NodeId,
    sigma: NodeId,
    dim: usize,
) -> NodeId {
    let diff = tape.sub(x, mu);
    let z = tape.div(diff, sigma);
    let z2 = tape.square(z);
    let quad = tape.chunk_sum(z2, dim);
    let log_sigma = tape.ln(sigma);
    let log_det = tape.chunk_sum(log_sigma, dim);
    let half_quad = tape.scale(quad, -0.5);
    let core = tape.sub(half_quad, log_det);
    tape.offset(core, -0.5 * dim as f64 * LN_2PI)
}
