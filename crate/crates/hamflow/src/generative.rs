//! Generative flow: train on target samples by encoding momenta, flowing the
//! phase-space points backward to the base distribution, and maximizing the
//! evidence lower bound; sample by flowing base draws forward.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, NodeId, Tape, Tensor};
use crate::dynamics::{
    integrate_on, BoundKinetic, BoundPotential, Direction, KineticEnergy, LeapfrogConfig,
    PotentialEnergy,
};
use crate::encoder::{BoundEncoder, GaussianEncoder};
use crate::error::{HamflowError, Result};
use crate::targets::{Prior, PriorDensity, TapeLogDensity, UnitGaussian};

/// The generative model: encoder, energies, leapfrog schedule and the base
/// joint (position prior plus standard-normal momentum density).
#[derive(Debug, Clone)]
pub struct GenerativeNHF {
    pub encoder: GaussianEncoder,
    pub potential: PotentialEnergy,
    pub kinetic: KineticEnergy,
    pub leapfrog: LeapfrogConfig,
    pub prior: Prior,
}

impl GenerativeNHF {
    pub fn new(
        encoder: GaussianEncoder,
        potential: PotentialEnergy,
        kinetic: KineticEnergy,
        leapfrog: LeapfrogConfig,
        prior: Prior,
    ) -> Result<Self> {
        let dim = encoder.dim();
        if potential.dim() != dim || kinetic.dim() != dim {
            return Err(HamflowError::Config(format!(
                "model dimensions disagree: encoder {dim}, potential {}, kinetic {}",
                potential.dim(),
                kinetic.dim()
            )));
        }
        Ok(GenerativeNHF {
            encoder,
            potential,
            kinetic,
            leapfrog,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.encoder.tensors();
        t.extend(self.potential.net.tensors());
        t.extend(self.kinetic.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.potential.net.tensors_mut());
        t.extend(self.kinetic.tensors_mut());
        t
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundGenerative {
        let encoder = self.encoder.bind(tape);
        let potential = self.potential.bind(tape);
        let kinetic = self.kinetic.bind(tape);
        BoundGenerative {
            encoder,
            potential,
            kinetic,
        }
    }

    /// Negative-ELBO graph for a flat minibatch (`batch * dim` positions,
    /// one noise draw of the same length per Monte Carlo sample).
    pub fn elbo_loss_graph(&self, q_batch: &[f64], noises: &[Vec<f64>]) -> Result<LossGraph> {
        let dim = self.dim();
        if q_batch.is_empty() || q_batch.len() % dim != 0 {
            return Err(HamflowError::Config(format!(
                "minibatch length {} is not a positive multiple of dim {dim}",
                q_batch.len()
            )));
        }
        if noises.is_empty() || noises.iter().any(|n| n.len() != q_batch.len()) {
            return Err(HamflowError::Config(
                "need one full noise vector per Monte Carlo draw".into(),
            ));
        }
        let batch = q_batch.len() / dim;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let param_ids = bound.param_ids();
        let q_t = tape.constant(q_batch.to_vec());

        let prior = PriorDensity {
            prior: self.prior.clone(),
            dim,
        };
        let momentum_base = UnitGaussian { dim };

        let mut per_draw = Vec::with_capacity(noises.len());
        for noise in noises {
            let enc = bound.encoder.encode(&mut tape, q_t, noise)?;
            let (q0, p0) = integrate_on(
                &mut tape,
                q_t,
                enc.p,
                &self.leapfrog,
                Direction::Reverse,
                &bound.potential,
                &bound.kinetic,
                None,
            )?;
            let log_prior = prior.log_density_on(&mut tape, q0)?;
            let log_momentum = momentum_base.log_density_on(&mut tape, p0)?;
            let log_base = tape.add(log_prior, log_momentum);
            let elbo = tape.sub(log_base, enc.log_density);
            per_draw.push(elbo);
        }
        let mut acc = per_draw[0];
        for &node in &per_draw[1..] {
            acc = tape.add(acc, node);
        }
        let total = tape.sum(acc);
        let loss = tape.scale(total, -1.0 / (batch as f64 * noises.len() as f64));

        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            let per_sample = tape.value(acc);
            let bad = per_sample.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(HamflowError::Loss {
                sample: bad,
                detail: "non-finite ELBO term".into(),
            });
        }
        Ok(LossGraph {
            tape,
            loss,
            param_ids,
        })
    }

    /// Loss value only.
    pub fn elbo_loss(&self, q_batch: &[f64], noise: &[f64]) -> Result<f64> {
        Ok(self
            .elbo_loss_graph(q_batch, std::slice::from_ref(&noise.to_vec()))?
            .value())
    }

    /// Flow base draws forward; returns positions and momenta.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let dim = self.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let momentum_base = UnitGaussian { dim };
        let mut positions = Vec::with_capacity(n);
        let mut momenta = Vec::with_capacity(n);
        let chunk = 4096;
        let mut remaining = n;
        while remaining > 0 {
            let take = remaining.min(chunk);
            let q0: Vec<f64> = self
                .prior
                .sample(take, dim, &mut rng)
                .into_iter()
                .flatten()
                .collect();
            let p0: Vec<f64> = (0..take)
                .flat_map(|_| momentum_base.sample(&mut rng))
                .collect();
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let q0_id = tape.constant(q0);
            let p0_id = tape.constant(p0);
            let (q_t, p_t) = integrate_on(
                &mut tape,
                q0_id,
                p0_id,
                &self.leapfrog,
                Direction::Forward,
                &bound.potential,
                &bound.kinetic,
                None,
            )?;
            positions.extend(tape.value(q_t).chunks(dim).map(|c| c.to_vec()));
            momenta.extend(tape.value(p_t).chunks(dim).map(|c| c.to_vec()));
            remaining -= take;
        }
        Ok((positions, momenta))
    }
}

pub struct BoundGenerative {
    pub encoder: BoundEncoder,
    pub potential: BoundPotential,
    pub kinetic: BoundKinetic,
}

impl BoundGenerative {
    /// Leaf ids in the same order as `GenerativeNHF::tensors`.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.potential.param_ids());
        ids.extend(self.kinetic.param_ids());
        ids
    }
}

/// A built loss graph: evaluate, then pull parameter gradients.
pub struct LossGraph {
    pub tape: Tape,
    pub loss: NodeId,
    param_ids: Vec<NodeId>,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.tape.scalar_value(self.loss)
    }

    pub fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        self.tape.backward(self.loss)?;
        Ok(self
            .param_ids
            .iter()
            .map(|&id| self.tape.adjoint(id).to_vec())
            .collect())
    }
}

// ── training ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Monte Carlo momentum draws per position per loss evaluation.
    pub mc_samples: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            batch_size: 512,
            adam: AdamConfig::default(),
            seed: 0,
            mc_samples: 1,
        }
    }
}

/// One epoch of the loss trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Negative ELBO averaged over the epoch's minibatches.
    pub loss: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Minibatch training with Adam. Deterministic for a fixed seed. On a
/// non-finite loss the parameters roll back to the last completed epoch and
/// a divergence error is returned.
pub fn train(
    model: &mut GenerativeNHF,
    dataset: &[Vec<f64>],
    opts: &TrainOptions,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    if dataset.is_empty() {
        return Err(HamflowError::Config("training dataset is empty".into()));
    }
    let dim = model.dim();
    if dataset.iter().any(|s| s.len() != dim) {
        return Err(HamflowError::Config(format!(
            "dataset samples must have dimension {dim}"
        )));
    }
    if opts.batch_size == 0 || opts.mc_samples == 0 {
        return Err(HamflowError::Config(
            "batch size and Monte Carlo draws must be positive".into(),
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new(opts.adam);
    let mut records = Vec::with_capacity(opts.epochs);
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut snapshot: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    let start = Instant::now();

    for epoch in 0..opts.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in indices.chunks(opts.batch_size) {
            let mut q = Vec::with_capacity(batch_idx.len() * dim);
            for &i in batch_idx {
                q.extend_from_slice(&dataset[i]);
            }
            let noises: Vec<Vec<f64>> = (0..opts.mc_samples)
                .map(|_| {
                    (0..q.len())
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let graph = model.elbo_loss_graph(&q, &noises);
            let mut graph = match graph {
                Ok(g) => g,
                Err(err) => {
                    restore(model, &snapshot);
                    return Err(HamflowError::Divergence {
                        epoch,
                        detail: err.to_string(),
                    });
                }
            };
            let loss = graph.value();
            if !loss.is_finite() {
                restore(model, &snapshot);
                return Err(HamflowError::Divergence {
                    epoch,
                    detail: format!("minibatch loss {loss}"),
                });
            }
            let grads = graph.gradients()?;
            let mut tensors = model.tensors_mut();
            adam.step(&mut tensors, &grads)?;
            epoch_loss += loss * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        snapshot = model.tensors().into_iter().cloned().collect();
        let record = TrainRecord {
            epoch,
            loss: epoch_loss / seen as f64,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_record(&record);
        records.push(record);
    }
    Ok(records)
}

fn restore(model: &mut GenerativeNHF, snapshot: &[Tensor]) {
    for (t, s) in model.tensors_mut().into_iter().zip(snapshot) {
        t.data.copy_from_slice(&s.data);
    }
}

/// Draw standard-normal noise vectors with a caller-owned generator.
pub fn draw_noise<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
