//! Potential and kinetic energies plus the leapfrog integrator.
//!
//! The integrator is the volume-preserving, exactly invertible map the flows
//! are built from: half-kick on the momentum, full drift on the position,
//! half-kick again. Running it with `-dt` undoes it to machine precision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundNet, DenseNetwork, NodeId, Tape, Tensor};
use crate::error::{HamflowError, Result};

/// Position/momentum pair of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(HamflowError::Config(format!(
                "phase state needs equal nonzero dimensions, got q={} p={}",
                q.len(),
                p.len()
            )));
        }
        if !q.iter().chain(p.iter()).all(|v| v.is_finite()) {
            return Err(HamflowError::Config(
                "phase state entries must be finite".into(),
            ));
        }
        Ok(PhaseState { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Integration direction; reverse negates the timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Leapfrog schedule: `steps` steps covering `total_time`, dt = T/L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeapfrogConfig {
    steps: usize,
    total_time: f64,
}

impl LeapfrogConfig {
    pub fn new(steps: usize, total_time: f64) -> Result<Self> {
        if steps < 1 {
            return Err(HamflowError::Config(
                "leapfrog needs at least one step".into(),
            ));
        }
        if !(total_time > 0.0) || !total_time.is_finite() {
            return Err(HamflowError::Config(format!(
                "leapfrog integration time must be positive, got {total_time}"
            )));
        }
        Ok(LeapfrogConfig { steps, total_time })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.steps as f64
    }

    pub fn signed_dt(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Forward => self.dt(),
            Direction::Reverse => -self.dt(),
        }
    }
}

/// A differentiable scalar field over tape nodes: energies and, for HMC,
/// negative log densities. `grad` must stay on the tape so losses can train
/// through it; `value` returns one scalar per sample.
pub trait TapeField {
    fn grad(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId>;
    fn value(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId>;
}

// ── potential energy ─────────────────────────────────────────────────

/// Network potential V(q) with sizes (D, H, H, 1).
#[derive(Debug, Clone)]
pub struct PotentialEnergy {
    pub net: DenseNetwork,
}

impl PotentialEnergy {
    pub fn new<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        PotentialEnergy {
            net: DenseNetwork::new(&[dim, hidden, hidden, 1], rng),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        PotentialEnergy {
            net: DenseNetwork::zeros(&[dim, hidden, hidden, 1]),
        }
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPotential {
        BoundPotential {
            net: self.net.bind(tape),
        }
    }

    /// Plain evaluation for grid dumps.
    pub fn eval(&self, q: &[f64]) -> Result<f64> {
        Ok(self.net.eval(q)?[0])
    }
}

pub struct BoundPotential {
    net: BoundNet,
}

impl BoundPotential {
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.net.param_ids()
    }
}

impl TapeField for BoundPotential {
    fn grad(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.net.input_gradient(tape, x)
    }

    fn value(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        self.net.forward(tape, x)
    }
}

// ── kinetic energy ───────────────────────────────────────────────────

/// Quadratic form K(p) = p^T M p / 2 with M = L L^T + jitter I, where L is a
/// packed lower-triangular factor. M is symmetric positive definite for every
/// parameter value; in 2D the factor holds exactly three trainable scalars.
#[derive(Debug, Clone)]
pub struct FixedQuadraticKinetic {
    dim: usize,
    /// Packed row-major lower triangle, length dim*(dim+1)/2.
    chol: Tensor,
    jitter: f64,
}

pub const DEFAULT_MASS_JITTER: f64 = 1e-4;

impl FixedQuadraticKinetic {
    /// Identity factor: M starts at (1 + jitter) I.
    pub fn identity(dim: usize, jitter: f64) -> Self {
        let n = dim * (dim + 1) / 2;
        let mut data = vec![0.0; n];
        let mut idx = 0;
        for r in 0..dim {
            for c in 0..=r {
                if r == c {
                    data[idx] = 1.0;
                }
                idx += 1;
            }
        }
        FixedQuadraticKinetic {
            dim,
            chol: Tensor::vector(data),
            jitter,
        }
    }

    pub fn from_packed(dim: usize, packed: Vec<f64>, jitter: f64) -> Result<Self> {
        if packed.len() != dim * (dim + 1) / 2 {
            return Err(HamflowError::Config(format!(
                "packed factor for dim {dim} needs {} entries, got {}",
                dim * (dim + 1) / 2,
                packed.len()
            )));
        }
        Ok(FixedQuadraticKinetic {
            dim,
            chol: Tensor::vector(packed),
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn chol(&self) -> &Tensor {
        &self.chol
    }

    pub fn chol_mut(&mut self) -> &mut Tensor {
        &mut self.chol
    }

    /// Dense D x D factor from the packed storage.
    pub fn factor_dense(&self) -> Vec<f64> {
        let d = self.dim;
        let mut full = vec![0.0; d * d];
        let mut idx = 0;
        for r in 0..d {
            for c in 0..=r {
                full[r * d + c] = self.chol.data[idx];
                idx += 1;
            }
        }
        full
    }

    /// Dense mass matrix M = L L^T + jitter I.
    pub fn mass_matrix(&self) -> Vec<f64> {
        let d = self.dim;
        let l = self.factor_dense();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += l[i * d + k] * l[j * d + k];
                }
                m[i * d + j] = acc;
            }
            m[i * d + i] += self.jitter;
        }
        m
    }

    /// Constant 0/1 scatter matrix mapping packed entries to the dense D x D
    /// layout, so the packed vector stays the only trainable tensor.
    fn scatter_matrix(&self) -> Vec<f64> {
        let d = self.dim;
        let n = d * (d + 1) / 2;
        let mut s = vec![0.0; d * d * n];
        let mut idx = 0;
        for r in 0..d {
            for c in 0..=r {
                s[(r * d + c) * n + idx] = 1.0;
                idx += 1;
            }
        }
        s
    }
}

/// Kinetic energy: a network like the potential, or the fixed quadratic form.
#[derive(Debug, Clone)]
pub enum KineticEnergy {
    Mlp(DenseNetwork),
    FixedQuadratic(FixedQuadraticKinetic),
}

impl KineticEnergy {
    pub fn mlp<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        KineticEnergy::Mlp(DenseNetwork::new(&[dim, hidden, hidden, 1], rng))
    }

    pub fn fixed(dim: usize, jitter: f64) -> Self {
        KineticEnergy::FixedQuadratic(FixedQuadraticKinetic::identity(dim, jitter))
    }

    pub fn dim(&self) -> usize {
        match self {
            KineticEnergy::Mlp(net) => net.input_dim(),
            KineticEnergy::FixedQuadratic(f) => f.dim(),
        }
    }

    /// Number of trainable scalars exposed by this variant.
    pub fn trainable_scalars(&self) -> usize {
        match self {
            KineticEnergy::Mlp(net) => net.param_count(),
            KineticEnergy::FixedQuadratic(f) => f.chol.len(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            KineticEnergy::Mlp(net) => net.tensors(),
            KineticEnergy::FixedQuadratic(f) => vec![&f.chol],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            KineticEnergy::Mlp(net) => net.tensors_mut(),
            KineticEnergy::FixedQuadratic(f) => vec![&mut f.chol],
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundKinetic {
        match self {
            KineticEnergy::Mlp(net) => BoundKinetic::Mlp(net.bind(tape)),
            KineticEnergy::FixedQuadratic(f) => {
                let n = f.chol.len();
                let packed = tape.leaf(f.chol.data.clone());
                let scatter = tape.constant(f.scatter_matrix());
                let dense = tape.matvec(scatter, packed, f.dim * f.dim, n);
                BoundKinetic::Fixed {
                    packed,
                    dense,
                    dim: f.dim,
                    jitter: f.jitter,
                }
            }
        }
    }
}

pub enum BoundKinetic {
    Mlp(BoundNet),
    Fixed {
        packed: NodeId,
        dense: NodeId,
        dim: usize,
        jitter: f64,
    },
}

impl BoundKinetic {
    pub fn param_ids(&self) -> Vec<NodeId> {
        match self {
            BoundKinetic::Mlp(net) => net.param_ids(),
            BoundKinetic::Fixed { packed, .. } => vec![*packed],
        }
    }
}

impl TapeField for BoundKinetic {
    fn grad(&self, tape: &mut Tape, p: NodeId) -> Result<NodeId> {
        match self {
            BoundKinetic::Mlp(net) => net.input_gradient(tape, p),
            BoundKinetic::Fixed {
                dense, dim, jitter, ..
            } => {
                // grad K = M p = L (L^T p) + jitter p
                let u = tape.matvec_t(*dense, p, *dim, *dim);
                let lu = tape.matvec(*dense, u, *dim, *dim);
                let jp = tape.scale(p, *jitter);
                Ok(tape.add(lu, jp))
            }
        }
    }

    fn value(&self, tape: &mut Tape, p: NodeId) -> Result<NodeId> {
        match self {
            BoundKinetic::Mlp(net) => net.forward(tape, p),
            BoundKinetic::Fixed {
                dense, dim, jitter, ..
            } => {
                // K = (|L^T p|^2 + jitter |p|^2) / 2 per sample
                let u = tape.matvec_t(*dense, p, *dim, *dim);
                let u2 = tape.square(u);
                let su = tape.chunk_sum(u2, *dim);
                let p2 = tape.square(p);
                let sp = tape.chunk_sum(p2, *dim);
                let jsp = tape.scale(sp, *jitter);
                let tot = tape.add(su, jsp);
                Ok(tape.scale(tot, 0.5))
            }
        }
    }
}

/// K(p) = |p|^2 / 2; used by the HMC baseline.
pub struct StandardKinetic;

impl TapeField for StandardKinetic {
    fn grad(&self, _tape: &mut Tape, p: NodeId) -> Result<NodeId> {
        Ok(p)
    }

    fn value(&self, tape: &mut Tape, p: NodeId) -> Result<NodeId> {
        let n = tape.len_of(p);
        let sq = tape.square(p);
        let s = tape.chunk_sum(sq, n);
        Ok(tape.scale(s, 0.5))
    }
}

/// Evaluate a kinetic energy at a single momentum (spec-level convenience).
pub fn kinetic_eval(kinetic: &KineticEnergy, p: &[f64]) -> Result<f64> {
    if p.len() != kinetic.dim() {
        return Err(HamflowError::Config(format!(
            "momentum dimension {} does not match kinetic dimension {}",
            p.len(),
            kinetic.dim()
        )));
    }
    let mut tape = Tape::new();
    let bound = kinetic.bind(&mut tape);
    let pid = tape.constant(p.to_vec());
    let v = bound.value(&mut tape, pid)?;
    Ok(tape.scalar_value(v))
}

// ── leapfrog ─────────────────────────────────────────────────────────

fn check_finite(tape: &Tape, id: NodeId, step: usize, what: &str) -> Result<()> {
    if tape.value(id).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(HamflowError::Integration {
            step,
            detail: format!("non-finite {what}"),
        })
    }
}

/// One leapfrog step on tape nodes. The sign of `dt` encodes direction; the
/// whole update stays on the graph so losses can train through it.
pub fn leapfrog_step_on(
    tape: &mut Tape,
    q: NodeId,
    p: NodeId,
    dt: f64,
    potential: &impl TapeField,
    kinetic: &impl TapeField,
    step_index: usize,
) -> Result<(NodeId, NodeId)> {
    if dt == 0.0 {
        return Err(HamflowError::Config("leapfrog timestep must be nonzero".into()));
    }
    let gv = potential.grad(tape, q)?;
    let kick = tape.scale(gv, 0.5 * dt);
    let p_half = tape.sub(p, kick);
    check_finite(tape, p_half, step_index, "half-step momentum")?;

    let gk = kinetic.grad(tape, p_half)?;
    let drift = tape.scale(gk, dt);
    let q_next = tape.add(q, drift);
    check_finite(tape, q_next, step_index, "position")?;

    let gv2 = potential.grad(tape, q_next)?;
    let kick2 = tape.scale(gv2, 0.5 * dt);
    let p_next = tape.sub(p_half, kick2);
    check_finite(tape, p_next, step_index, "momentum")?;

    Ok((q_next, p_next))
}

/// L successive leapfrog steps; `record` collects intermediate states when
/// trajectory output is requested. The potential gradient at each new
/// position serves both the trailing half-kick and the next step's leading
/// half-kick, so L steps cost L+1 gradient evaluations.
pub fn integrate_on(
    tape: &mut Tape,
    q: NodeId,
    p: NodeId,
    cfg: &LeapfrogConfig,
    direction: Direction,
    potential: &impl TapeField,
    kinetic: &impl TapeField,
    mut record: Option<&mut Vec<(NodeId, NodeId)>>,
) -> Result<(NodeId, NodeId)> {
    let dt = cfg.signed_dt(direction);
    let (mut q, mut p) = (q, p);
    let mut gv = potential.grad(tape, q)?;
    for step in 0..cfg.steps() {
        let kick = tape.scale(gv, 0.5 * dt);
        let p_half = tape.sub(p, kick);
        check_finite(tape, p_half, step, "half-step momentum")?;

        let gk = kinetic.grad(tape, p_half)?;
        let drift = tape.scale(gk, dt);
        q = tape.add(q, drift);
        check_finite(tape, q, step, "position")?;

        gv = potential.grad(tape, q)?;
        let kick2 = tape.scale(gv, 0.5 * dt);
        p = tape.sub(p_half, kick2);
        check_finite(tape, p, step, "momentum")?;

        if let Some(rec) = record.as_deref_mut() {
            rec.push((q, p));
        }
    }
    Ok((q, p))
}

/// Spec-level single step on a concrete state with concrete energies.
pub fn leapfrog_step(
    state: &PhaseState,
    potential: &PotentialEnergy,
    kinetic: &KineticEnergy,
    dt: f64,
) -> Result<PhaseState> {
    let mut tape = Tape::new();
    let v = potential.bind(&mut tape);
    let k = kinetic.bind(&mut tape);
    let q = tape.constant(state.q.clone());
    let p = tape.constant(state.p.clone());
    let (qn, pn) = leapfrog_step_on(&mut tape, q, p, dt, &v, &k, 0)?;
    PhaseState::new(tape.value(qn).to_vec(), tape.value(pn).to_vec())
}

/// Spec-level L-step integration.
pub fn integrate(
    state: &PhaseState,
    potential: &PotentialEnergy,
    kinetic: &KineticEnergy,
    cfg: &LeapfrogConfig,
    direction: Direction,
) -> Result<PhaseState> {
    Ok(integrate_with_trajectory(state, potential, kinetic, cfg, direction, false)?.0)
}

pub fn integrate_with_trajectory(
    state: &PhaseState,
    potential: &PotentialEnergy,
    kinetic: &KineticEnergy,
    cfg: &LeapfrogConfig,
    direction: Direction,
    record: bool,
) -> Result<(PhaseState, Option<Vec<PhaseState>>)> {
    let mut tape = Tape::new();
    let v = potential.bind(&mut tape);
    let k = kinetic.bind(&mut tape);
    let q = tape.constant(state.q.clone());
    let p = tape.constant(state.p.clone());
    let mut rec = Vec::new();
    let (qn, pn) = integrate_on(
        &mut tape,
        q,
        p,
        cfg,
        direction,
        &v,
        &k,
        record.then_some(&mut rec),
    )?;
    let traj = record.then(|| {
        rec.iter()
            .map(|&(qi, pi)| PhaseState {
                q: tape.value(qi).to_vec(),
                p: tape.value(pi).to_vec(),
            })
            .collect()
    });
    let final_state = PhaseState::new(tape.value(qn).to_vec(), tape.value(pn).to_vec())?;
    Ok((final_state, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// V(q) = |q|^2 / 2 per sample, for closed-form checks.
    pub(crate) struct QuadraticWell {
        pub dim: usize,
    }

    impl TapeField for QuadraticWell {
        fn grad(&self, _tape: &mut Tape, q: NodeId) -> Result<NodeId> {
            Ok(q)
        }
        fn value(&self, tape: &mut Tape, q: NodeId) -> Result<NodeId> {
            let sq = tape.square(q);
            let s = tape.chunk_sum(sq, self.dim);
            Ok(tape.scale(s, 0.5))
        }
    }

    #[test]
    fn kinetic_eval_identity_mass() {
        let k = KineticEnergy::fixed(2, 0.0);
        assert!((kinetic_eval(&k, &[3.0, 4.0]).unwrap() - 12.5).abs() < 1e-15);
    }

    #[test]
    fn kinetic_eval_hand_factor() {
        // L = [[1,0],[1,1]] -> M = [[1,1],[1,2]]; K((1,0)) = 0.5.
        let f = FixedQuadraticKinetic::from_packed(2, vec![1.0, 1.0, 1.0], 0.0).unwrap();
        let m = f.mass_matrix();
        assert_eq!(m, vec![1.0, 1.0, 1.0, 2.0]);
        let k = KineticEnergy::FixedQuadratic(f);
        assert!((kinetic_eval(&k, &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kinetic_eval_zero_momentum() {
        let f = FixedQuadraticKinetic::from_packed(2, vec![0.7, -1.2, 2.0], 0.0).unwrap();
        let k = KineticEnergy::FixedQuadratic(f);
        assert_eq!(kinetic_eval(&k, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn free_particle_step() {
        // V constant, K = |p|^2/2, dt = 1: (0,1) -> (1,1).
        let v = PotentialEnergy::zeros(1, 4);
        let k = KineticEnergy::fixed(1, 0.0);
        let s = PhaseState::new(vec![0.0], vec![1.0]).unwrap();
        let out = leapfrog_step(&s, &v, &k, 1.0).unwrap();
        assert!((out.q[0] - 1.0).abs() < 1e-15);
        assert!((out.p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_step_matches_hand_values() {
        // V = q^2/2, K = p^2/2, dt = 0.1, start (1,0):
        // p_half = -0.05, q1 = 0.995, p1 = -0.05 - 0.995*0.05 = -0.09975.
        let mut tape = Tape::new();
        let q = tape.constant(vec![1.0]);
        let p = tape.constant(vec![0.0]);
        let well = QuadraticWell { dim: 1 };
        let (qn, pn) =
            leapfrog_step_on(&mut tape, q, p, 0.1, &well, &StandardKinetic, 0).unwrap();
        assert!((tape.value(qn)[0] - 0.995).abs() < 1e-15);
        assert!((tape.value(pn)[0] - (-0.09975)).abs() < 1e-15);
    }

    #[test]
    fn step_forward_then_back_recovers_state() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let v = PotentialEnergy::new(2, 8, &mut rng);
        let k = KineticEnergy::mlp(2, 8, &mut rng);
        let s = PhaseState::new(vec![0.3, -0.8], vec![0.5, 1.1]).unwrap();
        let fwd = leapfrog_step(&s, &v, &k, 0.2).unwrap();
        let back = leapfrog_step(&fwd, &v, &k, -0.2).unwrap();
        for d in 0..2 {
            assert!((back.q[d] - s.q[d]).abs() < 1e-12);
            assert!((back.p[d] - s.p[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn integrate_rejects_zero_steps() {
        assert!(LeapfrogConfig::new(0, 1.0).is_err());
    }

    #[test]
    fn harmonic_oscillator_full_period() {
        // T = 2*pi with L = 1000 returns within 0.01 of the start (1, 0).
        let cfg = LeapfrogConfig::new(1000, std::f64::consts::TAU).unwrap();
        let mut tape = Tape::new();
        let q = tape.constant(vec![1.0]);
        let p = tape.constant(vec![0.0]);
        let well = QuadraticWell { dim: 1 };
        let (qn, pn) = integrate_on(
            &mut tape,
            q,
            p,
            &cfg,
            Direction::Forward,
            &well,
            &StandardKinetic,
            None,
        )
        .unwrap();
        assert!((tape.value(qn)[0] - 1.0).abs() < 0.01);
        assert!(tape.value(pn)[0].abs() < 0.01);
    }

    #[test]
    fn integrate_forward_then_reverse_recovers_start() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let v = PotentialEnergy::new(2, 8, &mut rng);
        for kinetic in [KineticEnergy::mlp(2, 8, &mut rng), KineticEnergy::fixed(2, 1e-4)] {
            let cfg = LeapfrogConfig::new(7, 0.9).unwrap();
            let s = PhaseState::new(vec![0.4, -0.2], vec![-0.7, 0.3]).unwrap();
            let fwd = integrate(&s, &v, &kinetic, &cfg, Direction::Forward).unwrap();
            let back = integrate(&fwd, &v, &kinetic, &cfg, Direction::Reverse).unwrap();
            for d in 0..2 {
                assert!((back.q[d] - s.q[d]).abs() < 1e-10);
                assert!((back.p[d] - s.p[d]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn leapfrog_jacobian_determinant_is_one() {
        // Numerical Jacobian of one step (D = 2, central differences).
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let v = PotentialEnergy::new(2, 8, &mut rng);
        let k = KineticEnergy::mlp(2, 8, &mut rng);
        let base = [0.2, -0.5, 0.4, 0.9];
        let h = 1e-5;
        let eval = |z: &[f64]| -> Vec<f64> {
            let s = PhaseState::new(z[..2].to_vec(), z[2..].to_vec()).unwrap();
            let out = leapfrog_step(&s, &v, &k, 0.3).unwrap();
            out.q.iter().chain(out.p.iter()).copied().collect()
        };
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let mut zp = base;
            zp[j] += h;
            let mut zm = base;
            zm[j] -= h;
            let(fp, fm) = (eval(&zp), eval(&zm));
            for i in 0..4 {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = det4(&jac);
        assert!((det - 1.0).abs() < 1e-5, "det {det}");
    }

    fn det4(m: &[[f64; 4]; 4]) -> f64 {
        // Gaussian elimination with partial pivoting.
        let mut a = *m;
        let mut det = 1.0;
        for i in 0..4 {
            let piv = (i..4).max_by(|&r, &s| a[r][i].abs().total_cmp(&a[s][i].abs())).unwrap();
            if piv != i {
                a.swap(i, piv);
                det = -det;
            }
            det *= a[i][i];
            for r in i + 1..4 {
                let f = a[r][i] / a[i][i];
                for c in i..4 {
                    a[r][c] -= f * a[i][c];
                }
            }
        }
        det
    }

    #[test]
    fn energy_error_scales_quadratically_with_dt() {
        // Max harmonic-oscillator energy drift over a fixed horizon drops by
        // about 4x when dt halves.
        let max_energy_error = |steps: usize| -> f64 {
            let cfg = LeapfrogConfig::new(steps, 10.0).unwrap();
            let well = QuadraticWell { dim: 1 };
            let mut tape = Tape::new();
            let q0 = tape.constant(vec![1.0]);
            let p0 = tape.constant(vec![0.0]);
            let mut rec = Vec::new();
            integrate_on(
                &mut tape,
                q0,
                p0,
                &cfg,
                Direction::Forward,
                &well,
                &StandardKinetic,
                Some(&mut rec),
            )
            .unwrap();
            rec.iter()
                .map(|&(q, p)| {
                    let h = 0.5 * (tape.value(q)[0].powi(2) + tape.value(p)[0].powi(2));
                    (h - 0.5).abs()
                })
                .fold(0.0, f64::max)
        };
        let coarse = max_energy_error(100);
        let fine = max_energy_error(200);
        let ratio = coarse / fine;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mass_matrix_stays_positive_definite() {
        // 1000 random packed factors: smallest eigenvalue of M is >= jitter.
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let jitter = 1e-4;
        for _ in 0..1000 {
            let packed: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let f = FixedQuadraticKinetic::from_packed(2, packed, jitter).unwrap();
            let m = f.mass_matrix();
            // Closed-form eigenvalues of a symmetric 2x2 matrix.
            let (a, b, d) = (m[0], m[1], m[3]);
            let tr = a + d;
            let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
            let min_eig = 0.5 * (tr - disc);
            assert!(min_eig >= jitter - 1e-12, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn kinetic_dimension_mismatch_is_config_error() {
        let k = KineticEnergy::fixed(2, 0.0);
        assert!(kinetic_eval(&k, &[1.0]).is_err());
    }

    #[test]
    fn fixed_kinetic_exposes_packed_parameters_only() {
        let k = KineticEnergy::fixed(2, 1e-4);
        assert_eq!(k.trainable_scalars(), 3);
        let mlp = KineticEnergy::Mlp(DenseNetwork::zeros(&[2, 128, 128, 1]));
        assert!(mlp.trainable_scalars() > 15000);
    }
}
