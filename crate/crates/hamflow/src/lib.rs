//! Hamiltonian normalizing flows over learned energies.
//!
//! The crate trains volume-preserving flows whose transformations are
//! leapfrog-integrated Hamiltonian dynamics: a generative sampler trained on
//! data by flowing it back to a base distribution, and a Bayesian posterior
//! sampler trained against a likelihood by flowing prior draws forward. A
//! plain HMC sampler over the same likelihood serves as the reference.

pub mod autodiff;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod generative;
pub mod targets;

pub use autodiff::{AdamConfig, AdamState, DenseNetwork, NodeId, Tape, Tensor};
pub use dynamics::{
    Direction, KineticEnergy, LeapfrogConfig, PhaseState, PotentialEnergy, TapeField,
};
pub use error::{HamflowError, Result};
