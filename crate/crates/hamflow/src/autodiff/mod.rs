//! Reverse-mode AD core: tape, dense networks, Adam.

mod adam;
mod net;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use net::{BoundNet, DenseNetwork, Tensor};
pub use tape::{NodeId, Tape};

pub(crate) use tape::{sigmoid, softplus};
