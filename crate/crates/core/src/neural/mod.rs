//! Feedforward networks with hand-written backpropagation, the Gaussian
//! actor, both critic variants, Adam and checkpoint I/O.

pub mod adam;
pub mod checkpoint;
pub mod critic;
pub mod gradcheck;
pub mod mlp;
pub mod policy;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use critic::{parity_width, CentralCritic, DecentralCritic};
pub use mlp::{clip_grad_norm, Activation, Mlp};
pub use policy::{GaussianPolicy, PolicySet};
