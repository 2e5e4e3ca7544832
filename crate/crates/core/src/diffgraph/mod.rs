//! Reverse-mode differentiation for the flow objective: a scalar tape,
//! the flat parameter store, and the batched conditioner networks.

mod checkpoint;
mod conditioner;
mod params;
mod real;
mod tape;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT};
pub use conditioner::{Conditioner, MlpTrace};
pub use params::{value_and_grad, GradStore, Layout, ParamStore, Segment};
pub use real::Real;
pub use tape::{adjoint_of, Adjoints, Tape, Var};

use crate::error::Result;
use crate::flows::{FlowSpec, SphericalFlow};

/// Builds the parameter vector for `spec`: hidden layers drawn from `seed`,
/// every conditioner head zero so the flow starts as the identity.
pub fn init_params(spec: &FlowSpec, seed: u64) -> Result<ParamStore> {
    Ok(SphericalFlow::with_seed(spec, seed)?.params().clone())
}
