//! Determinant estimation from the spherical identity
//! `|A|^{-1} = E_U[ ||A s||^{-n} ]`, with importance sampling through
//! normalizing flows on the sphere.

pub mod cli;
pub mod diffgraph;
pub mod error;
pub mod estimators;
pub mod flows;
pub mod operators;
pub mod sphere;
pub mod train;

pub use error::{Error, Result};
