//! Geometry-invariant Kolmogorov superposition networks.
//!
//! The crate trains scalar functions of point clouds (energies of atomistic
//! configurations, Lorentz-invariant observables) through features that are
//! invariant to the acting symmetry group, so the model is invariant by
//! construction and its coordinate gradient is exactly equivariant.
//!
//! Modules:
//! - [`invariants`]: frames, metrics, and invariant scalar features.
//! - [`diffengine`]: scalar reverse-mode differentiation tape.
//! - [`network`]: univariate-function layers, MLP baselines, permutation
//!   pooling, forces, checkpoints.
//! - [`datasets`]: synthetic pair-potential datasets and the frames file
//!   format.
//! - [`training`]: Huber loss, AdamW, plateau scheduler, train/evaluate.
//! - [`verify`]: numerical verification of the algebraic identities and
//!   symmetry properties the whole construction rests on.

pub mod datasets;
pub mod diffengine;
pub mod error;
pub mod invariants;
pub mod network;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
