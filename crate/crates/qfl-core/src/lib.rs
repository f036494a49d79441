//! Simulation core for privacy-preserving quantum federated learning:
//! a statevector simulator, variational classifiers, optimizers, privacy
//! mechanisms, QKD-keyed model sharing, dataset condensation and the
//! federated round engine.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod condense;
pub mod data;
pub mod dp;
pub mod error;
pub mod fed;
pub mod linalg;
pub mod modelshare;
pub mod optim;
pub mod qkd;
pub mod qsim;
pub mod rng;
pub mod vqc;

pub use error::{Error, Result};
