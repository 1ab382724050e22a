//! Projection-free black-box search over high-dimensional prompt spaces.
//!
//! The crate provides:
//!
//! - [`objective`]: the black-box contract, verbalizer cross-entropy and the
//!   confidence-regularized loss, plus synthetic objectives with known
//!   gradient-manifold dimension.
//! - [`projection`]: the frozen random-subspace reparameterization
//!   `x = x_init + A y` and step-size alignment between the two spaces.
//! - [`optim`]: (1+1)-ES and self-adaptive ES with ambient or
//!   intrinsic-dimension damping, zeroth-order SGD and a reference CMA-ES.
//! - [`intrinsic_dim`]: k-NN maximum-likelihood estimation of the intrinsic
//!   dimension of a gradient set.
//! - [`analysis`]: subspace-vs-full-space diagnostics and confidence metrics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod intrinsic_dim;
pub mod objective;
pub mod optim;
pub mod projection;
pub mod rng;

pub use error::{Error, Result};
pub use objective::{Objective, PromptVector};
