//! Minimal reverse-mode differentiation for small policy and value networks.
//!
//! All tensors are `f64` [`Matrix`] values with one sample per row. A fresh
//! [`Tape`] records each forward pass; [`Tape::backward_into`] pushes the
//! adjoints of a scalar loss into the [`ParamStore`], and [`Adam`] consumes
//! them.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod functions;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use error::{NnError, Result};
pub use functions::{log_sum_exp, logistic, sigmoid, softmax};
pub use gradcheck::{all_coords, finite_diff_check, param_finite_diff_check, GradCheckReport};
pub use layers::{Activation, Dense, Mlp};
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
