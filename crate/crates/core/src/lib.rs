//! Online vector-quantized attention.
//!
//! * [`attention`]: exact softmax attention and the quadratic, linear and
//!   chunked VQ-attention forms, used as reference oracles.
//! * [`engine`]: the streaming OVQ layer with a growing dictionary.
//! * [`gmr`]: batch Gaussian-mixture EM and Gaussian-mixture regression.
//! * [`tasks`]: seeded generators for the synthetic recall and in-context
//!   learning token streams.

#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod engine;
pub mod error;
pub mod gmr;
pub mod matrix;
pub mod tasks;

pub use error::{OvqError, Result};
pub use matrix::{Matrix, Scalar};
