//! Wavelet tight frames composed with invertible flows, for learned
//! low-resolution representations.

pub mod config;
pub mod error;
pub mod flow;
pub mod framelet;
pub mod io;
pub mod operators;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
