//! Fourier neural operators for divergence-free stress fields.
//!
//! The crate bundles a real-input spectral toolkit (`spectral`), a periodic
//! finite-strain elasticity solver that produces equilibrated stress data
//! (`mechanics`), a Fourier neural operator with hand-written reverse-mode
//! gradients and three output heads (`fno`), the losses and training loop
//! (`training`), and the command-line front end (`cli`).

pub mod cli;
pub mod error;
pub mod field;
pub mod fno;
pub mod manifest;
pub mod mechanics;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
