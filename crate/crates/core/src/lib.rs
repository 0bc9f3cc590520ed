//! Equivariant message-passing potentials: a reverse-mode tape, the network,
//! training, molecular dynamics and vibrational spectra.

pub mod checkpoint;
pub mod diff;
pub mod dynamics;
pub mod elements;
pub mod error;
pub mod geometry;
pub mod io;
pub mod model;
pub mod potentials;
pub mod selftest;
pub mod spectra;
pub mod train;

pub use error::{Error, Result};
