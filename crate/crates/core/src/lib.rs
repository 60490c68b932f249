//! Wasserstein distributional robustness for small feedforward classifiers.
//!
//! The pipeline: [`data`] generates or loads a labeled dataset in the unit
//! box, [`model`] holds a dense network whose gradients come from the
//! reverse-mode engine in [`ndgrad`], [`sensitivity`] computes the first-order
//! sensitivity `Υ`, [`attack`] runs W-FGSM / W-PGD, [`robustness`] turns those
//! into certified accuracy bounds and [`training`] fits networks with the
//! distributionally robust penalties. [`cli`] wires everything into one binary.

pub mod attack;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod ndgrad;
pub mod robustness;
pub mod sensitivity;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
