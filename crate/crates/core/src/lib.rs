//! Photon-counting simulation and analysis for silicon photomultipliers:
//! light sources, detector response, analog readout, count extraction,
//! pulse-height spectra and the two-arm noise reduction factor.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod detector;
pub mod error;
pub mod extraction;
pub mod harness;
pub mod photon;
pub mod rng;
pub mod sim;
pub mod spectrum;
pub mod waveform;

pub use error::{Error, Result};
