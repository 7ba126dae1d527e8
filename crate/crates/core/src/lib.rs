//! Behavioral time-domain simulation of 1-1 MASH VCO ADCs.
//!
//! The crate is split along the signal chain:
//!
//! * [`signal`]: stimulus generation, spectra, ADC metrics, sine fitting
//! * [`vco`]: ring-oscillator tuning curves and exact phase-edge generation
//! * [`readout`]: QSD sampling, per-phase error pulses, error summation
//! * [`mash`]: single-stage, single-ended MASH and cross-coupled MASH runs
//! * [`theory`]: closed-form SQNR limits
//! * [`calibration`]: frequency-dependent nonlinearity fit and LUT correction
//! * [`io`]: CSV / raw stream persistence

pub mod calibration;
mod error;
pub mod io;
pub mod linalg;
pub mod mash;
pub mod readout;
pub mod signal;
pub mod theory;
pub mod vco;

pub use error::{Error, Result};
