//! Closed-form SQNR limits of single-stage and 1-1 MASH VCO converters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub fs: f64,
    pub osr: f64,
    pub n_phi1: usize,
    pub n_phi2: usize,
    pub f_range1: f64,
    pub f_range2: f64,
    pub f0_1: f64,
    pub f0_2: f64,
    /// Input amplitude relative to the full first-stage range.
    #[serde(default = "one")]
    pub amplitude_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl TheoryParams {
    pub fn table1() -> Self {
        Self {
            fs: 3.5e9,
            osr: 16.0,
            n_phi1: 32,
            n_phi2: 32,
            f_range1: 1.21e9,
            f_range2: 1.57e9,
            f0_1: 1.0e9,
            f0_2: 0.9e9,
            amplitude_fraction: 1.0,
        }
    }

    pub fn with_osr(self, osr: f64) -> Self {
        Self { osr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.fs,
            self.f_range1,
            self.f_range2,
            self.f0_1,
            self.f0_2,
            self.amplitude_fraction,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.n_phi1 == 0 || self.n_phi2 == 0 {
            return Err(Error::Validation("theory parameters must be positive".into()));
        }
        if !(self.osr >= 1.0) {
            return Err(Error::Validation(format!("osr must be >= 1, got {}", self.osr)));
        }
        Ok(())
    }

    fn effective_range1(&self) -> f64 {
        self.amplitude_fraction * self.f_range1
    }
}

/// Second-order limit of the 1-1 MASH with a white second-stage error.
pub fn sqnr_mash(p: &TheoryParams) -> f64 {
    let ratio = p.n_phi2 as f64 * p.effective_range1() * p.f_range2 / (p.fs * p.fs);
    6.02 * ratio.log2() + 50.0 * p.osr.log10() + 0.9052
}

/// First-order limit of a single-stage converter counting both edges.
pub fn sqnr_single(p: &TheoryParams) -> f64 {
    let a = p.n_phi1 as f64 * p.effective_range1() / p.fs;
    10.0 * (a * a / 2.0 * 36.0 * p.osr.powi(3) / (PI * PI)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqnrRow {
    pub osr: f64,
    pub sqnr_single: f64,
    pub sqnr_mash: f64,
}

pub fn sqnr_curve(p: &TheoryParams, osr_values: &[f64]) -> Result<Vec<SqnrRow>> {
    p.validate()?;
    osr_values
        .iter()
        .map(|&osr| {
            let q = p.with_osr(osr);
            q.validate()?;
            Ok(SqnrRow {
                osr,
                sqnr_single: sqnr_single(&q),
                sqnr_mash: sqnr_mash(&q),
            })
        })
        .collect()
}

/// Center of the first PFM sideband, `2 n_phi f0`.
pub fn pfm_sideband_center(n_phi: usize, f0: f64) -> f64 {
    2.0 * n_phi as f64 * f0
}

/// Noise-cancellation gain that equalizes the two stage paths.
pub fn g_opt(fs: f64, n_phi1: usize, n_phi2: usize, f_range2: f64) -> f64 {
    fs * n_phi1 as f64 / (2.0 * n_phi2 as f64 * f_range2)
}
