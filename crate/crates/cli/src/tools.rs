//! Stand-alone verbs that work on captured streams rather than on specs.

use std::path::Path;

use mashvco::calibration::{
    build_lut, calibrate, correct, correct_float, output_metrics, uncorrected, Calibration, CorrectionLUT,
    DecimationSpec, LutDiagnostics, NlModel, NlOrders,
};
use mashvco::io::{load_stream_csv, load_stream_raw, save_stream_csv, save_stream_raw, sidecar_path};
use mashvco::signal::{spectrum, Metrics, SampleStream, Window};
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// CSV by extension, otherwise raw `f64` with a JSON sidecar.
pub fn load_stream(path: &Path) -> CliResult<SampleStream> {
    let s = if is_csv(path) {
        load_stream_csv(path)
    } else if sidecar_path(path).is_file() {
        load_stream_raw(path)
    } else {
        return Err(CliError::Validation(format!(
            "{}: not a .csv file and no {} sidecar",
            path.display(),
            sidecar_path(path).display()
        )));
    };
    s.map_err(|e| CliError::from(e).context(path.display()))
}

pub fn save_stream(s: &SampleStream, path: &Path) -> CliResult<()> {
    if is_csv(path) {
        save_stream_csv(s, path)?;
    } else {
        save_stream_raw(s, path)?;
    }
    Ok(())
}

/// Strongest in-band bin, skipping the DC region.
pub fn find_tone(s: &SampleStream, osr: usize) -> CliResult<f64> {
    if s.len() < 64 {
        return Err(CliError::Numerical(format!("{} samples are too few to locate a tone", s.len())));
    }
    let n = 1usize << s.len().ilog2();
    let sp = spectrum(s, n, 1, Window::Hann)?;
    let band_bin = ((sp.rate / (2.0 * osr as f64)) / sp.bin_width()).floor() as usize;
    let (k, _) = sp.power_db[..=band_bin.min(sp.power_db.len() - 1)]
        .iter()
        .enumerate()
        .skip(4)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| CliError::Numerical("band too narrow to locate a tone".into()))?;
    Ok(sp.bin_freqs[k])
}

#[derive(Debug, Clone, Serialize)]
pub struct CaptureSummary {
    pub f_in: f64,
    pub uncalibrated: Metrics,
    pub float: Metrics,
    pub fixed_point: Metrics,
    pub lut_diagnostics: LutDiagnostics,
}

/// Fits a model to a full-rate capture and scores it on the same capture.
pub fn calibrate_capture(
    capture: &SampleStream,
    f_in: Option<f64>,
    osr: usize,
    orders: NlOrders,
) -> CliResult<(Calibration, CorrectionLUT, CaptureSummary)> {
    let dec = DecimationSpec::standard(capture.rate, osr)?;
    let f = match f_in {
        Some(f) => f,
        None => find_tone(capture, osr)?,
    };
    let cal = calibrate(capture, f, orders, &dec)?;
    let f = cal.fit.frequency;
    let edge = dec.post_transient();
    let lut = build_lut(&cal.model)?;
    let (lut_s, diag) = correct(capture, &lut, &dec)?;
    let summary = CaptureSummary {
        f_in: f,
        uncalibrated: output_metrics(&uncorrected(capture, &dec)?, f, edge)?,
        float: output_metrics(&correct_float(capture, &cal.model, &dec)?, f, edge)?,
        fixed_point: output_metrics(&lut_s, f, edge)?,
        lut_diagnostics: diag,
    };
    Ok((cal, lut, summary))
}

pub enum Corrector {
    Float(NlModel),
    Lut(CorrectionLUT),
}

impl Corrector {
    /// Accepts either an `nl_model` or a `correction_lut` document.
    pub fn from_json(text: &str, float: bool) -> CliResult<Self> {
        match NlModel::from_json(text) {
            Ok(m) if float => Ok(Corrector::Float(m)),
            Ok(m) => Ok(Corrector::Lut(build_lut(&m)?)),
            Err(model_err) => match CorrectionLUT::from_json(text) {
                Ok(_) if float => Err(CliError::Validation(
                    "--float needs an nl_model document, not a correction_lut".into(),
                )),
                Ok(l) => Ok(Corrector::Lut(l)),
                Err(lut_err) => Err(CliError::Validation(format!(
                    "not a model ({model_err}) nor a LUT ({lut_err})"
                ))),
            },
        }
    }

    /// Decimated, corrected output of a full-rate stream.
    pub fn apply(&self, d: &SampleStream, osr: usize) -> CliResult<(SampleStream, Option<LutDiagnostics>)> {
        let dec = DecimationSpec::standard(d.rate, osr)?;
        Ok(match self {
            Corrector::Float(m) => (correct_float(d, m, &dec)?, None),
            Corrector::Lut(l) => {
                let (s, diag) = correct(d, l, &dec)?;
                (s, Some(diag))
            }
        })
    }
}

pub fn parse_orders(s: &str) -> CliResult<NlOrders> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Validation(format!("orders '{s}': {e}")))?;
    let [ni, nj, nk] = v[..] else {
        return Err(CliError::Validation(format!("orders '{s}': expected ni,nj,nk")));
    };
    let o = NlOrders { ni, nj, nk };
    o.validate()?;
    Ok(o)
}
