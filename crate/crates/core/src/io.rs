//! Stream, spectrum and tuning-table persistence.
//!
//! Stream CSV layout: a `label,rate,full_scale` header row, one metadata
//! row, then one sample per line. Raw blobs are little-endian `f64` with a
//! `<path>.json` sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::signal::{SampleStream, Spectrum};
use crate::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn write_stream_csv<W: Write>(stream: &SampleStream, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["label", "rate", "full_scale"]).map_err(csv_err)?;
    w.write_record([
        stream.label.clone(),
        stream.rate.to_string(),
        stream.full_scale.to_string(),
    ])
    .map_err(csv_err)?;
    for v in &stream.samples {
        w.write_record([v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stream_csv<R: Read>(input: R) -> Result<SampleStream> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("label") || headers.get(1) != Some("rate") {
        return Err(Error::Parse("expected `label,rate` header".into()));
    }
    let mut records = r.records();
    let meta = records
        .next()
        .ok_or_else(|| Error::Parse("missing metadata row".into()))?
        .map_err(csv_err)?;
    let label = meta.get(0).unwrap_or("").to_string();
    let num = |s: Option<&str>, what: &str| -> Result<f64> {
        s.ok_or_else(|| Error::Parse(format!("missing {what}")))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("{what}: {e}")))
    };
    let rate = num(meta.get(1), "rate")?;
    let full_scale = match meta.get(2) {
        Some(s) if !s.trim().is_empty() => num(Some(s), "full_scale")?,
        _ => 1.0,
    };
    let mut samples = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        samples.push(num(rec.get(0), &format!("sample {i}"))?);
    }
    SampleStream::with_full_scale(samples, rate, label, full_scale)
}

pub fn save_stream_csv(stream: &SampleStream, path: &Path) -> Result<()> {
    write_stream_csv(stream, BufWriter::new(File::create(path)?))
}

pub fn load_stream_csv(path: &Path) -> Result<SampleStream> {
    read_stream_csv(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub schema: u32,
    pub label: String,
    pub rate: f64,
    pub full_scale: f64,
    pub n_samples: usize,
    pub dtype: String,
}

pub const RAW_DTYPE: &str = "f64le";

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_stream_raw(stream: &SampleStream, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &stream.samples {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let meta = RawSidecar {
        schema: 1,
        label: stream.label.clone(),
        rate: stream.rate,
        full_scale: stream.full_scale,
        n_samples: stream.len(),
        dtype: RAW_DTYPE.into(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_stream_raw(path: &Path) -> Result<SampleStream> {
    let meta: RawSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if meta.schema != 1 || meta.dtype != RAW_DTYPE {
        return Err(Error::Parse(format!(
            "unsupported sidecar (schema {}, dtype {})",
            meta.schema, meta.dtype
        )));
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() != 8 * meta.n_samples {
        return Err(Error::LengthMismatch(bytes.len() / 8, meta.n_samples));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    SampleStream::with_full_scale(samples, meta.rate, meta.label, meta.full_scale)
}

pub fn write_spectrum_csv<W: Write>(spec: &Spectrum, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq_hz", "power_dbfs"]).map_err(csv_err)?;
    for (f, p) in spec.bin_freqs.iter().zip(&spec.power_db) {
        w.write_record([f.to_string(), p.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `(x, Hz)` tuning table.
pub fn write_curve_table<W: Write>(points: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "hz"]).map_err(csv_err)?;
    for (x, f) in points {
        w.write_record([x.to_string(), f.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_table<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 {
            return Err(Error::Parse(format!("row {i}: expected 2 columns, got {}", rec.len())));
        }
        let p = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {i}: {e}")))
        };
        out.push((p(0)?, p(1)?));
    }
    Ok(out)
}
