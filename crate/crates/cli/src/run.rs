//! Plan execution, result files and run manifests.
//!
//! Results are written to `<dir>.partial` and renamed into place only once
//! every file and the manifest are complete.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mashvco::calibration::{
    build_lut, calibrate, correct, correct_float, output_metrics, output_spectrum, uncorrected, DecimationSpec,
    LutDiagnostics,
};
use mashvco::io::{save_stream_csv, write_spectrum_csv};
use mashvco::mash::{self, g_opt, simulate, SimResult, SweepRow, ANALYSIS_WINDOW};
use mashvco::signal::{metrics, spectrum, two_tone_metrics, Metrics, Spectrum, TwoToneMetrics};
use mashvco::theory::sqnr_curve;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::spec::{Kind, Plan, SweepPlan, Variant};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUTPUT_ROOT_ENV: &str = "MASHVCO_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: u32,
    pub recipe: String,
    pub kind: Kind,
    pub timestamp: String,
    pub seed: Option<u64>,
    /// SHA-256 of `config.json`, the serialized resolved plan.
    pub config_hash: String,
    pub files: Vec<FileEntry>,
    /// Headline figures, all in dB.
    pub metrics: BTreeMap<String, f64>,
    pub tolerance_db: Option<f64>,
    pub version: String,
}

impl RunManifest {
    /// Reads a manifest file, or `manifest.json` inside a run directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let p = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&p)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output_root: PathBuf,
    /// Overrides both the spec's `output_dir` and `<root>/<name>`.
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunOptions {
    pub fn target_dir(&self, plan: &Plan) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        match &plan.output_dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => self.output_root.join(d),
            None => self.output_root.join(&plan.name),
        }
    }
}

pub fn output_root_from_env() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(plan: &Plan) -> CliResult<String> {
    Ok(sha256_hex(&serde_json::to_vec(plan)?))
}

fn partial_dir(dir: &Path) -> PathBuf {
    let mut s = dir.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Collects result files and headline metrics while a plan executes.
struct Sink {
    dir: PathBuf,
    metrics: BTreeMap<String, f64>,
}

impl Sink {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    fn spectrum(&self, name: &str, sp: &Spectrum) -> CliResult<()> {
        write_spectrum_csv(sp, self.create(name)?)?;
        Ok(())
    }

    fn put(&mut self, key: String, value: f64) {
        self.metrics.insert(key, value);
    }

    fn put_metrics(&mut self, prefix: &str, m: &Metrics) {
        self.put(format!("{prefix}.snr_db"), m.snr_db);
        self.put(format!("{prefix}.sndr_db"), m.sndr_db);
        self.put(format!("{prefix}.sfdr_db"), m.sfdr_db);
    }
}

/// Executes `plan` and publishes its results directory.
pub fn run(plan: &Plan, opts: &RunOptions) -> CliResult<(PathBuf, RunManifest)> {
    let dir = opts.target_dir(plan);
    let partial = partial_dir(&dir);
    if partial.exists() {
        std::fs::remove_dir_all(&partial)?;
    }
    std::fs::create_dir_all(&partial)?;
    let result = in_pool(opts.jobs, || execute(plan, &partial));
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&partial);
            return Err(e);
        }
    };
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::rename(&partial, &dir)?;
    Ok((dir, manifest))
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match jobs {
        Some(0) => Err(CliError::Validation("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Validation(format!("worker pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn execute(plan: &Plan, dir: &Path) -> CliResult<RunManifest> {
    let mut sink = Sink {
        dir: dir.to_path_buf(),
        metrics: BTreeMap::new(),
    };
    let config_json = serde_json::to_vec_pretty(plan)?;
    std::fs::write(sink.path("config.json"), &config_json)?;
    match plan.kind {
        Kind::Theory => run_theory(plan, &mut sink)?,
        Kind::Simulate => run_simulate(plan, &mut sink)?,
        Kind::Sweep => run_sweep(plan, &mut sink)?,
        Kind::Calibration => run_calibration(plan, &mut sink)?,
    }
    if let Some((k, v)) = sink.metrics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(CliError::Numerical(format!("metric {k} is not finite ({v})")));
    }
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA,
        recipe: plan.name.clone(),
        kind: plan.kind,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        seed: plan.variants.first().map(|v| v.config.seed),
        config_hash: config_hash(plan)?,
        files: list_files(dir)?,
        metrics: sink.metrics.clone(),
        tolerance_db: plan.analysis.tolerance_db,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    sink.json(MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

fn list_files(dir: &Path) -> CliResult<Vec<FileEntry>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            out.push(FileEntry {
                sha256: sha256_hex(&std::fs::read(entry.path())?),
                path: name,
            });
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn run_theory(plan: &Plan, sink: &mut Sink) -> CliResult<()> {
    let th = plan.theory.as_ref().expect("theory plan");
    let rows = sqnr_curve(&th.params, &th.osr)?;
    let mut w = sink.create("theory.csv")?;
    writeln!(w, "osr,sqnr_single_db,sqnr_mash_db")?;
    for r in &rows {
        writeln!(w, "{},{},{}", r.osr, r.sqnr_single, r.sqnr_mash)?;
        sink.put(format!("osr{}.sqnr_single_db", r.osr), r.sqnr_single);
        sink.put(format!("osr{}.sqnr_mash_db", r.osr), r.sqnr_mash);
    }
    w.flush()?;
    sink.json("params.json", &th.params)
}

#[derive(Serialize)]
struct VariantReport<'a> {
    name: &'a str,
    g_used: f64,
    clamped_inputs: usize,
    e_min: f64,
    e_max: f64,
    noise_sigma: f64,
    single_tone: BTreeMap<usize, Metrics>,
    two_tone: BTreeMap<usize, TwoToneMetrics>,
}

/// Headline figure used for reference losses: SNR for one tone, SNDR for two.
fn primary(report: &VariantReport, osr: usize) -> Option<f64> {
    report
        .single_tone
        .get(&osr)
        .map(|m| m.snr_db)
        .or_else(|| report.two_tone.get(&osr).map(|m| m.sndr_db))
}

fn analyze_variant<'a>(v: &'a Variant, r: &SimResult, osrs: &[usize]) -> CliResult<(VariantReport<'a>, Spectrum)> {
    let sp = spectrum(&r.d, v.config.n_samples, 1, ANALYSIS_WINDOW)?;
    let mut rep = VariantReport {
        name: &v.name,
        g_used: r.g_used,
        clamped_inputs: r.clamped_inputs,
        e_min: r.e_min,
        e_max: r.e_max,
        noise_sigma: r.noise_sigma,
        single_tone: BTreeMap::new(),
        two_tone: BTreeMap::new(),
    };
    let tones = &v.config.stimulus;
    for &osr in osrs {
        match tones.len() {
            1 => {
                rep.single_tone.insert(osr, metrics(&sp, tones[0].frequency, osr, 5)?);
            }
            _ => {
                rep.two_tone
                    .insert(osr, two_tone_metrics(&sp, tones[0].frequency, tones[1].frequency, osr)?);
            }
        }
    }
    Ok((rep, sp))
}

fn run_simulate(plan: &Plan, sink: &mut Sink) -> CliResult<()> {
    let results: Vec<SimResult> = plan
        .variants
        .par_iter()
        .map(|v| simulate(&v.config).map_err(|e| CliError::from(e).context(format!("variant '{}'", v.name))))
        .collect::<CliResult<_>>()?;
    let mut reports = Vec::new();
    for (v, r) in plan.variants.iter().zip(&results) {
        let osrs = v.osr_list(&plan.analysis);
        let (rep, sp) = analyze_variant(v, r, &osrs).map_err(|e| e.context(format!("variant '{}'", v.name)))?;
        for (osr, m) in &rep.single_tone {
            sink.put_metrics(&format!("{}.osr{osr}", v.name), m);
        }
        for (osr, m) in &rep.two_tone {
            let p = format!("{}.osr{osr}", v.name);
            sink.put(format!("{p}.sndr_db"), m.sndr_db);
            sink.put(format!("{p}.im3_dbc"), m.im3_dbc);
        }
        if plan.analysis.spectrum {
            sink.spectrum(&format!("spectrum_{}.csv", v.name), &sp)?;
        }
        if plan.analysis.streams {
            for s in [&r.d, &r.d1, &r.d2] {
                save_stream_csv(s, &sink.path(&format!("stream_{}_{}.csv", v.name, s.label)))?;
            }
        }
        sink.json(&format!("metrics_{}.json", v.name), &rep)?;
        reports.push(rep);
    }
    for (v, rep) in plan.variants.iter().zip(&reports) {
        let Some(r) = &v.reference else { continue };
        let base = reports.iter().find(|b| b.name == r).expect("reference resolved");
        for osr in v.osr_list(&plan.analysis) {
            if let (Some(a), Some(b)) = (primary(rep, osr), primary(base, osr)) {
                sink.put(format!("{}.osr{osr}.loss_db", v.name), b - a);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    variant: &'a str,
    param: &'a str,
    g_opt: f64,
    rows: &'a [SweepRow],
}

fn run_sweep(plan: &Plan, sink: &mut Sink) -> CliResult<()> {
    let sw: &SweepPlan = plan.sweep.as_ref().expect("sweep plan");
    let all: Vec<Vec<SweepRow>> = plan
        .variants
        .par_iter()
        .map(|v| mash::sweep(&v.config, sw.param, &sw.values))
        .collect();
    for (v, rows) in plan.variants.iter().zip(&all) {
        if let Some((row, err)) = rows.iter().find_map(|r| r.metrics.as_ref().err().map(|e| (r, e))) {
            return Err(CliError::Numerical(format!(
                "variant '{}', {} = {}: {err}",
                v.name, sw.name, row.value
            )));
        }
        let mut w = sink.create(&format!("sweep_{}.csv", v.name))?;
        writeln!(w, "{},snr_db,sndr_db,sfdr_db,thd_db,enob_bits,signal_dbfs", sw.name)?;
        for row in rows {
            let m = row.metrics.as_ref().expect("checked above");
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                row.value, m.snr_db, m.sndr_db, m.sfdr_db, m.thd_db, m.enob_bits, m.signal_dbfs
            )?;
            let p = format!("{}.{}={}", v.name, sw.name, row.value);
            sink.put(format!("{p}.snr_db"), m.snr_db);
            sink.put(format!("{p}.sndr_db"), m.sndr_db);
        }
        w.flush()?;
        if sw.param == mash::SweepParam::Amplitude {
            if let Some(dr) = dynamic_range(rows) {
                sink.put(format!("{}.dr_db", v.name), dr);
            }
        }
        sink.json(
            &format!("sweep_{}.json", v.name),
            &SweepReport {
                variant: &v.name,
                param: &sw.name,
                g_opt: g_opt(&v.config).g,
                rows,
            },
        )?;
    }
    Ok(())
}

/// Input range from the 0 dB SNDR crossing to the strongest input.
///
/// The crossing is extrapolated with unit slope from the weakest input.
pub fn dynamic_range(rows: &[SweepRow]) -> Option<f64> {
    let ok: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.metrics.as_ref().ok().map(|m| (r.value, m.sndr_db)))
        .collect();
    let weakest = ok.iter().copied().min_by(|a, b| a.0.total_cmp(&b.0))?;
    let strongest = ok.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    Some(strongest - (weakest.0 - weakest.1))
}

#[derive(Serialize)]
struct CalibrationReport {
    f_in: f64,
    fit: mashvco::signal::SineFit,
    report: mashvco::calibration::FitReport,
    uncalibrated: Metrics,
    float: Metrics,
    fixed_point: Option<Metrics>,
    lut_diagnostics: Option<LutDiagnostics>,
    clamped_inputs: usize,
}

fn run_calibration(plan: &Plan, sink: &mut Sink) -> CliResult<()> {
    let v = &plan.variants[0];
    let cfg = &v.config;
    let f = cfg.stimulus[0].frequency;
    let r = simulate(cfg)?;
    let dec = DecimationSpec::standard(cfg.fs, cfg.osr)?;
    let edge = dec.post_transient();
    let cal = calibrate(&r.d, f, plan.calibration.orders(), &dec)?;

    let uncal_s = uncorrected(&r.d, &dec)?;
    let float_s = correct_float(&r.d, &cal.model, &dec)?;
    let uncal = output_metrics(&uncal_s, f, edge)?;
    let float = output_metrics(&float_s, f, edge)?;
    sink.put_metrics("uncal", &uncal);
    sink.put_metrics("float", &float);
    std::fs::write(sink.path("model.json"), cal.model.to_json()?)?;

    let mut fixed = None;
    let mut diag = None;
    if plan.calibration.fixed_point {
        let lut = build_lut(&cal.model)?;
        let (lut_s, d) = correct(&r.d, &lut, &dec)?;
        let m = output_metrics(&lut_s, f, edge)?;
        sink.put_metrics("lut", &m);
        sink.put("lut.gap_db".into(), float.sndr_db - m.sndr_db);
        std::fs::write(sink.path("lut.json"), lut.to_json()?)?;
        lut.write_hex(&sink.dir, "lut")?;
        if plan.analysis.spectrum {
            sink.spectrum("spectrum_lut.csv", &output_spectrum(&lut_s, edge)?)?;
        }
        if plan.analysis.streams {
            save_stream_csv(&lut_s, &sink.path("stream_lut.csv"))?;
        }
        fixed = Some(m);
        diag = Some(d);
    }
    if plan.analysis.spectrum {
        sink.spectrum("spectrum_uncal.csv", &output_spectrum(&uncal_s, edge)?)?;
        sink.spectrum("spectrum_float.csv", &output_spectrum(&float_s, edge)?)?;
    }
    if plan.analysis.streams {
        save_stream_csv(&r.d, &sink.path("capture.csv"))?;
        save_stream_csv(&uncal_s, &sink.path("stream_uncal.csv"))?;
        save_stream_csv(&float_s, &sink.path("stream_float.csv"))?;
    }
    sink.json(
        "metrics.json",
        &CalibrationReport {
            f_in: f,
            fit: cal.fit,
            report: cal.report,
            uncalibrated: uncal,
            float,
            fixed_point: fixed,
            lut_diagnostics: diag,
            clamped_inputs: r.clamped_inputs,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, sndr: f64) -> SweepRow {
        let m = Metrics {
            snr_db: sndr,
            sndr_db: sndr,
            sfdr_db: 0.0,
            thd_db: 0.0,
            enob_bits: 0.0,
            signal_dbfs: value,
            band_hz: 1.0,
            n_harmonics: 5,
        };
        SweepRow { value, metrics: Ok(m) }
    }

    #[test]
    fn dynamic_range_extrapolates_weakest_point() {
        let rows = vec![row(-20.0, 50.0), row(-60.0, 12.0), row(-1.0, 70.0)];
        assert_eq!(dynamic_range(&rows), Some(-1.0 - (-60.0 - 12.0)));
        assert_eq!(dynamic_range(&[]), None);
    }

    #[test]
    fn target_dir_rules() {
        let plan = crate::spec::load_plan("fig5_theory", &[]).unwrap();
        let mut o = RunOptions {
            output_root: PathBuf::from("/r"),
            ..RunOptions::default()
        };
        assert_eq!(o.target_dir(&plan), PathBuf::from("/r/fig5_theory"));
        let mut p2 = plan.clone();
        p2.output_dir = Some(PathBuf::from("sub"));
        assert_eq!(o.target_dir(&p2), PathBuf::from("/r/sub"));
        o.output_dir = Some(PathBuf::from("/x"));
        assert_eq!(o.target_dir(&p2), PathBuf::from("/x"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = crate::spec::load_plan("nl_leakage", &[]).unwrap();
        let b = crate::spec::load_plan("nl_leakage", &[]).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c = crate::spec::load_plan("nl_leakage", &["config.seed=1".into()]).unwrap();
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
        assert_eq!(sha256_hex(b"abc").len(), 64);
    }
}
