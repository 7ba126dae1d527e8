use std::f64::consts::PI;
use std::sync::OnceLock;

use mashvco::calibration::{
    apply_float, build_lut, calibrate, calibrate_at_rate, correct, correct_float, output_metrics,
    uncorrected, DecimationSpec, NlModel, NlOrders,
};
use mashvco::mash::{simulate, Architecture, SimConfig, SimResult};
use mashvco::signal::{coherent_bin_frequency, decompose, sine_fit, SampleStream};
use mashvco::vco::TuningCurve;

const FS: f64 = 3.5e9;

fn tone(a: f64, f: f64, rate: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a * (2.0 * PI * f * k as f64 / rate + 0.4).sin()).collect()
}

fn rms_db(v: &[f64], a: f64) -> f64 {
    let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    10.0 * (ms / (a * a / 2.0)).log10()
}

#[test]
fn out_of_band_tone_is_rejected_by_each_decimator() {
    let dec = DecimationSpec::standard(FS, 16).unwrap();
    let n = 65536;
    let x = SampleStream::new(tone(1.0, 0.45 * FS, FS, n), FS, "x").unwrap();
    let pre = dec.pre_decimate(&x).unwrap();
    let e = dec.pre_transient();
    let core = &pre.samples[e..pre.len() - e];
    assert!(rms_db(core, 1.0) <= -80.0, "pre: {}", rms_db(core, 1.0));

    let rate = FS / 4.0;
    let y = SampleStream::new(tone(1.0, 0.45 * rate, rate, n), rate, "y").unwrap();
    let post = dec.post_decimate(&y).unwrap();
    let e = dec.post_transient();
    let core = &post.samples[e..post.len() - e];
    assert!(rms_db(core, 1.0) <= -80.0, "post: {}", rms_db(core, 1.0));
}

#[test]
fn in_band_tone_keeps_its_amplitude() {
    let dec = DecimationSpec::standard(FS, 16).unwrap();
    let n = 65536;
    for f in [1e6, 26.5e6, 98e6] {
        let x = SampleStream::new(tone(0.5, f, FS, n), FS, "x").unwrap();
        let out = uncorrected(&x, &dec).unwrap();
        let e = dec.post_transient();
        let core = out.slice(e, out.len() - 2 * e).unwrap();
        let fit = sine_fit(&core, f).unwrap();
        let db = 20.0 * (fit.amplitude / 0.5).log10();
        assert!(db.abs() <= 0.01, "{f}: {db} dB");
    }
}

fn injected() -> NlModel {
    NlModel {
        orders: NlOrders { ni: 3, nj: 3, nk: 1 },
        a: vec![0.0, 0.0, 0.002, 0.004],
        b: vec![0.0, 0.0, 0.02],
        c: vec![1.0],
        offset: 0.0,
        scale: 1.0,
    }
}

#[test]
fn injected_nonlinearity_is_removed_below_minus_90_dbfs() {
    let n = 32768;
    let rate = FS / 4.0;
    let f = coherent_bin_frequency(26.5e6, rate, n);
    let x = SampleStream::new(tone(0.9, f, rate, n), rate, "x").unwrap();
    let nl = injected().eval_normalized(&x.samples);
    let d: Vec<f64> = x.samples.iter().zip(&nl).map(|(a, b)| a + b).collect();
    let d = x.derive(d, "d").unwrap();

    let before = decompose(&d, &sine_fit(&d, f).unwrap(), 5).unwrap();
    let cal = calibrate_at_rate(&d, f, NlOrders::DEFAULT).unwrap();
    let corrected = apply_float(&cal.model, &d).unwrap();
    let after = decompose(&corrected, &sine_fit(&corrected, f).unwrap(), 5).unwrap();

    let dbfs = |s: &SampleStream| 10.0 * (s.mean_square() / 0.5).log10();
    assert!(dbfs(&before.dist) > -60.0, "before {}", dbfs(&before.dist));
    assert!(dbfs(&after.dist) <= -90.0, "after {}", dbfs(&after.dist));
}

/// Stage-1 dynamic nonlinearity capture, tone coherent in the output window.
fn capture() -> &'static SimResult {
    static CAPTURE: OnceLock<SimResult> = OnceLock::new();
    CAPTURE.get_or_init(|| {
        let mut c = SimConfig::table1(Architecture::MashCc);
        c.curve1 = TuningCurve::stage1_dynamic_nl();
        c.n_samples = 32768;
        c.stimulus[0].frequency = coherent_bin_frequency(26.5e6, c.fs, c.n_samples);
        c.n_samples *= 2;
        simulate(&c).unwrap()
    })
}

fn linear_capture() -> SimResult {
    let mut c = SimConfig::table1(Architecture::MashCc);
    c.n_samples = 32768;
    c.stimulus[0].frequency = coherent_bin_frequency(26.5e6, c.fs, c.n_samples);
    c.n_samples *= 2;
    simulate(&c).unwrap()
}

#[test]
fn correction_after_pre_decimation_beats_full_rate_correction() {
    let r = capture();
    let f = r.config.stimulus[0].frequency;
    let dec = DecimationSpec::standard(FS, 16).unwrap();
    let edge = dec.post_transient();
    let cal = calibrate(&r.d, f, NlOrders::DEFAULT, &dec).unwrap();
    let pipeline = output_metrics(&correct_float(&r.d, &cal.model, &dec).unwrap(), f, edge).unwrap();
    let full_rate = apply_float(&cal.model, &r.d).unwrap();
    let early = output_metrics(&uncorrected(&full_rate, &dec).unwrap(), f, edge).unwrap();
    assert!(
        pipeline.sndr_db > early.sndr_db + 1.0,
        "pipeline {} vs full rate {}",
        pipeline.sndr_db,
        early.sndr_db
    );
}

#[test]
fn calibration_never_degrades() {
    let dec = DecimationSpec::standard(FS, 16).unwrap();
    let edge = dec.post_transient();
    for r in [capture(), &linear_capture()] {
        let f = r.config.stimulus[0].frequency;
        let cal = calibrate(&r.d, f, NlOrders::DEFAULT, &dec).unwrap();
        let uncal = output_metrics(&uncorrected(&r.d, &dec).unwrap(), f, edge).unwrap();
        let float = output_metrics(&correct_float(&r.d, &cal.model, &dec).unwrap(), f, edge).unwrap();
        let lut = build_lut(&cal.model).unwrap();
        let fixed = output_metrics(&correct(&r.d, &lut, &dec).unwrap().0, f, edge).unwrap();
        assert!(float.sndr_db >= uncal.sndr_db - 0.1, "float {} uncal {}", float.sndr_db, uncal.sndr_db);
        assert!((float.sndr_db - fixed.sndr_db).abs() <= 0.5);
    }
}

#[test]
fn derivative_term_lowers_the_fit_residual() {
    let r = capture();
    let f = r.config.stimulus[0].frequency;
    let dec = DecimationSpec::standard(FS, 16).unwrap();
    let full = calibrate(&r.d, f, NlOrders::DEFAULT, &dec).unwrap();
    let stat = calibrate(&r.d, f, NlOrders::DEFAULT.static_only(), &dec).unwrap();
    assert!(
        full.report.residual_rms < 0.5 * stat.report.residual_rms,
        "full {} static {}",
        full.report.residual_rms,
        stat.report.residual_rms
    );
}
