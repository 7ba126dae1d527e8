//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;

use rayon::prelude::*;

use mashvco::calibration::{
    build_lut, calibrate, correct, correct_float, output_metrics, uncorrected, DecimationSpec, NlOrders,
};
use mashvco::mash::{analyze, apply_sweep_value, g_opt, simulate, Architecture, SimConfig, SimResult, SweepParam};
use mashvco::readout::gradient_pw_errors;
use mashvco::signal::{coherent_bin_frequency, Metrics};
use mashvco::theory::{sqnr_mash, sqnr_single, TheoryParams};
use mashvco::vco::{InnerGrid, TuningCurve};

const OSR: usize = 16;

// criterion 1
const THEORY_MASH_TARGET: f64 = 75.0;
const THEORY_MASH_TOL: f64 = 0.1;
const SLOPE_EXACT_TOL: f64 = 1e-9;
// criteria 2, 3
const SE_IDEAL_TARGET: f64 = 72.0;
const CC_IDEAL_TARGET: f64 = 75.0;
const IDEAL_TOL: f64 = 2.0;
// criteria 4, 5
const SE_NL_TARGET: f64 = 69.0;
const CC_NL_TARGET: f64 = 74.0;
const NL_TOL: f64 = 3.0;
const SE_NL_MIN_LOSS: f64 = 2.0;
const CC_NL_MAX_LOSS: f64 = 1.5;
// criterion 6
const PW_MAX_SKEW: f64 = 75e-12;
const SE_PW_TARGET: f64 = 65.0;
const CC_PW_TARGET: f64 = 71.0;
const PW_TOL: f64 = 3.0;
const SE_PW_MIN_LOSS: f64 = 4.0;
const CC_PW_MAX_LOSS: f64 = 2.0;
// criterion 7
const NPHI1_VALUES: [usize; 6] = [1, 2, 4, 8, 16, 32];
const NPHI1_MIN_SPAN: f64 = 10.0;
const NPHI1_MONO_TOL: f64 = 1.0;
// criterion 8
const G_OPT_TARGET: f64 = 1.1146;
const G_OPT_TOL: f64 = 1e-4;
const G_TABLE_NOMINAL: f64 = 1.11;
const MISMATCH: f64 = 0.13;
const MISMATCH_MAX_LOSS: f64 = 1.0;
// criterion 9
const SLOPE2_TARGET: f64 = 15.05;
const SLOPE1_TARGET: f64 = 9.03;
const SLOPE_TOL: f64 = 1.0;
// criterion 10
const CAL_UNCAL_RANGE: (f64, f64) = (35.0, 45.0);
const CAL_SNR_TOL: f64 = 1.0;
const CAL_LUT_TOL: f64 = 0.5;
const CAL_F_IN: f64 = 26.5e6;
const CAL_THERMAL_SNR: f64 = 71.0;
// criterion 11
const GRID_TOL: f64 = 0.1;
// criterion 13
const ORACLE_TOL: f64 = 0.2;
const ORACLE_OSR: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn nl_config(arch: Architecture) -> SimConfig {
    let mut c = SimConfig::table1(arch);
    c.curve2 = TuningCurve::stage2_nl18();
    c
}

fn pw_config(arch: Architecture) -> SimConfig {
    let mut c = SimConfig::table1(arch);
    c.pw_errors = Some(gradient_pw_errors(c.n_phi1, PW_MAX_SKEW).unwrap());
    c
}

fn fine(mut c: SimConfig) -> SimConfig {
    c.grid = InnerGrid {
        points_per_sample: 2 * c.grid.points_per_sample,
    };
    c
}

fn cal_config(thermal: Option<f64>) -> SimConfig {
    let mut c = SimConfig::table1(Architecture::MashCc);
    c.curve1 = TuningCurve::stage1_dynamic_nl();
    // tone coherent in the analysis window, record long enough for filter edges
    c.stimulus[0].frequency = coherent_bin_frequency(CAL_F_IN, c.fs, c.n_samples);
    c.n_samples *= 2;
    c.thermal_snr_target_db = thermal;
    c
}

/// Runs every configuration in parallel, in order.
fn run_all(configs: &[SimConfig]) -> Vec<SimResult> {
    configs
        .par_iter()
        .map(|c| simulate(c).expect("simulation failed"))
        .collect()
}

fn snr(r: &SimResult) -> f64 {
    analyze(r, OSR).unwrap().snr_db
}

fn criterion_1() -> Outcome {
    let p = TheoryParams::table1();
    let v = sqnr_mash(&p);
    let step = 50.0 * 2f64.log10();
    let max_dev = [4.0, 8.0, 16.0, 32.0, 64.0]
        .iter()
        .map(|&o| (sqnr_mash(&p.with_osr(2.0 * o)) - sqnr_mash(&p.with_osr(o)) - step).abs())
        .fold(0.0, f64::max);
    outcome(
        within(v, THEORY_MASH_TARGET, THEORY_MASH_TOL) && max_dev <= SLOPE_EXACT_TOL,
        format!("sqnr_mash(OSR 16) = {v:.3} dB, per-doubling step {step:.4} dB (max deviation {max_dev:.1e})"),
    )
}

/// First-order shaped uniform quantization noise integrated numerically.
fn single_stage_oracle(p: &TheoryParams) -> f64 {
    let a = p.n_phi1 as f64 * p.amplitude_fraction * p.f_range1 / p.fs;
    let band = p.fs / (2.0 * p.osr);
    // one-sided PSD of (1 - z^-1) applied to a unit-step uniform quantizer
    let psd = |f: f64| (1.0 / 12.0) * 4.0 * (PI * f / p.fs).sin().powi(2) * 2.0 / p.fs;
    let m = 20_000;
    let h = band / m as f64;
    let mut acc = psd(0.0) + psd(band);
    for k in 1..m {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * psd(k as f64 * h);
    }
    let noise = acc * h / 3.0;
    10.0 * (a * a / 2.0 / noise).log10()
}

fn criterion_13() -> Outcome {
    let p = TheoryParams::table1();
    let devs: Vec<(f64, f64)> = ORACLE_OSR
        .iter()
        .map(|&o| {
            let q = p.with_osr(o);
            (o, sqnr_single(&q) - single_stage_oracle(&q))
        })
        .collect();
    let worst = devs.iter().map(|d| d.1.abs()).fold(0.0, f64::max);
    let list: Vec<String> = devs.iter().map(|(o, d)| format!("{o}:{d:+.3}")).collect();
    outcome(
        worst <= ORACLE_TOL,
        format!("closed form minus integral per OSR [{}] dB", list.join(", ")),
    )
}

struct CalRun {
    uncal: Metrics,
    float: Metrics,
    lut: Metrics,
}

fn calibration_run(thermal: Option<f64>) -> CalRun {
    let cfg = cal_config(thermal);
    let f = cfg.stimulus[0].frequency;
    let r = simulate(&cfg).unwrap();
    let dec = DecimationSpec::standard(cfg.fs, cfg.osr).unwrap();
    let edge = dec.post_transient();
    let cal = calibrate(&r.d, f, NlOrders::DEFAULT, &dec).unwrap();
    let uncal = output_metrics(&uncorrected(&r.d, &dec).unwrap(), f, edge).unwrap();
    let float = output_metrics(&correct_float(&r.d, &cal.model, &dec).unwrap(), f, edge).unwrap();
    let lut = build_lut(&cal.model).unwrap();
    let lut = output_metrics(&correct(&r.d, &lut, &dec).unwrap().0, f, edge).unwrap();
    CalRun { uncal, float, lut }
}

fn check_cal(name: &str, c: &CalRun) -> (bool, String) {
    let ok = c.uncal.sndr_db >= CAL_UNCAL_RANGE.0
        && c.uncal.sndr_db <= CAL_UNCAL_RANGE.1
        && (c.float.sndr_db - c.uncal.snr_db).abs() <= CAL_SNR_TOL
        && (c.lut.sndr_db - c.float.sndr_db).abs() <= CAL_LUT_TOL;
    (
        ok,
        format!(
            "{name}: uncalibrated SNDR {:.2} (SNR {:.2}), float SNDR {:.2}, LUT SNDR {:.2} (gap {:.2})",
            c.uncal.sndr_db,
            c.uncal.snr_db,
            c.float.sndr_db,
            c.lut.sndr_db,
            c.float.sndr_db - c.lut.sndr_db
        ),
    )
}

fn main() -> ExitCode {
    use Architecture::*;
    let mut configs = vec![
        SimConfig::table1(MashSe),
        SimConfig::table1(MashCc),
        SimConfig::table1(SingleStage),
        nl_config(MashSe),
        nl_config(MashCc),
        pw_config(MashSe),
        pw_config(MashCc),
        fine(SimConfig::table1(MashSe)),
        fine(SimConfig::table1(MashCc)),
        fine(SimConfig::table1(SingleStage)),
        fine(nl_config(MashSe)),
        fine(nl_config(MashCc)),
        SimConfig::table1(MashCc),
    ];
    let base_se = SimConfig::table1(MashSe);
    let base_cc = SimConfig::table1(MashCc);
    let n_fixed = configs.len();
    for &n in &NPHI1_VALUES {
        configs.push(apply_sweep_value(&base_se, SweepParam::NPhi1, n as f64).unwrap());
    }
    for v in [-1.0, -MISMATCH, MISMATCH] {
        configs.push(apply_sweep_value(&base_se, SweepParam::GRelMismatch, v).unwrap());
    }
    for v in [-MISMATCH, MISMATCH] {
        configs.push(apply_sweep_value(&base_cc, SweepParam::GRelMismatch, v).unwrap());
    }
    let (runs, (cal_thermal, cal_quant)) = rayon::join(
        || run_all(&configs),
        || rayon::join(|| calibration_run(Some(CAL_THERMAL_SNR)), || calibration_run(None)),
    );
    let [se, cc, single, se_nl, cc_nl, se_pw, cc_pw, se_f, cc_f, single_f, se_nl_f, cc_nl_f, cc_again] =
        <&[SimResult; 13]>::try_from(&runs[..n_fixed]).unwrap();
    let nphi = &runs[n_fixed..n_fixed + NPHI1_VALUES.len()];
    let mm = &runs[n_fixed + NPHI1_VALUES.len()..];

    let (s_se, s_cc, s_single) = (snr(se), snr(cc), snr(single));
    let mut results: Vec<(usize, Outcome)> = Vec::new();

    results.push((1, criterion_1()));

    results.push((
        2,
        outcome(
            within(s_se, SE_IDEAL_TARGET, IDEAL_TOL),
            format!("ideal single-ended SQNR {s_se:.2} dB (target {SE_IDEAL_TARGET} +/- {IDEAL_TOL})"),
        ),
    ));
    results.push((
        3,
        outcome(
            within(s_cc, CC_IDEAL_TARGET, IDEAL_TOL),
            format!("ideal cross-coupled SQNR {s_cc:.2} dB (target {CC_IDEAL_TARGET} +/- {IDEAL_TOL})"),
        ),
    ));

    let (v, loss) = (snr(se_nl), s_se - snr(se_nl));
    results.push((
        4,
        outcome(
            within(v, SE_NL_TARGET, NL_TOL) && loss >= SE_NL_MIN_LOSS,
            format!("single-ended with 18% INL stage 2: SQNR {v:.2} dB, loss {loss:.2} dB (need >= {SE_NL_MIN_LOSS})"),
        ),
    ));
    let (v, loss) = (snr(cc_nl), s_cc - snr(cc_nl));
    results.push((
        5,
        outcome(
            within(v, CC_NL_TARGET, NL_TOL) && loss <= CC_NL_MAX_LOSS,
            format!("cross-coupled with 18% INL stage 2: SQNR {v:.2} dB, loss {loss:.2} dB (need <= {CC_NL_MAX_LOSS})"),
        ),
    ));

    let (vs, ls) = (snr(se_pw), s_se - snr(se_pw));
    let (vc, lc) = (snr(cc_pw), s_cc - snr(cc_pw));
    results.push((
        6,
        outcome(
            within(vs, SE_PW_TARGET, PW_TOL)
                && within(vc, CC_PW_TARGET, PW_TOL)
                && ls >= SE_PW_MIN_LOSS
                && lc <= CC_PW_MAX_LOSS,
            format!(
                "0-75 ps skew: single-ended {vs:.2} dB (loss {ls:.2}, need [{}, {}] and >= {SE_PW_MIN_LOSS}), \
                 cross-coupled {vc:.2} dB (loss {lc:.2}, need [{}, {}] and <= {CC_PW_MAX_LOSS})",
                SE_PW_TARGET - PW_TOL,
                SE_PW_TARGET + PW_TOL,
                CC_PW_TARGET - PW_TOL,
                CC_PW_TARGET + PW_TOL
            ),
        ),
    ));

    let sweep: Vec<f64> = nphi.iter().map(snr).collect();
    let span = sweep[sweep.len() - 1] - sweep[0];
    let mono = sweep.windows(2).all(|w| w[1] >= w[0] - NPHI1_MONO_TOL);
    let list: Vec<String> = NPHI1_VALUES
        .iter()
        .zip(&sweep)
        .map(|(n, s)| format!("{n}:{s:.2}"))
        .collect();
    results.push((
        7,
        outcome(
            span >= NPHI1_MIN_SPAN && mono,
            format!("SQNR vs first-stage phases [{}], span {span:.2} dB", list.join(", ")),
        ),
    ));

    let g = g_opt(&base_se).g;
    let off = &mm[0];
    let exact = off.d.samples == single.d.samples && snr(off) == s_single;
    let losses = [
        s_se - snr(&mm[1]),
        s_se - snr(&mm[2]),
        s_cc - snr(&mm[3]),
        s_cc - snr(&mm[4]),
    ];
    let worst = losses.iter().cloned().fold(f64::MIN, f64::max);
    results.push((
        8,
        outcome(
            within(g, G_OPT_TARGET, G_OPT_TOL)
                && (g - G_TABLE_NOMINAL).abs() < 0.005
                && exact
                && worst <= MISMATCH_MAX_LOSS,
            format!(
                "g_opt {g:.5}; -100% equals single stage: {exact}; SQNR loss at -13%/+13% \
                 single-ended {:.2}/{:.2}, cross-coupled {:.2}/{:.2} dB (need <= {MISMATCH_MAX_LOSS})",
                losses[0], losses[1], losses[2], losses[3]
            ),
        ),
    ));

    let slope = |r: &SimResult| analyze(r, 2 * OSR).unwrap().snr_db - analyze(r, OSR).unwrap().snr_db;
    let (k_se, k_cc, k_1) = (slope(se), slope(cc), slope(single));
    results.push((
        9,
        outcome(
            within(k_se, SLOPE2_TARGET, SLOPE_TOL)
                && within(k_cc, SLOPE2_TARGET, SLOPE_TOL)
                && within(k_1, SLOPE1_TARGET, SLOPE_TOL),
            format!("OSR 16->32: single-ended {k_se:+.2}, cross-coupled {k_cc:+.2}, single stage {k_1:+.2} dB"),
        ),
    ));

    let (ok_t, txt_t) = check_cal("71 dB thermal", &cal_thermal);
    let (ok_q, txt_q) = check_cal("quantization only", &cal_quant);
    results.push((10, outcome(ok_t && ok_q, format!("{txt_t}; {txt_q}"))));

    let pairs = [
        ("SE", se, se_f),
        ("CC", cc, cc_f),
        ("single", single, single_f),
        ("SE-NL", se_nl, se_nl_f),
        ("CC-NL", cc_nl, cc_nl_f),
    ];
    let deltas: Vec<(&str, f64)> = pairs
        .iter()
        .map(|(n, a, b)| (*n, (snr(b) - snr(a)).abs().max((sndr(b) - sndr(a)).abs())))
        .collect();
    let worst = deltas.iter().map(|d| d.1).fold(0.0, f64::max);
    let list: Vec<String> = deltas.iter().map(|(n, d)| format!("{n}:{d:.3}")).collect();
    results.push((
        11,
        outcome(worst < GRID_TOL, format!("grid 32 -> 64 change [{}] dB", list.join(", "))),
    ));

    let same = cc.d.samples == cc_again.d.samples
        && cc.d1.samples == cc_again.d1.samples
        && cc.d2.samples == cc_again.d2.samples;
    results.push((
        12,
        outcome(same, format!("repeated cross-coupled run bit-identical: {same}")),
    ));

    results.push((13, criterion_13()));

    let mut failed = 0;
    for (n, o) in &results {
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn sndr(r: &SimResult) -> f64 {
    analyze(r, OSR).unwrap().sndr_db
}
