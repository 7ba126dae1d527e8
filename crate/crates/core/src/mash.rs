//! Single-stage, single-ended 1-1 MASH and cross-coupled pseudo-differential
//! MASH VCO converters, noise-cancellation combining and parameter sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::readout::{gradient_pw_errors, MetastabilityModel, PulseWidthErrors};
use crate::signal::{coherent_bin_frequency, metrics, spectrum, Metrics, SampleStream, Tone, Window};
use crate::theory;
use crate::vco::{InnerGrid, PhaseState, TuningCurve};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleStage,
    MashSe,
    MashCc,
}

/// Which second-stage sample pairs with first-stage sample `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NcfAlignment {
    /// Both stages counted over the same clock period.
    #[default]
    SameClock,
    /// The second stage is taken one sample later, which lines its
    /// differentiated output up exactly with the first-stage error.
    Advanced,
}

/// Complete parameterization of one converter run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub fs: f64,
    pub osr: usize,
    pub n_phi1: usize,
    pub n_phi2: usize,
    pub curve1: TuningCurve,
    pub curve2: TuningCurve,
    pub architecture: Architecture,
    /// Pseudo-differential first stage: two oscillators at `mid + v` and `mid - v`.
    pub differential_stage1: bool,
    pub stimulus: Vec<Tone>,
    pub n_samples: usize,
    #[serde(default = "default_warmup")]
    pub n_warmup: usize,
    #[serde(default)]
    pub pw_errors: Option<PulseWidthErrors>,
    #[serde(default)]
    pub metastability: Option<MetastabilityModel>,
    #[serde(default)]
    pub thermal_snr_target_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: InnerGrid,
    #[serde(default)]
    pub ncf_alignment: NcfAlignment,
    /// Relative deviation of the combining gain from its optimum.
    #[serde(default)]
    pub g_rel_mismatch: f64,
    /// Peak-to-peak input that reads as 0 dBFS.
    #[serde(default = "default_full_scale_vpp")]
    pub full_scale_vpp: f64,
    /// Random initial oscillator phases drawn from the seed; zero otherwise.
    #[serde(default = "yes")]
    pub random_initial_phase: bool,
    #[serde(default)]
    pub keep_e_trace: bool,
}

fn default_warmup() -> usize {
    16
}

fn default_full_scale_vpp() -> f64 {
    0.9
}

fn yes() -> bool {
    true
}

/// Signal frequency targeted by the reference setup.
pub const TABLE1_F_IN: f64 = 31.25e6;
/// Peak input of the reference setup (750 mVpp).
pub const TABLE1_AMPLITUDE: f64 = 0.375;

impl SimConfig {
    /// Reference design point with a coherent 31.25 MHz, 750 mVpp stimulus.
    pub fn table1(architecture: Architecture) -> Self {
        let n_samples = 131_072;
        let fs = 3.5e9;
        Self {
            fs,
            osr: 16,
            n_phi1: 32,
            n_phi2: 32,
            curve1: TuningCurve::table1_stage1(),
            curve2: TuningCurve::table1_stage2(),
            architecture,
            differential_stage1: architecture == Architecture::MashCc,
            stimulus: vec![Tone::new(
                TABLE1_AMPLITUDE,
                coherent_bin_frequency(TABLE1_F_IN, fs, n_samples),
                0.0,
            )],
            n_samples,
            n_warmup: default_warmup(),
            pw_errors: None,
            metastability: None,
            thermal_snr_target_db: None,
            seed: 0,
            grid: InnerGrid::default(),
            ncf_alignment: NcfAlignment::default(),
            g_rel_mismatch: 0.0,
            full_scale_vpp: default_full_scale_vpp(),
            random_initial_phase: true,
            keep_e_trace: false,
        }
    }

    pub fn ts(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn n_channels(&self) -> usize {
        if self.differential_stage1 {
            2
        } else {
            1
        }
    }

    /// Code amplitude of a full-scale sine at the output.
    pub fn full_scale_code(&self) -> f64 {
        self.n_channels() as f64 * 2.0 * self.n_phi1 as f64 * self.curve1.gain_k
            * (self.full_scale_vpp / 2.0)
            / self.fs
    }

    pub fn signal_frequency(&self) -> Option<f64> {
        self.stimulus.first().map(|t| t.frequency)
    }

    /// Moves every tone to its nearest odd FFT bin for `n_samples`.
    pub fn snap_coherent(&mut self) {
        for t in &mut self.stimulus {
            t.frequency = coherent_bin_frequency(t.frequency, self.fs, self.n_samples);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs must be > 0, got {}", self.fs));
        }
        if self.osr < 2 || !self.osr.is_power_of_two() {
            return bad(format!("osr must be a power of two >= 2, got {}", self.osr));
        }
        if self.n_phi1 == 0 || self.n_phi2 == 0 {
            return bad("phase counts must be >= 1".into());
        }
        if self.n_samples < 2 * self.osr || !self.n_samples.is_power_of_two() {
            return bad(format!(
                "n_samples must be a power of two >= 2*osr, got {}",
                self.n_samples
            ));
        }
        if self.grid.points_per_sample == 0 {
            return bad("grid needs at least one point per sample".into());
        }
        if self.architecture == Architecture::MashCc && !self.differential_stage1 {
            return bad("mash_cc needs a differential first stage".into());
        }
        if self.architecture == Architecture::MashSe && self.differential_stage1 {
            return bad("mash_se has a single-ended first stage".into());
        }
        if !(self.full_scale_vpp > 0.0) {
            return bad("full_scale_vpp must be > 0".into());
        }
        if !(self.g_rel_mismatch >= -1.0 && self.g_rel_mismatch.is_finite()) {
            return bad(format!("g_rel_mismatch must be >= -1, got {}", self.g_rel_mismatch));
        }
        crate::signal::check_tones(&self.stimulus, self.fs).map_err(|e| Error::Validation(e.to_string()))?;
        for (name, c) in [("curve1", &self.curve1), ("curve2", &self.curve2)] {
            c.validate()?;
            let r = c.max_frequency_check(self.fs);
            if !r.pass {
                return bad(format!(
                    "{name} leaves (0, fs/2): f in [{:.4e}, {:.4e}] Hz",
                    r.f_min, r.f_max
                ));
            }
        }
        if let Some(pw) = &self.pw_errors {
            pw.validate(self.n_phi1, self.ts())?;
        }
        if let Some(m) = &self.metastability {
            m.validate(self.ts())?;
        }
        if let Some(snr) = self.thermal_snr_target_db {
            if !snr.is_finite() {
                return bad("thermal SNR target must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcfGain {
    pub g: f64,
}

/// `fs n_phi1 / (2 n_phi2 f_range2)` from the configured second-stage curve.
pub fn g_opt(config: &SimConfig) -> NcfGain {
    NcfGain {
        g: theory::g_opt(
            config.fs,
            config.n_phi1,
            config.n_phi2,
            config.curve2.frequency_range(),
        ),
    }
}

/// `d[k] = d1[k] + g (d2[k] - d2[k-1])` with `d2[-1] = d2[0]`.
pub fn ncf_combine(d1: &SampleStream, d2: &SampleStream, g: NcfGain) -> Result<SampleStream> {
    if d1.len() != d2.len() {
        return Err(Error::LengthMismatch(d1.len(), d2.len()));
    }
    let y = &d2.samples;
    let samples = d1
        .samples
        .iter()
        .enumerate()
        .map(|(k, &a)| a + g.g * (y[k] - y[k.saturating_sub(1)]))
        .collect();
    d1.derive(samples, "d")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// First-stage counts, `n_samples + 1` long.
    pub d1: SampleStream,
    /// Second-stage counts aligned so that `d = ncf_combine(d1, d2)[1..]`.
    pub d2: SampleStream,
    /// Combined output, `n_samples` long.
    pub d: SampleStream,
    /// Per-period mean of the first channel's error signal.
    pub e_trace: Option<Vec<f64>>,
    pub g_used: f64,
    /// Samples whose stage-1 input left the tuning range.
    pub clamped_inputs: usize,
    /// Largest second-stage input observed.
    pub e_max: f64,
    pub e_min: f64,
    pub noise_sigma: f64,
    pub config: SimConfig,
}

/// White input-referred noise RMS that sets a stage-1 SNR of `snr_db`.
pub fn thermal_sigma(config: &SimConfig, snr_db: f64) -> f64 {
    let p_sig: f64 = config.stimulus.iter().map(|t| t.amplitude * t.amplitude / 2.0).sum();
    (config.n_channels() as f64 * config.osr as f64 * p_sig / 10f64.powf(snr_db / 10.0)).sqrt()
}

struct Stage1Channel {
    state: PhaseState,
    sign: f64,
    noise: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Event {
    t: f64,
    target: usize,
    dx: f64,
}

struct Target {
    level: f64,
    last_t: f64,
    acc: f64,
}

impl Target {
    fn advance(&mut self, t: f64, curve: Option<(&TuningCurve, &mut PhaseState, f64)>) -> Result<()> {
        let dt = t - self.last_t;
        if dt > 0.0 {
            match curve {
                Some((c, st, scale)) => {
                    let du = scale * c.tuning_frequency(self.level) * dt;
                    st.step_linear(self.last_t, dt, du, |_, _| {})?;
                }
                None => self.acc += self.level * dt,
            }
            self.last_t = t;
        }
        Ok(())
    }
}

const RNG_STAGE1_PHASE: u64 = 1;
const RNG_STAGE2_PHASE: u64 = 2;
const RNG_NOISE: u64 = 3;

/// Runs one time-domain simulation.
pub fn simulate(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let ts = config.ts();
    let n_ch = config.n_channels();
    let n1 = config.n_phi1;
    let n2 = config.n_phi2;
    let with_stage2 = config.architecture != Architecture::SingleStage;
    let cc = config.architecture == Architecture::MashCc;
    // one extra period so the advanced alignment has a following stage-2 sample
    let periods = config.n_warmup + config.n_samples + 2;
    // independent streams so enabling one random feature leaves the others unchanged
    let rng_for = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(stream);
        r
    };
    let mut rng1 = rng_for(RNG_STAGE1_PHASE);
    let mut rng2 = rng_for(RNG_STAGE2_PHASE);
    let mut rng_noise = rng_for(RNG_NOISE);

    let noise_sigma = config
        .thermal_snr_target_db
        .map_or(0.0, |snr| thermal_sigma(config, snr));
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let phase = |rng: &mut ChaCha8Rng| {
        if config.random_initial_phase {
            rng.random::<f64>()
        } else {
            0.0
        }
    };
    let mut stage1: Vec<Stage1Channel> = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        let state = PhaseState::new(n1, phase(&mut rng1))?;
        stage1.push(Stage1Channel {
            state,
            sign: if c == 0 { 1.0 } else { -1.0 },
            noise: Vec::new(),
        });
    }
    let n_stage2 = if !with_stage2 { 0 } else if cc { 2 } else { 1 };
    let mut stage2: Vec<PhaseState> = (0..n_stage2)
        .map(|_| PhaseState::new(n2, phase(&mut rng2)))
        .collect::<Result<_>>()?;
    if noise_sigma > 0.0 {
        for ch in &mut stage1 {
            ch.noise = (0..periods).map(|_| normal.sample(&mut rng_noise)).collect();
        }
    }

    let pw = config.pw_errors.clone().unwrap_or_else(|| PulseWidthErrors::zero(n1));
    let meta = config.metastability.unwrap_or_else(|| MetastabilityModel::default_for(ts));
    // targets: stage-2 channel inputs first, then one probe per stage-1 channel
    let half_n1 = n1 as f64 / 2.0;
    let mut targets: Vec<Target> = (0..n_stage2 + n_ch)
        .map(|j| Target {
            level: if cc && j < n_stage2 { half_n1 } else { 0.0 },
            last_t: 0.0,
            acc: 0.0,
        })
        .collect();
    let mid = config.curve1.midpoint();
    let scale1 = 2.0 * n1 as f64;
    let scale2 = 2.0 * n2 as f64;
    let h = ts / config.grid.points_per_sample as f64;
    let tones = &config.stimulus;
    let signal_at = |t: f64| -> (f64, f64) {
        tones
            .iter()
            .fold((0.0, 0.0), |(v, s), tone| (v + tone.value(t), s + tone.derivative(t)))
    };
    let mut clamped_inputs = 0usize;

    let mut d1_raw = vec![0.0; periods];
    let mut d2_raw = vec![0.0; periods];
    let mut e_trace = Vec::with_capacity(if config.keep_e_trace { periods } else { 0 });
    let mut pending: Vec<Event> = Vec::new();
    let mut crossings: Vec<(f64, usize)> = Vec::with_capacity(2 * n1);
    let (mut e_min, mut e_max) = (f64::MAX, f64::MIN);

    for k in 0..periods {
        let t0 = k as f64 * ts;
        let clk = t0 + ts;
        let mut counts = [0i64; 2];
        for (c, ch) in stage1.iter_mut().enumerate() {
            let noise = ch.noise.get(k).copied().unwrap_or(0.0);
            let input = |t: f64| {
                let (v, s) = signal_at(t);
                (mid + ch.sign * (v + noise), ch.sign * s)
            };
            let freq = |t: f64, clamped: &mut usize| {
                let (x, s) = input(t);
                if config.curve1.frequency_with_flag(x).1 {
                    *clamped += 1;
                }
                config.curve1.dynamic_frequency(x, s)
            };
            crossings.clear();
            let start = ch.state.count;
            let mut ta = t0;
            let mut fa = freq(ta, &mut 0);
            let mut any_clamp = 0usize;
            let st = &mut ch.state;
            for cell in 0..config.grid.points_per_sample {
                let tb = if cell + 1 == config.grid.points_per_sample {
                    clk
                } else {
                    t0 + (cell + 1) as f64 * h
                };
                let fm = freq(0.5 * (ta + tb), &mut any_clamp);
                let fb = freq(tb, &mut any_clamp);
                st.step_quadratic(ta, tb - ta, [scale1 * fa, scale1 * fm, scale1 * fb], |t, m| {
                    crossings.push((t, (-m).rem_euclid(n1 as i64) as usize))
                })?;
                ta = tb;
                fa = fb;
            }
            if any_clamp > 0 {
                clamped_inputs += 1;
            }
            counts[c] = st.count - start;
            if counts[c] > n1 as i64 {
                return Err(Error::Validation(format!(
                    "first-stage oscillator advanced {} edges in one period (limit {n1})",
                    counts[c]
                )));
            }
            if !with_stage2 && !config.keep_e_trace {
                continue;
            }
            for &(tau, i) in crossings.iter() {
                let md = if meta.enabled { meta.delay(ts, clk - tau) } else { 0.0 };
                let (tr, tf) = (pw.tr[i], pw.tf[i]);
                // E_i high from the delayed phase edge until the delayed clock update
                let (ps, pe) = (tau + tr, clk + tf + md);
                if pe > ps {
                    pending.push(Event { t: ps, target: n_stage2 + c, dx: 1.0 });
                    pending.push(Event { t: pe, target: n_stage2 + c, dx: -1.0 });
                    if with_stage2 {
                        let (tgt, w) = if cc { (c, 0.5) } else { (0, 1.0) };
                        pending.push(Event { t: ps, target: tgt, dx: w });
                        pending.push(Event { t: pe, target: tgt, dx: -w });
                    }
                }
                if cc {
                    // complement low pulse feeds the opposite channel
                    let (ls, le) = (tau + tf, clk + tr + md);
                    if le > ls {
                        let other = 1 - c;
                        pending.push(Event { t: ls, target: other, dx: -0.5 });
                        pending.push(Event { t: le, target: other, dx: 0.5 });
                    }
                }
            }
        }
        d1_raw[k] = (counts[0] - if n_ch == 2 { counts[1] } else { 0 }) as f64;

        if !with_stage2 && !config.keep_e_trace {
            continue;
        }
        pending.sort_by(|a, b| a.t.total_cmp(&b.t));
        let due = pending.partition_point(|e| e.t <= clk);
        let start2: Vec<i64> = stage2.iter().map(|s| s.count).collect();
        for ev in pending.drain(..due) {
            let tgt = &mut targets[ev.target];
            if ev.target < n_stage2 {
                tgt.advance(ev.t, Some((&config.curve2, &mut stage2[ev.target], scale2)))?;
            } else {
                tgt.advance(ev.t, None)?;
            }
            tgt.level += ev.dx;
            if ev.target < n_stage2 {
                e_min = e_min.min(tgt.level);
                e_max = e_max.max(tgt.level);
            }
        }
        for (j, tgt) in targets.iter_mut().enumerate() {
            if j < n_stage2 {
                tgt.advance(clk, Some((&config.curve2, &mut stage2[j], scale2)))?;
            } else {
                tgt.advance(clk, None)?;
            }
        }
        if n_stage2 > 0 {
            let c: Vec<i64> = stage2.iter().zip(&start2).map(|(s, a)| s.count - a).collect();
            d2_raw[k] = (c[0] - if n_stage2 == 2 { c[1] } else { 0 }) as f64;
        }
        if config.keep_e_trace {
            let probe = &mut targets[n_stage2];
            e_trace.push(probe.acc / ts);
            probe.acc = 0.0;
        }
    }

    let w = config.n_warmup;
    let n = config.n_samples;
    let g_used = if with_stage2 {
        g_opt(config).g * (1.0 + config.g_rel_mismatch)
    } else {
        0.0
    };
    let d1v = d1_raw[w..w + n + 1].to_vec();
    let d2v = match config.ncf_alignment {
        NcfAlignment::SameClock => d2_raw[w..w + n + 1].to_vec(),
        NcfAlignment::Advanced => d2_raw[w + 1..w + n + 2].to_vec(),
    };
    let fsc = config.full_scale_code();
    let d1 = SampleStream::with_full_scale(d1v, config.fs, "d1", fsc)?;
    let d2 = SampleStream::with_full_scale(d2v, config.fs, "d2", fsc)?;
    let combined = ncf_combine(&d1, &d2, NcfGain { g: g_used })?;
    let d = combined.derive(combined.samples[1..].to_vec(), "d")?;
    if n_stage2 == 0 {
        e_min = 0.0;
        e_max = 0.0;
    }
    Ok(SimResult {
        d1,
        d2,
        d,
        e_trace: config.keep_e_trace.then(|| e_trace[w..w + n].to_vec()),
        g_used,
        clamped_inputs,
        e_max,
        e_min,
        noise_sigma,
        config: config.clone(),
    })
}

/// Window for simulated outputs.
///
/// The tone is coherent but the shaped quantization noise is not periodic in
/// the record; rectangular sidelobes would fold out-of-band noise into the band.
pub const ANALYSIS_WINDOW: Window = Window::Hann;

/// Metrics of the combined output at the given oversampling ratio.
pub fn analyze(result: &SimResult, osr: usize) -> Result<Metrics> {
    let f = result
        .config
        .signal_frequency()
        .ok_or_else(|| Error::InvalidArgument("no stimulus tone to analyze".into()))?;
    let sp = spectrum(&result.d, result.config.n_samples, 1, ANALYSIS_WINDOW)?;
    metrics(&sp, f, osr, 5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NPhi1,
    GRelMismatch,
    PwMaxSkew,
    /// Amplitude of the first tone in dBFS.
    Amplitude,
    FIn,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_phi1" => Ok(Self::NPhi1),
            "g_rel_mismatch" => Ok(Self::GRelMismatch),
            "pw_max_skew" => Ok(Self::PwMaxSkew),
            "amplitude" => Ok(Self::Amplitude),
            "f_in" => Ok(Self::FIn),
            other => Err(Error::Validation(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: std::result::Result<Metrics, String>,
}

/// Applies one sweep value to a copy of `base`.
pub fn apply_sweep_value(base: &SimConfig, param: SweepParam, value: f64) -> Result<SimConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::NPhi1 => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Validation(format!("n_phi1 must be a positive integer, got {value}")));
            }
            let n = value as usize;
            // keep the second-stage frequency span over the new error range
            let scale = n as f64 / cfg.n_phi1 as f64;
            cfg.curve2.input_range = [
                cfg.curve2.input_range[0] * scale,
                cfg.curve2.input_range[1] * scale,
            ];
            cfg.curve2.gain_k /= scale;
            if let Some(pw) = &cfg.pw_errors {
                let skew = pw.skew().into_iter().fold(0.0, f64::max);
                cfg.pw_errors = Some(gradient_pw_errors(n, skew)?);
            }
            cfg.n_phi1 = n;
        }
        SweepParam::GRelMismatch => cfg.g_rel_mismatch = value,
        SweepParam::PwMaxSkew => cfg.pw_errors = Some(gradient_pw_errors(cfg.n_phi1, value)?),
        SweepParam::Amplitude => {
            let tone = cfg
                .stimulus
                .first_mut()
                .ok_or_else(|| Error::Validation("amplitude sweep needs a tone".into()))?;
            tone.amplitude = cfg.full_scale_vpp / 2.0 * 10f64.powf(value / 20.0);
        }
        SweepParam::FIn => {
            let tone = cfg
                .stimulus
                .first_mut()
                .ok_or_else(|| Error::Validation("f_in sweep needs a tone".into()))?;
            tone.frequency = coherent_bin_frequency(value, cfg.fs, cfg.n_samples);
        }
    }
    Ok(cfg)
}

/// One simulation per value, run in parallel; failures are recorded per row.
pub fn sweep(base: &SimConfig, param: SweepParam, values: &[f64]) -> Vec<SweepRow> {
    values
        .par_iter()
        .map(|&value| {
            let metrics = apply_sweep_value(base, param, value)
                .and_then(|cfg| simulate(&cfg))
                .and_then(|r| analyze(&r, base.osr))
                .map_err(|e| e.to_string());
            SweepRow { value, metrics }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(v: &[f64]) -> SampleStream {
        SampleStream::new(v.to_vec(), 1.0, "t").unwrap()
    }

    #[test]
    fn combine_passthrough_with_zero_gain() {
        let d = ncf_combine(&stream(&[1.0, 2.0, 3.0]), &stream(&[5.0, -1.0, 7.0]), NcfGain { g: 0.0 }).unwrap();
        assert_eq!(d.samples, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn combine_constant_second_stage() {
        let d = ncf_combine(&stream(&[1.0, 2.0, 3.0]), &stream(&[4.0; 3]), NcfGain { g: 1.7 }).unwrap();
        assert_eq!(d.samples, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn combine_impulse() {
        let d = ncf_combine(&stream(&[0.0; 4]), &stream(&[0.0, 1.0, 0.0, 0.0]), NcfGain { g: 0.5 }).unwrap();
        assert_eq!(d.samples, vec![0.0, 0.5, -0.5, 0.0]);
    }

    #[test]
    fn combine_length_mismatch() {
        assert!(ncf_combine(&stream(&[0.0; 3]), &stream(&[0.0; 4]), NcfGain { g: 1.0 }).is_err());
    }

    #[test]
    fn g_opt_values() {
        let cfg = SimConfig::table1(Architecture::MashSe);
        assert!((g_opt(&cfg).g - 1.1146).abs() < 1e-4);
        let mut unit = cfg.clone();
        unit.curve2.gain_k = cfg.fs * 32.0 / (2.0 * 32.0) / 32.0;
        assert!((g_opt(&unit).g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::table1(Architecture::MashSe);
        assert!(cfg.validate().is_ok());
        cfg.differential_stage1 = true;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::table1(Architecture::MashCc);
        cfg.curve1.f0 = cfg.fs / 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::table1(Architecture::SingleStage);
        cfg.osr = 12;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_scale_code_places_table1_input_at_minus_1_58_dbfs() {
        let cfg = SimConfig::table1(Architecture::MashSe);
        let sig = 2.0 * 32.0 * cfg.curve1.gain_k * TABLE1_AMPLITUDE / cfg.fs;
        let dbfs = 20.0 * (sig / cfg.full_scale_code()).log10();
        assert!((dbfs + 1.58).abs() < 0.01);
    }

    #[test]
    fn short_run_bounds() {
        let mut cfg = SimConfig::table1(Architecture::MashCc);
        cfg.n_samples = 1024;
        cfg.snap_coherent();
        let r = simulate(&cfg).unwrap();
        assert_eq!(r.d1.len(), 1025);
        assert_eq!(r.d.len(), 1024);
        assert!(r.d1.samples.iter().all(|v| v.abs() <= 32.0));
        assert!(r.e_min >= 0.0 && r.e_max <= 32.0);
    }
}
