//! Stimulus generation, spectral analysis, ADC metrics and sine-fit decomposition.
//!
//! Spectra are single-sided and normalized to the stream's full-scale
//! amplitude: a sine of amplitude `full_scale` reads 0 dBFS in its bin.
//! Simulation data is coherent, so the rectangular window is the default.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::linalg::lstsq;
use crate::{Error, Result};

/// Floor applied to spectral bins so log plots stay finite.
pub const FLOOR_DBFS: f64 = -200.0;

/// A uniformly sampled real-valued sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStream {
    pub samples: Vec<f64>,
    /// Sample rate in Hz.
    pub rate: f64,
    pub label: String,
    /// Peak amplitude that reads as 0 dBFS.
    pub full_scale: f64,
}

impl SampleStream {
    pub fn new(samples: Vec<f64>, rate: f64, label: impl Into<String>) -> Result<Self> {
        Self::with_full_scale(samples, rate, label, 1.0)
    }

    pub fn with_full_scale(
        samples: Vec<f64>,
        rate: f64,
        label: impl Into<String>,
        full_scale: f64,
    ) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate must be > 0, got {rate}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty stream".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at {i}")));
        }
        if !(full_scale > 0.0 && full_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "full scale must be > 0, got {full_scale}"
            )));
        }
        Ok(Self {
            samples,
            rate,
            label: label.into(),
            full_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same metadata, new samples.
    pub fn derive(&self, samples: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::with_full_scale(samples, self.rate, label, self.full_scale)
    }

    /// Sub-range `[start, start + len)` with the same metadata.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::InsufficientSamples {
                need: start + len,
                have: self.len(),
            });
        }
        self.derive(self.samples[start..start + len].to_vec(), self.label.clone())
    }

    /// Last `len` samples.
    pub fn tail(&self, len: usize) -> Result<Self> {
        if len > self.len() {
            return Err(Error::InsufficientSamples {
                need: len,
                have: self.len(),
            });
        }
        self.slice(self.len() - len, len)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }
}

/// One sinusoidal stimulus component: `amplitude * sin(2 pi f t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Tone {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self {
            amplitude,
            frequency,
            phase,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t + self.phase).sin()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.frequency;
        self.amplitude * w * (w * t + self.phase).cos()
    }
}

pub fn check_tones(tones: &[Tone], rate: f64) -> Result<()> {
    for t in tones {
        if t.frequency >= rate / 2.0 || t.frequency < 0.0 {
            return Err(Error::AliasedTone {
                freq: t.frequency,
                nyquist: rate / 2.0,
            });
        }
    }
    Ok(())
}

/// Sample `k` is `offset + sum amp * sin(2 pi f k / rate + phase)`.
pub fn generate_tone_sum(tones: &[Tone], rate: f64, n: usize, offset: f64) -> Result<SampleStream> {
    check_tones(tones, rate)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be > 0".into()));
    }
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / rate;
            offset + tones.iter().map(|tone| tone.value(t)).sum::<f64>()
        })
        .collect();
    SampleStream::new(samples, rate, "tones")
}

/// Nearest odd FFT bin to `target`, returned as a frequency.
///
/// An odd bin index is coprime with a power-of-two record length, so every
/// sample hits a distinct phase of the tone.
pub fn coherent_bin_frequency(target: f64, rate: f64, n_fft: usize) -> f64 {
    rate * coherent_bin(target, rate, n_fft) as f64 / n_fft as f64
}

pub fn coherent_bin(target: f64, rate: f64, n_fft: usize) -> usize {
    let mut bin = (target * n_fft as f64 / rate).round().max(0.0) as usize;
    if bin % 2 == 0 {
        bin += 1;
    }
    bin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Bins on each side of a tone that still hold its main lobe.
    fn lobe_half_width(self) -> usize {
        match self {
            Window::Rectangular => 1,
            Window::Hann => 3,
        }
    }
}

/// Averaged single-sided power spectrum in dBFS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bin_freqs: Vec<f64>,
    pub power_db: Vec<f64>,
    pub n_fft: usize,
    pub n_avg: usize,
    pub window: Window,
    pub rate: f64,
    /// Equivalent noise bandwidth of the window, in bins.
    pub enbw_bins: f64,
}

impl Spectrum {
    pub fn linear(&self) -> Vec<f64> {
        self.power_db.iter().map(|p| 10f64.powf(p / 10.0)).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.rate / self.n_fft as f64
    }

    /// Sum of all bins in linear full-scale power units, noise-bandwidth corrected.
    pub fn integrated_power(&self) -> f64 {
        self.linear().iter().sum::<f64>() / self.enbw_bins
    }
}

pub fn spectrum(stream: &SampleStream, n_fft: usize, n_avg: usize, window: Window) -> Result<Spectrum> {
    if n_fft < 2 || !n_fft.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "n_fft must be a power of two, got {n_fft}"
        )));
    }
    if n_avg == 0 {
        return Err(Error::InvalidArgument("n_avg must be > 0".into()));
    }
    let need = n_fft * n_avg;
    if stream.len() < need {
        return Err(Error::InsufficientSamples {
            need,
            have: stream.len(),
        });
    }
    let w = window.coefficients(n_fft);
    let sum_w: f64 = w.iter().sum();
    let sum_w2: f64 = w.iter().map(|v| v * v).sum();
    let enbw_bins = n_fft as f64 * sum_w2 / (sum_w * sum_w);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let n_bins = n_fft / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for seg in 0..n_avg {
        let x = &stream.samples[seg * n_fft..(seg + 1) * n_fft];
        for ((b, &v), &wk) in buf.iter_mut().zip(x).zip(&w) {
            *b = Complex::new(v * wk, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || k == n_fft / 2 { 1.0 } else { 2.0 };
            *a += one_sided * buf[k].norm_sqr() / (sum_w * sum_w);
        }
    }
    // full-scale sine power is A^2/2
    let fs_power = stream.full_scale * stream.full_scale / 2.0;
    let power_db = acc
        .iter()
        .map(|a| {
            let p = a / n_avg as f64 / fs_power;
            if p > 0.0 {
                (10.0 * p.log10()).max(FLOOR_DBFS)
            } else {
                FLOOR_DBFS
            }
        })
        .collect();
    let df = stream.rate / n_fft as f64;
    Ok(Spectrum {
        bin_freqs: (0..n_bins).map(|k| k as f64 * df).collect(),
        power_db,
        n_fft,
        n_avg,
        window,
        rate: stream.rate,
        enbw_bins,
    })
}

/// Standard single-tone ADC figures of merit over the band `(0, rate / (2 osr)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub snr_db: f64,
    pub sndr_db: f64,
    pub sfdr_db: f64,
    pub thd_db: f64,
    pub enob_bits: f64,
    pub signal_dbfs: f64,
    pub band_hz: f64,
    pub n_harmonics: usize,
}

/// Folds a frequency into `[0, rate/2]`.
pub fn fold_frequency(f: f64, rate: f64) -> f64 {
    let r = f.rem_euclid(rate);
    if r > rate / 2.0 {
        rate - r
    } else {
        r
    }
}

pub fn metrics(spec: &Spectrum, f_sig: f64, osr: usize, n_harmonics: usize) -> Result<Metrics> {
    if osr == 0 {
        return Err(Error::InvalidArgument("osr must be >= 1".into()));
    }
    if n_harmonics < 2 {
        return Err(Error::InvalidArgument("n_harmonics must be >= 2".into()));
    }
    let band = spec.rate / (2.0 * osr as f64);
    if !(f_sig > 0.0 && f_sig <= band) {
        return Err(Error::OutOfBand { f_sig, band });
    }
    let df = spec.bin_width();
    let last_bin = spec.power_db.len() - 1;
    let band_bin = ((band / df).floor() as usize).min(last_bin);
    let w = spec.window.lobe_half_width();
    let dc_excl = if spec.window == Window::Rectangular { 0 } else { w };
    let p = spec.linear();
    let sig_bin = (f_sig / df).round() as usize;
    let sig_lo = sig_bin.saturating_sub(w).max(dc_excl + 1);
    let sig_hi = (sig_bin + w).min(band_bin);
    let in_signal = |k: usize| k >= sig_lo && k <= sig_hi;

    let mut harmonic = vec![false; band_bin + 1];
    for h in 2..=n_harmonics {
        let fh = fold_frequency(h as f64 * f_sig, spec.rate);
        if fh > band {
            continue;
        }
        let hb = (fh / df).round() as usize;
        for k in hb.saturating_sub(w)..=(hb + w).min(band_bin) {
            if k > dc_excl && !in_signal(k) {
                harmonic[k] = true;
            }
        }
    }

    let p_sig: f64 = (sig_lo..=sig_hi).map(|k| p[k]).sum::<f64>();
    let mut nd = 0.0;
    let mut dist = 0.0;
    let mut max_spur = 0.0f64;
    for k in (dc_excl + 1)..=band_bin {
        if in_signal(k) {
            continue;
        }
        nd += p[k];
        if harmonic[k] {
            dist += p[k];
        }
        max_spur = max_spur.max(p[k]);
    }
    let enbw = spec.enbw_bins;
    let p_sig = p_sig / enbw;
    let nd = nd / enbw;
    let dist = dist / enbw;
    let noise = (nd - dist).max(f64::MIN_POSITIVE);
    let db = |x: f64| 10.0 * x.max(f64::MIN_POSITIVE).log10();
    let sndr_db = db(p_sig / nd.max(f64::MIN_POSITIVE));
    Ok(Metrics {
        snr_db: db(p_sig / noise),
        sndr_db,
        sfdr_db: db(p_sig) - db(max_spur / enbw),
        thd_db: db(dist / p_sig),
        enob_bits: enob(sndr_db),
        signal_dbfs: db(p_sig),
        band_hz: band,
        n_harmonics,
    })
}

pub fn enob(sndr_db: f64) -> f64 {
    (sndr_db - 1.76) / 6.02
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoToneMetrics {
    pub tone1_dbfs: f64,
    pub tone2_dbfs: f64,
    /// Stronger third-order product relative to the stronger tone.
    pub im3_dbc: f64,
    /// Both tones against everything else in band.
    pub sndr_db: f64,
    pub band_hz: f64,
}

pub fn two_tone_metrics(spec: &Spectrum, f1: f64, f2: f64, osr: usize) -> Result<TwoToneMetrics> {
    if osr == 0 {
        return Err(Error::InvalidArgument("osr must be >= 1".into()));
    }
    let band = spec.rate / (2.0 * osr as f64);
    for f in [f1, f2] {
        if !(f > 0.0 && f <= band) {
            return Err(Error::OutOfBand { f_sig: f, band });
        }
    }
    let df = spec.bin_width();
    let band_bin = ((band / df).floor() as usize).min(spec.power_db.len() - 1);
    let w = spec.window.lobe_half_width();
    let dc_excl = if spec.window == Window::Rectangular { 0 } else { w };
    let bin = |f: f64| (f / df).round() as usize;
    let (b1, b2) = (bin(f1), bin(f2));
    if b1.abs_diff(b2) <= 2 * w {
        return Err(Error::InvalidArgument(format!(
            "tones {f1} Hz and {f2} Hz overlap in a {}-point spectrum",
            spec.n_fft
        )));
    }
    let p = spec.linear();
    let lobe = |b: usize| {
        let lo = b.saturating_sub(w).max(dc_excl + 1);
        let hi = (b + w).min(p.len() - 1);
        (lo..=hi).map(|k| p[k]).sum::<f64>() / spec.enbw_bins
    };
    let (p1, p2) = (lobe(b1), lobe(b2));
    let im3 = [2.0 * f1 - f2, 2.0 * f2 - f1]
        .iter()
        .map(|&f| lobe(bin(fold_frequency(f, spec.rate))))
        .fold(0.0, f64::max);
    let rest: f64 = ((dc_excl + 1)..=band_bin)
        .filter(|&k| k.abs_diff(b1) > w && k.abs_diff(b2) > w)
        .map(|k| p[k])
        .sum::<f64>()
        / spec.enbw_bins;
    let db = |x: f64| 10.0 * x.max(f64::MIN_POSITIVE).log10();
    Ok(TwoToneMetrics {
        tone1_dbfs: db(p1),
        tone2_dbfs: db(p2),
        im3_dbc: db(im3) - db(p1.max(p2)),
        sndr_db: db(p1 + p2) - db(rest),
        band_hz: band,
    })
}

/// Four-parameter sine: `offset + amplitude * sin(2 pi f k / rate + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineFit {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
    pub iterations: usize,
}

impl SineFit {
    pub fn value(&self, k: usize, rate: f64) -> f64 {
        self.offset
            + self.amplitude * (2.0 * PI * self.frequency * k as f64 / rate + self.phase).sin()
    }
}

pub const SINE_FIT_MAX_ITER: usize = 30;
pub const SINE_FIT_TOL: f64 = 1e-12;

/// Four-parameter least-squares sine fit (IEEE 1057 style).
///
/// The best three-parameter fit within two bins of `f_guess` seeds
/// Gauss-Newton refinement of the frequency. The iteration stops once the relative frequency update
/// drops below [`SINE_FIT_TOL`].
pub fn sine_fit(stream: &SampleStream, f_guess: f64) -> Result<SineFit> {
    let n = stream.len();
    let rate = stream.rate;
    if !(f_guess > 0.0 && f_guess < rate / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "frequency guess {f_guess} outside (0, rate/2)"
        )));
    }
    let need = (4.0 * rate / f_guess).ceil() as usize;
    if n < need {
        return Err(Error::InsufficientSamples { need, have: n });
    }
    let y = &stream.samples;
    let rms = stream.mean_square().sqrt();
    // time is centered for conditioning, phase is referred back to k = 0
    let mid = (n as f64 - 1.0) / 2.0;
    let tk: Vec<f64> = (0..n).map(|k| (k as f64 - mid) / rate).collect();

    let three_param = |w: f64| -> Result<[f64; 3]> {
        let s: Vec<f64> = tk.iter().map(|t| (w * t).sin()).collect();
        let c: Vec<f64> = tk.iter().map(|t| (w * t).cos()).collect();
        let x = lstsq(&[s, c, vec![1.0; n]], y)?;
        Ok([x[0], x[1], x[2]])
    };
    let sse = |w: f64, [a, b, c]: [f64; 3]| -> f64 {
        tk.iter()
            .zip(y)
            .map(|(t, v)| (v - a * (w * t).sin() - b * (w * t).cos() - c).powi(2))
            .sum()
    };

    // coarse search over +-2 bins so the refinement starts inside the main lobe
    let bin = 2.0 * PI * rate / n as f64;
    let mut w = 2.0 * PI * f_guess;
    let mut best = f64::INFINITY;
    for j in -8..=8 {
        let wc = 2.0 * PI * f_guess + j as f64 * bin / 4.0;
        if !(wc > 0.0 && wc < PI * rate) {
            continue;
        }
        let e = sse(wc, three_param(wc)?);
        if e < best {
            best = e;
            w = wc;
        }
    }
    let [mut a, mut b, _] = three_param(w)?;
    let amp0 = a.hypot(b);
    if amp0 <= 1e-9 * rms.max(f64::MIN_POSITIVE) || amp0 == 0.0 {
        return Err(Error::Degenerate("zero fitted amplitude".into()));
    }
    let mut iterations = 0;
    loop {
        if iterations >= SINE_FIT_MAX_ITER {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let s: Vec<f64> = tk.iter().map(|t| (w * t).sin()).collect();
        let co: Vec<f64> = tk.iter().map(|t| (w * t).cos()).collect();
        let dw: Vec<f64> = tk
            .iter()
            .zip(s.iter().zip(&co))
            .map(|(t, (sv, cv))| t * (a * cv - b * sv))
            .collect();
        let x = lstsq(&[s, co, vec![1.0; n], dw], y)?;
        a = x[0];
        b = x[1];
        let step = x[3];
        w += step;
        if !(w > 0.0 && w < PI * rate) {
            return Err(Error::NonConvergence { iterations });
        }
        if (step / w).abs() < SINE_FIT_TOL {
            break;
        }
    }
    // final linear pass at converged frequency
    let [a, b, c] = three_param(w)?;
    let amplitude = a.hypot(b);
    if amplitude <= 1e-9 * rms.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("zero fitted amplitude".into()));
    }
    // a sin(w t) + b cos(w t) = A sin(w t + phi), phi = atan2(b, a); shift t by mid
    let phase = (b.atan2(a) - w * mid / rate).rem_euclid(2.0 * PI);
    Ok(SineFit {
        amplitude,
        frequency: w / (2.0 * PI),
        phase,
        offset: c,
        iterations,
    })
}

/// Split of a capture into fundamental, harmonic distortion and residue.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Fundamental plus DC offset.
    pub d_sig: SampleStream,
    pub dist: SampleStream,
    pub noise: SampleStream,
    /// Input minus noise residue.
    pub d_cl: SampleStream,
}

/// Splits a capture into fundamental, harmonics 2..=`n_harmonics` and residue.
///
/// The frequency from `fit` is refined jointly with all harmonic amplitudes,
/// since a single-tone fit is pulled off by unmodeled harmonics. Harmonics
/// folding onto DC are absorbed by the offset.
pub fn decompose(stream: &SampleStream, fit: &SineFit, n_harmonics: usize) -> Result<Decomposition> {
    let n = stream.len();
    let rate = stream.rate;
    let bin = rate / n as f64;
    let y = &stream.samples;
    // harmonic order and whether it gets a cosine column
    let mut terms = vec![(1usize, true)];
    for h in 2..=n_harmonics {
        let fh = fold_frequency(h as f64 * fit.frequency, rate);
        if (fh - fit.frequency).abs() < bin {
            return Err(Error::HarmonicAlias { harmonic: h });
        }
        if fh < bin {
            continue;
        }
        // at Nyquist the sine term carries the whole component
        terms.push((h, fh < rate / 2.0 - bin));
    }
    let mid = (n as f64 - 1.0) / 2.0;
    let tk: Vec<f64> = (0..n).map(|k| k as f64 - mid).collect();
    let w0 = 2.0 * PI * fit.frequency / rate;
    let psi = fit.phase + w0 * mid;
    let columns = |w: f64| -> Vec<Vec<f64>> {
        let mut cols = vec![vec![1.0; n]];
        for &(h, with_cos) in &terms {
            let hf = h as f64;
            cols.push(tk.iter().map(|t| (hf * (w * t + psi)).sin()).collect());
            if with_cos {
                cols.push(tk.iter().map(|t| (hf * (w * t + psi)).cos()).collect());
            }
        }
        cols
    };
    let derivative = |w: f64, coef: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; n];
        let mut j = 1;
        for &(h, with_cos) in &terms {
            let hf = h as f64;
            let (a, b) = (coef[j], if with_cos { coef[j + 1] } else { 0.0 });
            j += 1 + with_cos as usize;
            for (dv, t) in d.iter_mut().zip(&tk) {
                let arg = hf * (w * t + psi);
                *dv += hf * t * (a * arg.cos() - b * arg.sin());
            }
        }
        d
    };

    let mut w = w0;
    let mut coef = lstsq(&columns(w), y)?;
    let mut iterations = 0;
    loop {
        if iterations >= SINE_FIT_MAX_ITER {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let mut cols = columns(w);
        cols.push(derivative(w, &coef));
        let x = lstsq(&cols, y)?;
        let step = x[x.len() - 1];
        w += step;
        if !(w > 0.0 && w < PI) {
            return Err(Error::NonConvergence { iterations });
        }
        coef = lstsq(&columns(w), y)?;
        if (step / w).abs() < SINE_FIT_TOL {
            break;
        }
    }

    let cols = columns(w);
    let n_fund = 3;
    let mut d_sig = vec![0.0; n];
    let mut dist = vec![0.0; n];
    for (j, (c, a)) in cols.iter().zip(&coef).enumerate() {
        let target = if j < n_fund { &mut d_sig } else { &mut dist };
        for (v, cv) in target.iter_mut().zip(c) {
            *v += a * cv;
        }
    }
    let noise: Vec<f64> = y.iter().zip(d_sig.iter().zip(&dist)).map(|(v, (s, d))| v - s - d).collect();
    let d_cl: Vec<f64> = y.iter().zip(&noise).map(|(v, r)| v - r).collect();
    let lbl = &stream.label;
    Ok(Decomposition {
        d_sig: stream.derive(d_sig, format!("{lbl}.sig"))?,
        dist: stream.derive(dist, format!("{lbl}.dist"))?,
        noise: stream.derive(noise, format!("{lbl}.noise"))?,
        d_cl: stream.derive(d_cl, format!("{lbl}.cl"))?,
    })
}
