//! Ring-oscillator VCO: static tuning curve and exact multi-phase edge generation.
//!
//! The bank of `n_phi` phases is modeled through the scaled phase
//! `u = 2 n_phi theta`. Phase `i` changes level whenever `u + i` crosses a
//! multiple of `n_phi`, so the whole bank produces one level change per unit
//! of `u` and `2 n_phi` per oscillation cycle.

use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq, polyval};
use crate::signal::Tone;
use crate::{Error, Result};

/// Slope unit for the derivative term of a tuning curve: input units per ns.
pub const SLOPE_UNIT_S: f64 = 1e-9;

/// Static frequency-versus-input characteristic of a ring oscillator.
///
/// `f(x) = f0 + K x_dev + F_lin * sum_j nl_poly[j] u^j + sum_j slope_poly[j] s^(j+1)`
/// with `x_dev = x - midpoint`, `u = x_dev / half_range`, `F_lin = K (x_max - x_min)`
/// and `s` the input slope in units per ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurve {
    pub f0: f64,
    pub gain_k: f64,
    #[serde(default)]
    pub nl_poly: Vec<f64>,
    pub input_range: [f64; 2],
    /// Slope-dependent term in Hz, powers 1, 2, ... of the input slope.
    #[serde(default)]
    pub slope_poly: Vec<f64>,
}

/// Result of [`TuningCurve::max_frequency_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub pass: bool,
    pub f_min: f64,
    pub f_max: f64,
    /// `fs/2 - f_max`; negative on failure.
    pub margin: f64,
}

const SCAN_POINTS: usize = 2001;
const NEWTON_STEPS: usize = 3;

impl TuningCurve {
    pub fn linear(f0: f64, gain_k: f64, input_range: [f64; 2]) -> Self {
        Self {
            f0,
            gain_k,
            nl_poly: Vec::new(),
            input_range,
            slope_poly: Vec::new(),
        }
    }

    /// First stage of the reference design: 1.0 GHz rest, 1.21 GHz over 750 mVpp.
    pub fn table1_stage1() -> Self {
        Self::linear(1.0e9, 1.21e9 / 0.75, [-0.375, 0.375])
    }

    /// Second stage of the reference design: 0.9 GHz rest, 1.57 GHz over E in [0, 32].
    pub fn table1_stage2() -> Self {
        Self::linear(0.9e9, 1.57e9 / 32.0, [0.0, 32.0])
    }

    /// Second-stage curve with strong, mostly even-order bending (18 % INL).
    ///
    /// The rest frequency sits at 1.18 GHz so the bent curve stays inside `(0, fs/2)`.
    pub fn stage2_nl18() -> Self {
        Self {
            f0: STAGE2_NL_F0,
            nl_poly: vec![0.0, 0.0, STAGE2_NL_QUAD, STAGE2_NL_CUBIC],
            ..Self::table1_stage2()
        }
    }

    /// First-stage curve with a cubic static term and a cubic input-slope term.
    ///
    /// Used by calibration runs; the odd terms survive a differential readout.
    pub fn stage1_dynamic_nl() -> Self {
        Self {
            nl_poly: vec![0.0, 0.0, 0.0, STAGE1_NL_CUBIC],
            slope_poly: vec![0.0, 0.0, STAGE1_SLOPE_CUBIC],
            ..Self::table1_stage1()
        }
    }

    /// Odd part of [`Self::stage2_nl18`] (3 % INL), as seen through cross-coupling.
    pub fn stage2_nl3() -> Self {
        Self::stage2_nl18().cross_coupled_equivalent()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.input_range[0] + self.input_range[1])
    }

    pub fn half_range(&self) -> f64 {
        0.5 * (self.input_range[1] - self.input_range[0])
    }

    /// Frequency span of the linear term over the input range.
    pub fn linear_span(&self) -> f64 {
        self.gain_k * 2.0 * self.half_range()
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.input_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Validation(format!("input range [{lo}, {hi}] is empty")));
        }
        if !(self.f0.is_finite() && self.gain_k.is_finite()) {
            return Err(Error::Validation("non-finite curve parameter".into()));
        }
        if self.nl_poly.first().is_some_and(|&c| c != 0.0) {
            return Err(Error::Validation("nl_poly[0] must be 0".into()));
        }
        if self.nl_poly.iter().chain(&self.slope_poly).any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite polynomial coefficient".into()));
        }
        Ok(())
    }

    /// Static frequency; `x` is clamped into the input range.
    pub fn tuning_frequency(&self, x: f64) -> f64 {
        self.frequency_with_flag(x).0
    }

    /// Static frequency and whether `x` had to be clamped.
    pub fn frequency_with_flag(&self, x: f64) -> (f64, bool) {
        let [lo, hi] = self.input_range;
        let xc = x.clamp(lo, hi);
        (self.static_unclamped(xc), xc != x)
    }

    fn static_unclamped(&self, x: f64) -> f64 {
        let dev = x - self.midpoint();
        let mut f = self.f0 + self.gain_k * dev;
        if !self.nl_poly.is_empty() {
            f += self.linear_span() * polyval(&self.nl_poly, dev / self.half_range());
        }
        f
    }

    /// Frequency including the slope term; `slope` in input units per second.
    pub fn dynamic_frequency(&self, x: f64, slope: f64) -> f64 {
        let f = self.tuning_frequency(x);
        if self.slope_poly.is_empty() {
            return f;
        }
        let s = slope * SLOPE_UNIT_S;
        f + s * polyval(&self.slope_poly, s)
    }

    pub fn has_slope_term(&self) -> bool {
        self.slope_poly.iter().any(|&c| c != 0.0)
    }

    fn scan(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let [lo, hi] = self.input_range;
        (0..SCAN_POINTS).map(move |k| {
            let x = lo + (hi - lo) * k as f64 / (SCAN_POINTS - 1) as f64;
            (x, self.static_unclamped(x))
        })
    }

    /// Passes iff `0 < f(x) < fs/2` everywhere on the input range.
    pub fn max_frequency_check(&self, fs: f64) -> FrequencyReport {
        let (f_min, f_max) = self
            .scan()
            .fold((f64::MAX, f64::MIN), |(a, b), (_, f)| (a.min(f), b.max(f)));
        let margin = fs / 2.0 - f_max;
        FrequencyReport {
            pass: margin > 0.0 && f_min > 0.0,
            f_min,
            f_max,
            margin,
        }
    }

    /// Frequency range `max f - min f` over the input range.
    pub fn frequency_range(&self) -> f64 {
        let r = self.max_frequency_check(f64::INFINITY);
        r.f_max - r.f_min
    }

    /// Maximum deviation from the least-squares line, relative to the frequency range.
    pub fn inl(&self) -> f64 {
        let (xs, fs): (Vec<f64>, Vec<f64>) = self.scan().unzip();
        let mid = self.midpoint();
        let dev: Vec<f64> = xs.iter().map(|x| x - mid).collect();
        let line = lstsq(&[vec![1.0; xs.len()], dev.clone()], &fs)
            .expect("scan grid has full rank");
        let worst = dev
            .iter()
            .zip(&fs)
            .map(|(d, f)| (f - line[0] - line[1] * d).abs())
            .fold(0.0, f64::max);
        worst / self.frequency_range()
    }

    /// Curve seen by a pseudo-differential pair driven by complementary inputs.
    ///
    /// Even-order terms cancel in the channel difference, so only the odd part remains.
    pub fn cross_coupled_equivalent(&self) -> Self {
        let nl_poly = self
            .nl_poly
            .iter()
            .enumerate()
            .map(|(j, &c)| if j % 2 == 1 { c } else { 0.0 })
            .collect();
        Self {
            nl_poly,
            ..self.clone()
        }
    }

    pub fn pfm_info(&self, n_phi: usize) -> PfmInfo {
        PfmInfo {
            f_eff: 2.0 * n_phi as f64 * self.f0,
        }
    }
}

/// Quadratic coefficient of the 18 % second-stage preset.
pub const STAGE2_NL_QUAD: f64 = -0.2;
pub const STAGE1_NL_CUBIC: f64 = 0.02;
/// Hz per (V/ns)^3.
pub const STAGE1_SLOPE_CUBIC: f64 = 3.4e10;
/// Rest frequency of the 18 % second-stage preset.
pub const STAGE2_NL_F0: f64 = 1.18e9;
/// Cubic coefficient of the 18 % second-stage preset.
pub const STAGE2_NL_CUBIC: f64 = -0.065;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfmInfo {
    /// Center of the first PFM sideband, `2 n_phi f0`.
    pub f_eff: f64,
}

/// Least-squares polynomial fit to a tabulated characteristic.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub curve: TuningCurve,
    /// RMS of the table residual in Hz.
    pub residual_rms: f64,
}

pub fn fit_curve_from_table(points: &[(f64, f64)], order: usize) -> Result<CurveFit> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be >= 1".into()));
    }
    if points.len() < order + 1 {
        return Err(Error::InsufficientSamples {
            need: order + 1,
            have: points.len(),
        });
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidArgument("x must be strictly increasing".into()));
    }
    let lo = points[0].0;
    let hi = points[points.len() - 1].0;
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let us: Vec<f64> = points.iter().map(|p| (p.0 - mid) / half).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let columns: Vec<Vec<f64>> = (0..=order)
        .map(|j| us.iter().map(|u| u.powi(j as i32)).collect())
        .collect();
    let c = lstsq(&columns, &ys)?;
    if c[1] == 0.0 {
        return Err(Error::RankDeficient("fitted curve has no linear term".into()));
    }
    let gain_k = c[1] / half;
    let span = 2.0 * c[1];
    let mut nl_poly: Vec<f64> = c.iter().map(|v| v / span).collect();
    nl_poly[0] = 0.0;
    nl_poly[1] = 0.0;
    if order == 1 {
        nl_poly.clear();
    }
    let curve = TuningCurve {
        f0: c[0],
        gain_k,
        nl_poly,
        input_range: [lo, hi],
        slope_poly: Vec::new(),
    };
    let residual_rms = (points
        .iter()
        .map(|&(x, f)| (curve.tuning_frequency(x) - f).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(CurveFit {
        curve,
        residual_rms,
    })
}

/// Accumulated phase of one oscillator bank.
///
/// The scaled phase `u = 2 n_phi theta` is kept as an integer count plus a
/// fraction in `[0, 1)` so long runs do not lose resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub n_phi: usize,
    /// Number of level changes emitted by the bank so far.
    pub count: i64,
    pub frac: f64,
    /// Starting phase in cycles.
    pub initial_offset: f64,
}

impl PhaseState {
    pub fn new(n_phi: usize, initial_offset: f64) -> Result<Self> {
        if n_phi == 0 {
            return Err(Error::Validation("n_phi must be >= 1".into()));
        }
        let u0 = 2.0 * n_phi as f64 * initial_offset.rem_euclid(1.0);
        Ok(Self {
            n_phi,
            count: u0.floor() as i64,
            frac: u0 - u0.floor(),
            initial_offset,
        })
    }

    /// Accumulated phase in cycles.
    pub fn theta(&self) -> f64 {
        (self.count as f64 + self.frac) / (2.0 * self.n_phi as f64)
    }

    /// Level of phase `i`.
    pub fn level(&self, i: usize) -> u8 {
        let n = self.n_phi as i64;
        ((self.count + i as i64).div_euclid(n).rem_euclid(2)) as u8
    }

    pub fn levels(&self) -> Vec<u8> {
        (0..self.n_phi).map(|i| self.level(i)).collect()
    }

    /// Adds `du` to the scaled phase over `[t0, t0 + dt]`, with `u` linear in time.
    /// Calls `on_edge(time, crossing)` for every integer crossed.
    #[inline]
    pub(crate) fn step_linear(
        &mut self,
        t0: f64,
        dt: f64,
        du: f64,
        on_edge: impl FnMut(f64, i64),
    ) -> Result<()> {
        let r = du / dt;
        self.step_quadratic(t0, dt, [r, r, r], on_edge)
    }

    /// Advances the scaled phase over `[t0, t0 + dt]` with its rate given at
    /// the start, middle and end of the cell.
    ///
    /// The rate is the quadratic through the three values, so the advance is
    /// Simpson's rule and edge times are roots of a cubic, found by Newton
    /// steps from the constant-rate estimate.
    #[inline]
    pub(crate) fn step_quadratic(
        &mut self,
        t0: f64,
        dt: f64,
        [ra, rm, rb]: [f64; 3],
        mut on_edge: impl FnMut(f64, i64),
    ) -> Result<()> {
        let du = dt * (ra + 4.0 * rm + rb) / 6.0;
        if du >= self.n_phi as f64 {
            return Err(Error::GridTooCoarse {
                advance: du,
                limit: self.n_phi,
            });
        }
        let end = self.frac + du;
        let crossings = end.floor() as i64;
        if crossings > 0 {
            // r(tau) = ra + c1 tau + c2 tau^2
            let c1 = (-3.0 * ra + 4.0 * rm - rb) / dt;
            let c2 = (2.0 * ra - 4.0 * rm + 2.0 * rb) / (dt * dt);
            let u = |tau: f64| tau * (ra + tau * (c1 / 2.0 + tau * c2 / 3.0));
            let r = |tau: f64| ra + tau * (c1 + tau * c2);
            for j in 1..=crossings {
                let need = j as f64 - self.frac;
                let mut tau = (need / du * dt).clamp(0.0, dt);
                for _ in 0..NEWTON_STEPS {
                    let slope = r(tau);
                    if !(slope > 0.0) {
                        break;
                    }
                    tau = (tau - (u(tau) - need) / slope).clamp(0.0, dt);
                }
                on_edge(t0 + tau, self.count + j);
            }
        }
        self.count += crossings;
        self.frac = end - crossings as f64;
        Ok(())
    }

    /// Phase index that toggles when the scaled phase reaches integer `m`.
    #[inline]
    pub fn phase_of(&self, m: i64) -> usize {
        (-m).rem_euclid(self.n_phi as i64) as usize
    }
}

/// Piecewise-constant logic waveform with exact transition times.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeWaveform {
    pub initial_level: u8,
    /// `(time, new_level)`, strictly increasing times, alternating levels.
    pub transitions: Vec<(f64, u8)>,
}

impl EdgeWaveform {
    pub fn new(initial_level: u8) -> Self {
        Self {
            initial_level,
            transitions: Vec::new(),
        }
    }

    pub fn level_at(&self, t: f64) -> u8 {
        match self.transitions.partition_point(|&(tt, _)| tt <= t) {
            0 => self.initial_level,
            k => self.transitions[k - 1].1,
        }
    }

    pub fn final_level(&self) -> u8 {
        self.transitions.last().map_or(self.initial_level, |t| t.1)
    }

    /// Time spent high within `[t0, t1]`.
    pub fn high_time(&self, t0: f64, t1: f64) -> f64 {
        let mut level = self.level_at(t0);
        let mut last = t0;
        let mut acc = 0.0;
        for &(t, l) in self.transitions.iter().filter(|(t, _)| *t > t0 && *t < t1) {
            if level == 1 {
                acc += t - last;
            }
            level = l;
            last = t;
        }
        if level == 1 {
            acc += t1 - last;
        }
        acc
    }

    pub fn is_well_formed(&self) -> bool {
        let mut level = self.initial_level;
        let mut last = f64::NEG_INFINITY;
        for &(t, l) in &self.transitions {
            if t <= last || l == level || l > 1 {
                return false;
            }
            level = l;
            last = t;
        }
        true
    }
}

/// Inner integration grid for continuous inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerGrid {
    pub points_per_sample: usize,
}

impl Default for InnerGrid {
    fn default() -> Self {
        Self {
            points_per_sample: 32,
        }
    }
}

/// Input signal driving an oscillator over an interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    /// Sum of tones plus offset, integrated on the inner grid.
    Tones { tones: Vec<Tone>, offset: f64 },
    /// Constant value on `[t_k, t_{k+1})` for each listed `(t_k, value)`; integrated exactly.
    Piecewise(Vec<(f64, f64)>),
}

impl Drive {
    fn tone_value(tones: &[Tone], offset: f64, t: f64) -> (f64, f64) {
        tones.iter().fold((offset, 0.0), |(v, s), tone| {
            (v + tone.value(t), s + tone.derivative(t))
        })
    }
}

/// Integrates the oscillator over `[t0, t1]` and returns per-phase edge waveforms.
///
/// `sample_period` sets the inner grid spacing for continuous drives.
pub fn advance_phase(
    state: &PhaseState,
    curve: &TuningCurve,
    drive: &Drive,
    t0: f64,
    t1: f64,
    sample_period: f64,
    grid: InnerGrid,
) -> Result<(PhaseState, Vec<EdgeWaveform>)> {
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("empty interval [{t0}, {t1}]")));
    }
    if grid.points_per_sample == 0 {
        return Err(Error::InvalidArgument("grid needs at least one point".into()));
    }
    let mut st = *state;
    let scale = 2.0 * st.n_phi as f64;
    let mut waves: Vec<EdgeWaveform> = st.levels().into_iter().map(EdgeWaveform::new).collect();
    let n = st.n_phi as i64;
    let mut emit = |t: f64, m: i64| {
        let i = (-m).rem_euclid(n) as usize;
        let level = ((m + i as i64).div_euclid(n).rem_euclid(2)) as u8;
        waves[i].transitions.push((t, level));
    };
    match drive {
        Drive::Tones { tones, offset } => {
            let h = sample_period / grid.points_per_sample as f64;
            let cells = ((t1 - t0) / h).ceil().max(1.0) as usize;
            let freq = |t: f64| {
                let (v, s) = Drive::tone_value(tones, *offset, t);
                curve.dynamic_frequency(v, s)
            };
            let mut ta = t0;
            let mut fa = freq(ta);
            for c in 0..cells {
                let tb = if c + 1 == cells { t1 } else { t0 + (c + 1) as f64 * h };
                let fm = freq(0.5 * (ta + tb));
                let fb = freq(tb);
                st.step_quadratic(ta, tb - ta, [scale * fa, scale * fm, scale * fb], &mut emit)?;
                ta = tb;
                fa = fb;
            }
        }
        Drive::Piecewise(segments) => {
            for (k, &(ts, v)) in segments.iter().enumerate() {
                let te = segments.get(k + 1).map_or(t1, |s| s.0).min(t1);
                let ts = ts.max(t0);
                if te <= ts {
                    continue;
                }
                let du = scale * curve.tuning_frequency(v) * (te - ts);
                st.step_linear(ts, te - ts, du, &mut emit)?;
            }
        }
    }
    Ok((st, waves))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 3.5e9;

    #[test]
    fn table1_stage1_frequencies() {
        let c = TuningCurve::table1_stage1();
        assert_eq!(c.tuning_frequency(0.0), 1.0e9);
        let span = c.tuning_frequency(0.375) - c.tuning_frequency(-0.375);
        assert!((span - 1.21e9).abs() < 1.0);
    }

    #[test]
    fn clamping_is_flagged() {
        let c = TuningCurve::table1_stage1();
        let (f, clamped) = c.frequency_with_flag(1.0);
        assert!(clamped);
        assert_eq!(f, c.tuning_frequency(0.375));
    }

    #[test]
    fn frequency_checks() {
        let r = TuningCurve::table1_stage1().max_frequency_check(FS);
        assert!(r.pass);
        assert!((r.margin - 145e6).abs() < 1.0);
        let r2 = TuningCurve::table1_stage2().max_frequency_check(FS);
        assert!(r2.pass && (r2.f_max - 1.685e9).abs() < 1.0);
        let at_nyquist = TuningCurve::linear(FS / 2.0, 0.0, [0.0, 1.0]);
        assert!(!at_nyquist.max_frequency_check(FS).pass);
    }

    #[test]
    fn linear_curve_has_zero_inl() {
        assert!(TuningCurve::table1_stage2().inl() < 1e-12);
    }

    #[test]
    fn nonzero_constant_nl_term_rejected() {
        let mut c = TuningCurve::table1_stage2();
        c.nl_poly = vec![0.1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_midpoint_input_over_one_period() {
        let st = PhaseState::new(32, 0.0).unwrap();
        let c = TuningCurve::table1_stage1();
        let drive = Drive::Piecewise(vec![(0.0, 0.0)]);
        let (end, _) = advance_phase(&st, &c, &drive, 0.0, 1.0 / FS, 1.0 / FS, InnerGrid::default())
            .unwrap();
        assert!((end.theta() - 1.0e9 / FS).abs() < 1e-12);
    }

    #[test]
    fn free_running_edges_are_uniform() {
        let st = PhaseState::new(4, 0.0).unwrap();
        let c = TuningCurve::linear(1.0e9, 0.0, [-1.0, 1.0]);
        let drive = Drive::Tones {
            tones: vec![Tone::new(0.3, 10e6, 0.0)],
            offset: 0.0,
        };
        let (_, waves) = advance_phase(&st, &c, &drive, 0.0, 20e-9, 1.0 / FS, InnerGrid::default())
            .unwrap();
        let mut times: Vec<f64> = waves.iter().flat_map(|w| w.transitions.iter().map(|t| t.0)).collect();
        times.sort_by(f64::total_cmp);
        let spacing = 1.0 / (2.0 * 4.0 * 1.0e9);
        for w in times.windows(2) {
            assert!((w[1] - w[0] - spacing).abs() < 1e-15);
        }
        assert!(waves.iter().all(EdgeWaveform::is_well_formed));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let st = PhaseState::new(2, 0.0).unwrap();
        let c = TuningCurve::linear(1.0e9, 0.0, [-1.0, 1.0]);
        let drive = Drive::Piecewise(vec![(0.0, 0.0)]);
        assert!(matches!(
            advance_phase(&st, &c, &drive, 0.0, 1e-9, 1e-9, InnerGrid::default()),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn levels_follow_scaled_phase() {
        // u = 5 with n_phi = 4: phases 0..3 see floor((5+i)/4) = 1, 1, 1, 2
        let st = PhaseState::new(4, 5.0 / 8.0).unwrap();
        assert_eq!(st.levels(), vec![1, 1, 1, 0]);
    }

    #[test]
    fn fit_two_point_line() {
        let fit = fit_curve_from_table(&[(0.0, 1.0e9), (1.0, 2.0e9)], 1).unwrap();
        assert!(fit.residual_rms < 1e-6);
        assert!((fit.curve.tuning_frequency(0.25) - 1.25e9).abs() < 1e-3);
    }

    #[test]
    fn fit_quadratic_round_trip() {
        let truth = TuningCurve {
            nl_poly: vec![0.0, 0.0, 0.05],
            ..TuningCurve::table1_stage2()
        };
        let pts: Vec<(f64, f64)> = (0..=32)
            .map(|e| (e as f64, truth.tuning_frequency(e as f64)))
            .collect();
        let fit = fit_curve_from_table(&pts, 2).unwrap();
        assert!((fit.curve.f0 / truth.f0 - 1.0).abs() < 1e-9);
        assert!((fit.curve.gain_k / truth.gain_k - 1.0).abs() < 1e-9);
        assert!((fit.curve.nl_poly[2] - 0.05).abs() < 1e-9);
    }

    #[test]
    fn edge_waveform_high_time() {
        let w = EdgeWaveform {
            initial_level: 0,
            transitions: vec![(1.0, 1), (3.0, 0), (4.0, 1)],
        };
        assert_eq!(w.high_time(0.0, 5.0), 3.0);
        assert_eq!(w.high_time(2.0, 4.5), 1.5);
        assert_eq!(w.level_at(3.0), 0);
    }
}
