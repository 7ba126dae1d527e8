//! Per-phase readout: quantize/sample/differentiate, error-pulse estimation
//! with pulse-width skews and metastability, and error-bit summation.

use serde::{Deserialize, Serialize};

use crate::vco::EdgeWaveform;
use crate::{Error, Result};

/// Sampled levels of every phase at the current and previous clock edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsdState {
    pub sampled_level: Vec<u8>,
    pub prev_sampled: Vec<u8>,
}

impl QsdState {
    pub fn new(initial: Vec<u8>) -> Self {
        Self {
            prev_sampled: initial.clone(),
            sampled_level: initial,
        }
    }
}

/// Logarithmic regeneration delay of the sampling latch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetastabilityModel {
    pub tau: f64,
    pub t_max: f64,
    pub enabled: bool,
}

impl MetastabilityModel {
    /// 2 ps time constant, delay capped at half a period, disabled.
    pub fn default_for(ts: f64) -> Self {
        Self {
            tau: 2e-12,
            t_max: ts / 2.0,
            enabled: false,
        }
    }

    pub fn validate(&self, ts: f64) -> Result<()> {
        if !(self.tau >= 0.0 && self.t_max >= 0.0 && self.t_max < ts) {
            return Err(Error::Validation(format!(
                "metastability needs tau >= 0 and 0 <= t_max < Ts, got tau={} t_max={}",
                self.tau, self.t_max
            )));
        }
        Ok(())
    }

    /// Resolution delay for an input that changed `proximity` seconds before the clock.
    #[inline]
    pub fn delay(&self, ts: f64, proximity: f64) -> f64 {
        if !self.enabled || proximity >= ts {
            return 0.0;
        }
        if proximity <= 0.0 {
            return self.t_max;
        }
        (self.tau * (ts / proximity).ln()).min(self.t_max)
    }
}

/// Samples one clock edge.
///
/// Returns the differentiated bits and, per phase, the extra delay before the
/// new sampled value reaches the error estimator. `edge_proximity[i]` is the
/// time between the latest toggle of phase `i` and the clock, if any.
pub fn qsd_sample(
    state: &QsdState,
    levels: &[u8],
    metastability: &MetastabilityModel,
    edge_proximity: &[Option<f64>],
    ts: f64,
) -> Result<(Vec<u8>, Vec<f64>, QsdState)> {
    let n = state.sampled_level.len();
    if levels.len() != n {
        return Err(Error::LengthMismatch(levels.len(), n));
    }
    if edge_proximity.len() != n {
        return Err(Error::LengthMismatch(edge_proximity.len(), n));
    }
    let bits: Vec<u8> = levels
        .iter()
        .zip(&state.sampled_level)
        .map(|(a, b)| a ^ b)
        .collect();
    let delays = bits
        .iter()
        .zip(edge_proximity)
        .map(|(&b, p)| match (b, p) {
            (1, Some(d)) => metastability.delay(ts, *d),
            _ => 0.0,
        })
        .collect();
    let next = QsdState {
        prev_sampled: state.sampled_level.clone(),
        sampled_level: levels.to_vec(),
    };
    Ok((bits, delays, next))
}

/// Effective rising and falling delays per phase of the error estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseWidthErrors {
    pub tr: Vec<f64>,
    pub tf: Vec<f64>,
}

impl PulseWidthErrors {
    pub fn zero(n_phi: usize) -> Self {
        Self {
            tr: vec![0.0; n_phi],
            tf: vec![0.0; n_phi],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tr.iter().chain(&self.tf).all(|&v| v == 0.0)
    }

    pub fn validate(&self, n_phi: usize, ts: f64) -> Result<()> {
        if self.tr.len() != n_phi || self.tf.len() != n_phi {
            return Err(Error::Validation(format!(
                "pulse-width tables need {n_phi} entries, got {}/{}",
                self.tr.len(),
                self.tf.len()
            )));
        }
        if let Some(v) = self
            .tr
            .iter()
            .chain(&self.tf)
            .find(|&&v| !(v >= 0.0 && v < ts))
        {
            return Err(Error::Validation(format!("pulse-width delay {v} outside [0, Ts)")));
        }
        Ok(())
    }

    /// `tr_i - tf_i` per phase.
    pub fn skew(&self) -> Vec<f64> {
        self.tr.iter().zip(&self.tf).map(|(r, f)| r - f).collect()
    }
}

/// Linear skew gradient: `tr_i = max_skew * i / (n_phi - 1)`, `tf_i = 0`.
pub fn gradient_pw_errors(n_phi: usize, max_skew: f64) -> Result<PulseWidthErrors> {
    if !(max_skew >= 0.0) {
        return Err(Error::InvalidArgument(format!("max_skew must be >= 0, got {max_skew}")));
    }
    if n_phi == 0 {
        return Err(Error::InvalidArgument("n_phi must be >= 1".into()));
    }
    let tr = if n_phi == 1 {
        vec![0.0]
    } else {
        (0..n_phi)
            .map(|i| max_skew * i as f64 / (n_phi - 1) as f64)
            .collect()
    };
    Ok(PulseWidthErrors {
        tr,
        tf: vec![0.0; n_phi],
    })
}

/// Shifts rising edges by `tr` and falling edges by `tf`; pulses that
/// collapse to zero or negative width disappear.
pub fn delay_edges(w: &EdgeWaveform, tr: f64, tf: f64) -> EdgeWaveform {
    let mut out: Vec<(f64, u8)> = Vec::with_capacity(w.transitions.len());
    for &(t, l) in &w.transitions {
        let ts = t + if l == 1 { tr } else { tf };
        match out.last() {
            Some(&(prev, _)) if ts <= prev => {
                out.pop();
            }
            _ => out.push((ts, l)),
        }
    }
    EdgeWaveform {
        initial_level: w.initial_level,
        transitions: out,
    }
}

fn xor_waveforms(a: &EdgeWaveform, b: &EdgeWaveform, invert: bool) -> EdgeWaveform {
    let mut times: Vec<f64> = a
        .transitions
        .iter()
        .chain(&b.transitions)
        .map(|t| t.0)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let inv = u8::from(invert);
    let initial = a.initial_level ^ b.initial_level ^ inv;
    let mut out = EdgeWaveform::new(initial);
    let mut level = initial;
    for t in times {
        let l = a.level_at(t) ^ b.level_at(t) ^ inv;
        if l != level {
            out.transitions.push((t, l));
            level = l;
        }
    }
    out
}

/// Error pulse of phase `i` and its complement.
///
/// `e_i` is high while the phase differs from its sampled-and-held copy.
/// Both outputs get the phase's rising delay on rising edges and falling
/// delay on falling edges.
pub fn estimate_error(
    w_i: &EdgeWaveform,
    w_zoh_i: &EdgeWaveform,
    pw: &PulseWidthErrors,
    i: usize,
) -> Result<(EdgeWaveform, EdgeWaveform)> {
    if i >= pw.tr.len() || i >= pw.tf.len() {
        return Err(Error::InvalidArgument(format!("phase {i} outside pulse-width table")));
    }
    let (tr, tf) = (pw.tr[i], pw.tf[i]);
    let e = delay_edges(&xor_waveforms(w_i, w_zoh_i, false), tr, tf);
    let e_bar = delay_edges(&xor_waveforms(w_i, w_zoh_i, true), tr, tf);
    Ok((e, e_bar))
}

/// Integer-valued piecewise-constant waveform.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepWaveform {
    pub initial: i64,
    pub transitions: Vec<(f64, i64)>,
}

impl StepWaveform {
    pub fn value_at(&self, t: f64) -> i64 {
        match self.transitions.partition_point(|&(tt, _)| tt <= t) {
            0 => self.initial,
            k => self.transitions[k - 1].1,
        }
    }

    /// Integral over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        let mut v = self.value_at(t0);
        let mut last = t0;
        let mut acc = 0.0;
        for &(t, nv) in self.transitions.iter().filter(|(t, _)| *t > t0 && *t < t1) {
            acc += v as f64 * (t - last);
            v = nv;
            last = t;
        }
        acc + v as f64 * (t1 - last)
    }
}

/// `E(t) = sum_i e_i(t)`.
pub fn sum_error_bits(e: &[EdgeWaveform]) -> StepWaveform {
    let initial: i64 = e.iter().map(|w| w.initial_level as i64).sum();
    let mut events: Vec<(f64, i64)> = e
        .iter()
        .flat_map(|w| {
            w.transitions
                .iter()
                .map(|&(t, l)| (t, if l == 1 { 1 } else { -1 }))
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = StepWaveform {
        initial,
        transitions: Vec::new(),
    };
    let mut v = initial;
    for (t, d) in events {
        v += d;
        match out.transitions.last_mut() {
            Some(last) if last.0 == t => last.1 = v,
            _ => out.transitions.push((t, v)),
        }
    }
    out
}

/// Sample-and-hold of `w` at clock edges `k * ts`, `k = 0..=n`.
pub fn zero_order_hold(w: &EdgeWaveform, ts: f64, n: usize) -> EdgeWaveform {
    let mut out = EdgeWaveform::new(w.level_at(0.0));
    let mut level = out.initial_level;
    for k in 1..=n {
        let t = k as f64 * ts;
        let l = w.level_at(t);
        if l != level {
            out.transitions.push((t, l));
            level = l;
        }
    }
    out
}
