//! Frequency-dependent nonlinearity estimation and LUT-based correction.
//!
//! The estimated nonlinearity of a clean output sequence `D` is
//!
//! ```text
//! NL(D)[n] = sum_k c_k * ( A(D[n]) + B(D[n]) - B(D[n-1]) )^k
//! A(x) = sum_{i=0..Ni} a_i x^i,   B(x) = sum_{j=1..Nj} b_j x^j
//! ```
//!
//! evaluated in a normalized domain `x = (D - offset) / scale` where the
//! stream's full scale lands on `FULL_SCALE_CODE`. The correction runs on a
//! partially decimated signal so that out-of-band shaped noise does not
//! intermodulate into the band.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq, polyval};
use crate::signal::{
    decompose, metrics, sine_fit, spectrum, Decomposition, Metrics, SampleStream, SineFit, Spectrum, Window,
};
use crate::{Error, Result};

pub const LUT_SIZE: usize = 512;
pub const WORD_BITS: u32 = 14;
pub const FRAC_BITS: u32 = WORD_BITS - 1;
const INDEX_SHIFT: u32 = WORD_BITS - 9;
const ONE: i64 = 1 << FRAC_BITS;
pub const CODE_MIN: i64 = -ONE;
pub const CODE_MAX: i64 = ONE - 1;
/// Normalized position of the stream's full scale.
pub const FULL_SCALE_CODE: f64 = 0.999;

pub const FIT_TOL: f64 = 1e-9;
pub const FIT_MAX_ITER: usize = 50;
pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlOrders {
    pub ni: usize,
    pub nj: usize,
    pub nk: usize,
}

impl NlOrders {
    pub const DEFAULT: NlOrders = NlOrders { ni: 5, nj: 5, nk: 2 };

    pub fn static_only(self) -> Self {
        Self { nj: 0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ni == 0 || self.nk == 0 {
            return Err(Error::Validation(format!(
                "orders need ni >= 1 and nk >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    fn n_inner(&self) -> usize {
        self.ni + 1 + self.nj
    }
}

impl Default for NlOrders {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Fitted nonlinearity in the normalized domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlModel {
    pub orders: NlOrders,
    #[serde(with = "dec_vec")]
    pub a: Vec<f64>,
    #[serde(with = "dec_vec")]
    pub b: Vec<f64>,
    #[serde(with = "dec_vec")]
    pub c: Vec<f64>,
    #[serde(with = "dec")]
    pub offset: f64,
    #[serde(with = "dec")]
    pub scale: f64,
}

impl NlModel {
    pub fn zero(orders: NlOrders, offset: f64, scale: f64) -> Self {
        Self {
            orders,
            a: vec![0.0; orders.ni + 1],
            b: vec![0.0; orders.nj],
            c: vec![0.0; orders.nk],
            offset,
            scale,
        }
    }

    /// Normalization that maps `full_scale` around `offset` to `FULL_SCALE_CODE`.
    pub fn normalization(full_scale: f64, offset: f64) -> (f64, f64) {
        (offset, full_scale / FULL_SCALE_CODE)
    }

    pub fn validate(&self) -> Result<()> {
        self.orders.validate()?;
        if self.a.len() != self.orders.ni + 1
            || self.b.len() != self.orders.nj
            || self.c.len() != self.orders.nk
        {
            return Err(Error::Validation("coefficient counts do not match orders".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.offset.is_finite() {
            return Err(Error::Validation("normalization must be finite with scale > 0".into()));
        }
        if self.a.iter().chain(&self.b).chain(&self.c).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, d: f64) -> f64 {
        (d - self.offset) / self.scale
    }

    /// Static polynomial `A(x)`.
    pub fn poly_a(&self, x: f64) -> f64 {
        polyval(&self.a, x)
    }

    /// Derivative polynomial `B(x)` (no constant term).
    pub fn poly_b(&self, x: f64) -> f64 {
        x * polyval(&self.b, x)
    }

    fn outer(&self, p: f64) -> f64 {
        // sum_k c_k p^k
        p * polyval(&self.c, p)
    }

    /// Normalized nonlinearity for normalized samples.
    pub fn eval_normalized(&self, x: &[f64]) -> Vec<f64> {
        let mut prev_b = x.first().map(|&v| self.poly_b(v)).unwrap_or(0.0);
        x.iter()
            .map(|&v| {
                let bv = self.poly_b(v);
                let p = self.poly_a(v) + bv - prev_b;
                prev_b = bv;
                self.outer(p)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Document {
            schema: SCHEMA,
            kind: "nl_model".into(),
            body: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Document<NlModel> = serde_json::from_str(s)?;
        doc.check("nl_model")?;
        doc.body.validate()?;
        Ok(doc.body)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document<T> {
    schema: u32,
    kind: String,
    body: T,
}

impl<T> Document<T> {
    fn check(&self, kind: &str) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Parse(format!("unsupported schema {}", self.schema)));
        }
        if self.kind != kind {
            return Err(Error::Parse(format!("expected {kind}, found {}", self.kind)));
        }
        Ok(())
    }
}

/// Shortest round-trip decimal strings for coefficients.
mod dec {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

mod dec_vec {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

/// Summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// RMS of `DIST - NL(D_cl)` in code units.
    pub residual_rms: f64,
    pub dist_rms: f64,
}

fn basis(x: &[f64], orders: NlOrders) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(orders.n_inner());
    for i in 0..=orders.ni {
        cols.push(x.iter().map(|v| v.powi(i as i32)).collect::<Vec<_>>());
    }
    for j in 1..=orders.nj {
        let pw: Vec<f64> = x.iter().map(|v| v.powi(j as i32)).collect();
        let mut d = vec![0.0; x.len()];
        for n in 1..x.len() {
            d[n] = pw[n] - pw[n - 1];
        }
        cols.push(d);
    }
    cols
}

fn combine(cols: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    let n = cols[0].len();
    let mut out = vec![0.0; n];
    for (c, t) in cols.iter().zip(theta) {
        for (o, v) in out.iter_mut().zip(c) {
            *o += t * v;
        }
    }
    out
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Least-squares fit of the nonlinearity to the extracted distortion.
///
/// The linear problem with `c = [1, 0, ..]` seeds a damped Gauss-Newton
/// refinement of `(a, b, c_2..c_Nk)`. `c_1` stays at one since a common
/// scale of the inner polynomial and `c` is otherwise free.
pub fn fit_nl(d_cl: &SampleStream, dist: &SampleStream, orders: NlOrders) -> Result<(NlModel, FitReport)> {
    orders.validate()?;
    if d_cl.len() != dist.len() {
        return Err(Error::LengthMismatch(d_cl.len(), dist.len()));
    }
    let n = d_cl.len();
    let n_par = orders.n_inner() + orders.nk - 1;
    if n < 2 * n_par {
        return Err(Error::InsufficientSamples { need: 2 * n_par, have: n });
    }
    let (offset, scale) = NlModel::normalization(d_cl.full_scale, d_cl.mean());
    let x: Vec<f64> = d_cl.samples.iter().map(|v| (v - offset) / scale).collect();
    let y: Vec<f64> = dist.samples.iter().map(|v| v / scale).collect();
    let dist_rms = dist.mean_square().sqrt();
    if y.iter().all(|v| *v == 0.0) {
        let model = NlModel::zero(orders, offset, scale);
        return Ok((model, FitReport { iterations: 0, residual_rms: 0.0, dist_rms }));
    }
    let cols = basis(&x, orders);
    let mut theta = lstsq(&cols, &y)?;
    let mut c = vec![0.0; orders.nk];
    c[0] = 1.0;
    let residual = |theta: &[f64], c: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let p = combine(&cols, theta);
        let r = y.iter().zip(&p).map(|(yv, &pv)| yv - pv * polyval(c, pv)).collect();
        (p, r)
    };
    let (mut p, mut r) = residual(&theta, &c);
    let mut ss = sum_sq(&r);
    let floor = 1e-28 * sum_sq(&y);
    let mut iterations = 0;
    while orders.nk > 1 && ss > floor {
        if iterations >= FIT_MAX_ITER {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let slope: Vec<f64> = p
            .iter()
            .map(|&v| (1..=orders.nk).map(|k| k as f64 * c[k - 1] * v.powi(k as i32 - 1)).sum())
            .collect();
        let mut jac: Vec<Vec<f64>> = cols
            .iter()
            .map(|col| col.iter().zip(&slope).map(|(a, s)| a * s).collect())
            .collect();
        for k in 2..=orders.nk {
            jac.push(p.iter().map(|v| v.powi(k as i32)).collect());
        }
        let step = lstsq(&jac, &r)?;
        let (dt, dc) = step.split_at(theta.len());
        let mut lambda = 1.0;
        let mut improved = None;
        for _ in 0..30 {
            let t: Vec<f64> = theta.iter().zip(dt).map(|(a, d)| a + lambda * d).collect();
            let mut cc = c.clone();
            for (ck, d) in cc[1..].iter_mut().zip(dc) {
                *ck += lambda * d;
            }
            let (pt, rt) = residual(&t, &cc);
            let s = sum_sq(&rt);
            if s <= ss {
                improved = Some((t, cc, pt, rt, s));
                break;
            }
            lambda *= 0.5;
        }
        let Some((t, cc, pt, rt, s)) = improved else { break };
        let prev = ss;
        theta = t;
        c = cc;
        p = pt;
        r = rt;
        ss = s;
        if prev - ss <= FIT_TOL * prev {
            break;
        }
    }
    let ni = orders.ni + 1;
    let model = NlModel {
        orders,
        a: theta[..ni].to_vec(),
        b: theta[ni..].to_vec(),
        c,
        offset,
        scale,
    };
    let residual_rms = (ss / n as f64).sqrt() * scale;
    Ok((model, FitReport { iterations, residual_rms, dist_rms }))
}

/// Estimated nonlinearity of a stream in its own code units.
pub fn eval_nl(model: &NlModel, d_cl: &SampleStream) -> Result<SampleStream> {
    if d_cl.len() < 2 {
        return Err(Error::InsufficientSamples { need: 2, have: d_cl.len() });
    }
    let x: Vec<f64> = d_cl.samples.iter().map(|&v| model.normalize(v)).collect();
    let nl = model.eval_normalized(&x).into_iter().map(|v| v * model.scale).collect();
    d_cl.derive(nl, format!("{}.nl", d_cl.label))
}

/// Float-path correction `D - NL(D)` without decimation.
pub fn apply_float(model: &NlModel, d: &SampleStream) -> Result<SampleStream> {
    let nl = eval_nl(model, d)?;
    let out = d.samples.iter().zip(&nl.samples).map(|(a, b)| a - b).collect();
    d.derive(out, format!("{}.corr", d.label))
}

fn round_half_even(v: f64) -> i64 {
    v.round_ties_even() as i64
}

fn div_round_half_even(num: i64, den: i64) -> i64 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Clamps to the 14-bit range, counting saturations.
fn saturate(v: i64, counter: &mut u64) -> i64 {
    if v > CODE_MAX {
        *counter += 1;
        CODE_MAX
    } else if v < CODE_MIN {
        *counter += 1;
        CODE_MIN
    } else {
        v
    }
}

/// Bit-accurate realization of an [`NlModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionLUT {
    pub lut_a: Vec<i16>,
    pub lut_b: Vec<i16>,
    #[serde(with = "dec_vec")]
    pub c: Vec<f64>,
    #[serde(with = "dec")]
    pub offset: f64,
    #[serde(with = "dec")]
    pub scale: f64,
}

/// Saturation and clamp counts from one correction pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LutDiagnostics {
    /// Input codes clamped to the LUT domain.
    pub clamped_inputs: u64,
    /// Intermediate or output values saturated to 14 bits.
    pub saturations: u64,
}

/// Normalized value of LUT entry `m`.
pub fn lut_node(m: usize) -> f64 {
    ((m as i64) << INDEX_SHIFT) as f64 / ONE as f64 - 1.0
}

pub fn build_lut(model: &NlModel) -> Result<CorrectionLUT> {
    model.validate()?;
    let quant = |v: f64, what: &str, m: usize| -> Result<i16> {
        let q = round_half_even(v * ONE as f64);
        if !(CODE_MIN..=CODE_MAX).contains(&q) {
            return Err(Error::FixedPointOverflow(format!(
                "{what}[{m}] = {v} outside 14-bit range"
            )));
        }
        Ok(q as i16)
    };
    let mut lut_a = Vec::with_capacity(LUT_SIZE);
    let mut lut_b = Vec::with_capacity(LUT_SIZE);
    for m in 0..LUT_SIZE {
        let x = lut_node(m);
        lut_a.push(quant(model.poly_a(x), "lut_a", m)?);
        lut_b.push(quant(model.poly_b(x), "lut_b", m)?);
    }
    Ok(CorrectionLUT {
        lut_a,
        lut_b,
        c: model.c.clone(),
        offset: model.offset,
        scale: model.scale,
    })
}

impl CorrectionLUT {
    pub fn zero(offset: f64, scale: f64) -> Self {
        Self {
            lut_a: vec![0; LUT_SIZE],
            lut_b: vec![0; LUT_SIZE],
            c: vec![1.0],
            offset,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lut_a.len() != LUT_SIZE || self.lut_b.len() != LUT_SIZE {
            return Err(Error::Validation(format!("LUTs must have {LUT_SIZE} entries")));
        }
        let in_range = |v: &i16| (CODE_MIN..=CODE_MAX).contains(&(*v as i64));
        if !self.lut_a.iter().chain(&self.lut_b).all(in_range) {
            return Err(Error::Validation("LUT entry outside 14-bit range".into()));
        }
        if self.c.is_empty() || self.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("invalid outer coefficients".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.offset.is_finite() {
            return Err(Error::Validation("normalization must be finite with scale > 0".into()));
        }
        Ok(())
    }

    /// Linear interpolation between the two entries bracketing code `x`.
    ///
    /// The top 9 bits of `x + 2^13` select the entry, the low 5 bits
    /// interpolate. The last entry extrapolates along the final segment.
    pub fn interp(table: &[i16], x: i64) -> i64 {
        let u = x - CODE_MIN;
        let m = ((u >> INDEX_SHIFT) as usize).min(LUT_SIZE - 2);
        let frac = u - ((m as i64) << INDEX_SHIFT);
        let y0 = table[m] as i64;
        let y1 = table[m + 1] as i64;
        y0 + div_round_half_even((y1 - y0) * frac, 1 << INDEX_SHIFT)
    }

    /// Quantizes a code-unit sample into the 14-bit normalized domain.
    pub fn to_code(&self, d: f64, diag: &mut LutDiagnostics) -> i64 {
        let q = round_half_even((d - self.offset) / self.scale * ONE as f64);
        saturate(q, &mut diag.clamped_inputs)
    }

    pub fn from_code(&self, q: i64) -> f64 {
        q as f64 / ONE as f64 * self.scale + self.offset
    }

    /// Fixed-point `X - NL(X)` over a sequence of 14-bit codes.
    pub fn correct_codes(&self, x: &[i64], diag: &mut LutDiagnostics) -> Vec<i64> {
        let mut prev_b = x.first().map(|&v| Self::interp(&self.lut_b, v)).unwrap_or(0);
        x.iter()
            .map(|&v| {
                let a = Self::interp(&self.lut_a, v);
                let bv = Self::interp(&self.lut_b, v);
                let p = saturate(a + bv - prev_b, &mut diag.saturations);
                prev_b = bv;
                let mut acc = 0.0;
                let mut pk = p;
                for (k, ck) in self.c.iter().enumerate() {
                    if k > 0 {
                        pk = saturate(div_round_half_even(pk * p, ONE), &mut diag.saturations);
                    }
                    acc += ck * pk as f64;
                }
                let nl = saturate(round_half_even(acc), &mut diag.saturations);
                saturate(v - nl, &mut diag.saturations)
            })
            .collect()
    }

    /// Bit-accurate correction of a stream at its own rate.
    pub fn apply(&self, d: &SampleStream) -> Result<(SampleStream, LutDiagnostics)> {
        self.validate()?;
        let mut diag = LutDiagnostics::default();
        let codes: Vec<i64> = d.samples.iter().map(|&v| self.to_code(v, &mut diag)).collect();
        let out = self
            .correct_codes(&codes, &mut diag)
            .into_iter()
            .map(|q| self.from_code(q))
            .collect();
        Ok((d.derive(out, format!("{}.corr", d.label))?, diag))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Document {
            schema: SCHEMA,
            kind: "correction_lut".into(),
            body: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Document<CorrectionLUT> = serde_json::from_str(s)?;
        doc.check("correction_lut")?;
        doc.body.validate()?;
        Ok(doc.body)
    }

    /// One 14-bit two's-complement word per line.
    pub fn hex_table(table: &[i16]) -> String {
        let mask = (1u16 << WORD_BITS) - 1;
        let mut s = String::with_capacity(table.len() * 5);
        for &v in table {
            let _ = writeln!(s, "{:04x}", (v as u16) & mask);
        }
        s
    }

    pub fn parse_hex_table(s: &str) -> Result<Vec<i16>> {
        s.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let w = u16::from_str_radix(l.trim(), 16)
                    .map_err(|e| Error::Parse(format!("hex word {l:?}: {e}")))?;
                if w >> WORD_BITS != 0 {
                    return Err(Error::Parse(format!("hex word {l:?} wider than 14 bits")));
                }
                // sign-extend from bit 13
                Ok(((w << (16 - WORD_BITS)) as i16) >> (16 - WORD_BITS))
            })
            .collect()
    }

    /// Writes `<stem>_a.hex` and `<stem>_b.hex` into `dir`.
    pub fn write_hex(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}_a.hex")), Self::hex_table(&self.lut_a))?;
        std::fs::write(dir.join(format!("{stem}_b.hex")), Self::hex_table(&self.lut_b))?;
        Ok(())
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

fn windowed_sinc(len: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let mid = (len - 1) as f64 / 2.0;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..len)
        .map(|k| {
            let t = k as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let r = t / mid.max(1.0);
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let s: f64 = h.iter().sum();
    for v in h.iter_mut() {
        *v /= s;
    }
    h
}

/// Magnitude response of a real FIR at normalized frequency `f` (cycles/sample).
pub fn fir_response(taps: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (k, h) in taps.iter().enumerate() {
        let w = 2.0 * PI * f * k as f64;
        re += h * w.cos();
        im -= h * w.sin();
    }
    re.hypot(im)
}

fn meets(taps: &[f64], pass: f64, stop: f64, atten_db: f64) -> bool {
    let floor = 10f64.powf(-atten_db / 20.0);
    let ripple = 10f64.powf(0.005 / 20.0) - 1.0;
    // 16 points per sidelobe
    let grid = |width: f64| ((16.0 * taps.len() as f64 * width).ceil() as usize).max(400);
    let (gs, gp) = (grid(0.5 - stop), grid(pass));
    let stop_ok = (0..=gs).all(|i| fir_response(taps, stop + (0.5 - stop) * i as f64 / gs as f64) <= floor);
    let pass_ok = (0..=gp).all(|i| (fir_response(taps, pass * i as f64 / gp as f64) - 1.0).abs() <= ripple);
    stop_ok && pass_ok
}

/// Kaiser-window lowpass with passband edge `pass` and stopband edge `stop`.
///
/// Frequencies are in cycles per sample. The length starts from the Kaiser
/// estimate and grows until the response is verified on a dense grid.
pub fn kaiser_lowpass(pass: f64, stop: f64, atten_db: f64) -> Result<Vec<f64>> {
    if !(pass > 0.0 && pass < stop && stop < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < pass < stop < 0.5, got {pass}, {stop}"
        )));
    }
    let beta = kaiser_beta(atten_db);
    let est = ((atten_db - 7.95) / (2.285 * 2.0 * PI * (stop - pass))).ceil() as usize + 1;
    let mut len = est | 1;
    let cutoff = (pass + stop) / 2.0;
    for _ in 0..64 {
        let h = windowed_sinc(len, cutoff, beta);
        if meets(&h, pass, stop, atten_db) {
            return Ok(h);
        }
        len += 2;
    }
    Err(Error::NonConvergence { iterations: 64 })
}

/// Half-band lowpass (cutoff a quarter of the rate) with passband edge `pass`.
///
/// Every second tap apart from the center is exactly zero.
pub fn half_band(pass: f64, atten_db: f64) -> Result<Vec<f64>> {
    if !(pass > 0.0 && pass < 0.25) {
        return Err(Error::InvalidArgument(format!("half-band pass edge {pass} not in (0, 0.25)")));
    }
    let stop = 0.5 - pass;
    let beta = kaiser_beta(atten_db);
    let est = ((atten_db - 7.95) / (2.285 * 2.0 * PI * (stop - pass))).ceil() as usize;
    // lengths 4m + 3 keep nonzero outer taps
    let mut len = (est.max(3) / 4) * 4 + 3;
    for _ in 0..64 {
        let mut h = windowed_sinc(len, 0.25, beta);
        let mid = (len - 1) / 2;
        for (k, v) in h.iter_mut().enumerate() {
            if k != mid && (k as isize - mid as isize) % 2 == 0 {
                *v = 0.0;
            }
        }
        h[mid] = 0.0;
        let side: f64 = h.iter().sum();
        for v in h.iter_mut() {
            *v *= 0.5 / side;
        }
        h[mid] = 0.5;
        if meets(&h, pass, stop, atten_db) {
            return Ok(h);
        }
        len += 4;
    }
    Err(Error::NonConvergence { iterations: 64 })
}

/// Filters with a linear-phase FIR and keeps every `factor`-th sample.
///
/// The group delay is removed by centering the filter on each output
/// sample; samples beyond either end are replicated from the edge.
pub fn decimate(stream: &SampleStream, factor: usize, taps: &[f64]) -> Result<SampleStream> {
    if factor < 2 || !factor.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "decimation factor must be a power of two >= 2, got {factor}"
        )));
    }
    let len = taps.len();
    if len == 0 || len % 2 == 0 {
        return Err(Error::InvalidArgument("filter must have odd length".into()));
    }
    let sym = (0..len / 2).all(|k| (taps[k] - taps[len - 1 - k]).abs() <= 1e-12 * taps[k].abs().max(1e-300));
    if !sym {
        return Err(Error::InvalidArgument("filter must be symmetric".into()));
    }
    let n = stream.len();
    if n < len {
        return Err(Error::InsufficientSamples { need: len, have: n });
    }
    let x = &stream.samples;
    let half = (len / 2) as isize;
    let last = n as isize - 1;
    let out: Vec<f64> = (0..n.div_ceil(factor))
        .map(|j| {
            let c = (j * factor) as isize;
            taps.iter()
                .enumerate()
                .filter(|(_, h)| **h != 0.0)
                .map(|(m, h)| h * x[(c + half - m as isize).clamp(0, last) as usize])
                .sum()
        })
        .collect();
    SampleStream::with_full_scale(out, stream.rate / factor as f64, stream.label.clone(), stream.full_scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirStage {
    pub factor: usize,
    pub taps: Vec<f64>,
}

/// Decimation around the correction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecimationSpec {
    pub pre: Vec<FirStage>,
    pub post: Vec<FirStage>,
}

pub const STOPBAND_DB: f64 = 80.0;
/// Lowest passband edge of the first half-band, so its stopband starts at `0.45 rate`.
pub const FIRST_STAGE_PASS: f64 = 0.05;
/// Post-filter passband as a fraction of the band edge.
pub const POST_PASS_FRACTION: f64 = 0.9;

impl DecimationSpec {
    /// Two half-band stages down to `rate / 4`, then one lowpass stage to
    /// `rate / osr`, preserving the band `(0, rate / (2 osr)]`.
    pub fn standard(rate: f64, osr: usize) -> Result<Self> {
        if osr < 8 || !osr.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "osr must be a power of two >= 8, got {osr}"
            )));
        }
        let band = rate / (2.0 * osr as f64);
        let pre = vec![
            FirStage { factor: 2, taps: half_band((band / rate).max(FIRST_STAGE_PASS), STOPBAND_DB)? },
            FirStage { factor: 2, taps: half_band(2.0 * band / rate, STOPBAND_DB)? },
        ];
        let r = rate / 4.0;
        let post = vec![FirStage {
            factor: osr / 4,
            taps: kaiser_lowpass(POST_PASS_FRACTION * band / r, band / r, STOPBAND_DB)?,
        }];
        Ok(Self { pre, post })
    }

    pub fn pre_factor(&self) -> usize {
        self.pre.iter().map(|s| s.factor).product()
    }

    pub fn post_factor(&self) -> usize {
        self.post.iter().map(|s| s.factor).product()
    }

    pub fn validate(&self) -> Result<()> {
        for s in self.pre.iter().chain(&self.post) {
            if s.factor < 2 || !s.factor.is_power_of_two() || s.taps.len() % 2 == 0 {
                return Err(Error::Validation("invalid decimation stage".into()));
            }
        }
        Ok(())
    }

    fn run(stages: &[FirStage], s: &SampleStream) -> Result<SampleStream> {
        stages.iter().try_fold(s.clone(), |acc, st| decimate(&acc, st.factor, &st.taps))
    }

    pub fn pre_decimate(&self, s: &SampleStream) -> Result<SampleStream> {
        Self::run(&self.pre, s)
    }

    pub fn post_decimate(&self, s: &SampleStream) -> Result<SampleStream> {
        Self::run(&self.post, s)
    }

    fn transient(stages: &[FirStage]) -> usize {
        // edge-affected samples at the output of the stage list
        let mut down = stages.iter().map(|s| s.factor).product::<usize>();
        let mut total = 0;
        for s in stages {
            total += (s.taps.len() / 2).div_ceil(down);
            down /= s.factor;
        }
        total + 1
    }

    /// Output samples at each end of the pre-decimated stream touched by edge replication.
    pub fn pre_transient(&self) -> usize {
        Self::transient(&self.pre)
    }

    /// Output samples at each end of the final stream touched by edge replication.
    pub fn post_transient(&self) -> usize {
        Self::transient(&self.post) + self.pre_transient().div_ceil(self.post_factor())
    }
}

/// Full correction chain: pre-decimation, fixed-point correction, post-decimation.
pub fn correct(d: &SampleStream, lut: &CorrectionLUT, dec: &DecimationSpec) -> Result<(SampleStream, LutDiagnostics)> {
    dec.validate()?;
    let pre = dec.pre_decimate(d)?;
    let (corr, diag) = lut.apply(&pre)?;
    Ok((dec.post_decimate(&corr)?, diag))
}

/// Floating-point reference of [`correct`].
pub fn correct_float(d: &SampleStream, model: &NlModel, dec: &DecimationSpec) -> Result<SampleStream> {
    dec.validate()?;
    let pre = dec.pre_decimate(d)?;
    dec.post_decimate(&apply_float(model, &pre)?)
}

/// Decimation without correction.
pub fn uncorrected(d: &SampleStream, dec: &DecimationSpec) -> Result<SampleStream> {
    dec.validate()?;
    dec.post_decimate(&dec.pre_decimate(d)?)
}

pub const N_HARMONICS: usize = 5;

/// Metrics of a final-rate stream over its whole Nyquist band.
///
/// `edge` samples are skipped at both ends and the largest power-of-two
/// window is taken from the center.
pub fn output_metrics(s: &SampleStream, f_sig: f64, edge: usize) -> Result<Metrics> {
    metrics(&output_spectrum(s, edge)?, f_sig, 1, N_HARMONICS)
}

/// Hann spectrum of the window used by [`output_metrics`].
pub fn output_spectrum(s: &SampleStream, edge: usize) -> Result<Spectrum> {
    let usable = s.len().saturating_sub(2 * edge);
    if usable < 2 {
        return Err(Error::InsufficientSamples { need: 2 * edge + 2, have: s.len() });
    }
    let n = 1usize << usable.ilog2();
    let core = s.slice((s.len() - n) / 2, n)?;
    spectrum(&core, n, 1, Window::Hann)
}

/// Everything produced by one calibration capture.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub model: NlModel,
    pub report: FitReport,
    pub fit: SineFit,
    pub decomposition: Decomposition,
}

/// Fits the nonlinearity on the pre-decimated capture.
///
/// Edge samples affected by the decimation filters are dropped before the
/// sine fit.
pub fn calibrate(capture: &SampleStream, f_guess: f64, orders: NlOrders, dec: &DecimationSpec) -> Result<Calibration> {
    let pre = dec.pre_decimate(capture)?;
    let edge = dec.pre_transient();
    if pre.len() <= 2 * edge {
        return Err(Error::InsufficientSamples { need: 2 * edge + 1, have: pre.len() });
    }
    let core = pre.slice(edge, pre.len() - 2 * edge)?;
    calibrate_at_rate(&core, f_guess, orders)
}

/// Fits the nonlinearity on a capture without any decimation.
pub fn calibrate_at_rate(capture: &SampleStream, f_guess: f64, orders: NlOrders) -> Result<Calibration> {
    let fit = sine_fit(capture, f_guess)?;
    let decomposition = decompose(capture, &fit, N_HARMONICS)?;
    let (model, report) = fit_nl(&decomposition.d_cl, &decomposition.dist, orders)?;
    Ok(Calibration { model, report, fit, decomposition })
}
