//! Tunable-Q wavelet transform.
//!
//! An iterated two-channel filter bank implemented in the frequency domain.
//! Each level splits the current spectrum into a lowpass part scaled by
//! `alpha` and a highpass part scaled by `beta`, with a transition band
//! shaped by the 2-vanishing-moment Daubechies frequency response
//!
//! ```text
//! theta(w) = 0.5 * (1 + cos w) * sqrt(2 - cos w),   0 <= w <= pi
//! ```
//!
//! so that `H0^2 + H1^2 = 1` and synthesis is exact. Inputs are zero-extended
//! to the next power of two and truncated again on synthesis.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const DEFAULT_REDUNDANCY: f64 = 3.0;
pub const DEFAULT_LEVELS: usize = 10;
/// Minimum number of coefficients any subband may have.
pub const MIN_SUBBAND_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TqwtParams {
    pub q: f64,
    pub redundancy: f64,
    pub levels: usize,
}

impl TqwtParams {
    pub fn new(q: f64, redundancy: f64, levels: usize) -> Result<Self> {
        if !(q.is_finite() && q >= 1.0) {
            return Err(Error::InvalidParameter(format!("Q must be >= 1, got {q}")));
        }
        if !(redundancy.is_finite() && redundancy > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "redundancy must be > 1, got {redundancy}"
            )));
        }
        if levels == 0 {
            return Err(Error::InvalidParameter("levels must be >= 1".into()));
        }
        let p = TqwtParams {
            q,
            redundancy,
            levels,
        };
        let (alpha, beta) = (p.alpha(), p.beta());
        if !(beta > 0.0 && beta <= 1.0 && alpha > 0.0 && alpha < 1.0 && alpha + beta > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "degenerate filter bank: alpha={alpha}, beta={beta}"
            )));
        }
        Ok(p)
    }

    /// Parameters with the default redundancy and level count.
    pub fn with_q(q: f64) -> Result<Self> {
        Self::new(q, DEFAULT_REDUNDANCY, DEFAULT_LEVELS)
    }

    pub fn beta(&self) -> f64 {
        2.0 / (self.q + 1.0)
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.beta() / self.redundancy
    }

    /// Lowpass and highpass spectrum lengths produced at `level` (1-based)
    /// for a transform of padded length `n`.
    fn level_lengths(&self, n: usize, level: usize) -> (usize, usize) {
        let (alpha, beta) = (self.alpha(), self.beta());
        let nf = n as f64;
        let n0 = 2 * (alpha.powi(level as i32) * nf / 2.0).round() as usize;
        let n1 = 2 * (beta * alpha.powi(level as i32 - 1) * nf / 2.0).round() as usize;
        (n0, n1)
    }

    /// Checks that every level of a transform of padded length `n` is
    /// well formed.
    fn geometry_ok(&self, n: usize) -> bool {
        let mut cur = n;
        for level in 1..=self.levels {
            let (n0, n1) = self.level_lengths(n, level);
            if n0 < MIN_SUBBAND_LEN || n1 < MIN_SUBBAND_LEN || n1 > cur || n0 > cur {
                return false;
            }
            // transition band width must be non-negative
            if n0 + n1 < cur + 2 {
                return false;
            }
            cur = n0;
        }
        true
    }

    /// Smallest power-of-two length that supports `levels` levels.
    pub fn min_transform_len(&self) -> usize {
        let mut n = MIN_SUBBAND_LEN;
        while !self.geometry_ok(n) {
            n *= 2;
            if n > 1 << 40 {
                break;
            }
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    /// Highpass coefficients, finest level first.
    pub highpass: Vec<Vec<f64>>,
    /// Lowpass residual after the last level.
    pub lowpass: Vec<f64>,
    /// Length of the analyzed signal.
    pub signal_len: usize,
    /// Zero-extended transform length.
    pub padded_len: usize,
}

impl SubbandSet {
    pub fn levels(&self) -> usize {
        self.highpass.len()
    }

    pub fn finest(&self) -> &[f64] {
        &self.highpass[0]
    }
}

/// Transition-band response sampled at `k * pi / (t + 1)` for `k = 1..=t`.
fn transition(t: usize) -> Vec<f64> {
    (1..=t)
        .map(|k| theta(k as f64 * PI / (t as f64 + 1.0)))
        .collect()
}

fn theta(w: f64) -> f64 {
    let c = w.cos();
    0.5 * (1.0 + c) * (2.0 - c).sqrt()
}

/// Two-channel analysis step on a spectrum.
fn analysis(x: &[Complex64], n0: usize, n1: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = x.len();
    let p = (n - n1) / 2;
    let t = (n0 + n1 - n) / 2 - 1;
    let s = (n - n0) / 2;
    let tr = transition(t);
    let zero = Complex64::new(0.0, 0.0);

    let mut v0 = vec![zero; n0];
    v0[0] = x[0];
    for k in 1..=p {
        v0[k] = x[k];
        v0[n0 - k] = x[n - k];
    }
    for k in 1..=t {
        v0[p + k] = x[p + k] * tr[k - 1];
        v0[n0 - p - k] = x[n - p - k] * tr[k - 1];
    }
    v0[n0 / 2] = zero;

    let mut v1 = vec![zero; n1];
    for k in 1..=t {
        let w = tr[t - k];
        v1[k] = x[p + k] * w;
        v1[n1 - k] = x[n - p - k] * w;
    }
    for k in 1..=s {
        v1[t + k] = x[p + t + k];
        v1[n1 - t - k] = x[n - p - t - k];
    }
    v1[n1 / 2] = x[n / 2];
    (v0, v1)
}

/// Two-channel synthesis step, the adjoint of [`analysis`].
fn synthesis(v0: &[Complex64], v1: &[Complex64], n: usize) -> Vec<Complex64> {
    let (n0, n1) = (v0.len(), v1.len());
    let p = (n - n1) / 2;
    let t = (n0 + n1 - n) / 2 - 1;
    let s = (n - n0) / 2;
    let tr = transition(t);

    let mut y = vec![Complex64::new(0.0, 0.0); n];
    y[0] = v0[0];
    for k in 1..=p {
        y[k] = v0[k];
        y[n - k] = v0[n0 - k];
    }
    for k in 1..=t {
        y[p + k] = v0[p + k] * tr[k - 1];
        y[n - p - k] = v0[n0 - p - k] * tr[k - 1];
    }
    for k in 1..=t {
        let w = tr[t - k];
        y[p + k] += v1[k] * w;
        y[n - p - k] += v1[n1 - k] * w;
    }
    for k in 1..=s {
        y[p + t + k] += v1[t + k];
        y[n - p - t - k] += v1[n1 - t - k];
    }
    y[n / 2] += v1[n1 / 2];
    y
}

/// Unitary DFT helper.
struct Dft {
    planner: FftPlanner<f64>,
}

impl Dft {
    fn new() -> Self {
        Dft {
            planner: FftPlanner::new(),
        }
    }

    fn forward(&mut self, x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.planner.plan_fft_forward(n).process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    fn inverse_real(&mut self, spectrum: Vec<Complex64>) -> Vec<f64> {
        let n = spectrum.len();
        let mut buf = spectrum;
        self.planner.plan_fft_inverse(n).process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Decomposes `signal` into `levels` highpass subbands and a lowpass residual.
pub fn decompose(signal: &[f64], params: &TqwtParams) -> Result<SubbandSet> {
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let min = params.min_transform_len();
    let n = signal.len().max(1).next_power_of_two();
    if signal.len() < 2 || !params.geometry_ok(n) {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            min: min / 2 + 1,
        });
    }

    let mut padded = signal.to_vec();
    padded.resize(n, 0.0);

    let mut dft = Dft::new();
    let mut x = dft.forward(&padded);
    let mut highpass = Vec::with_capacity(params.levels);
    for level in 1..=params.levels {
        let (n0, n1) = params.level_lengths(n, level);
        let (lo, hi) = analysis(&x, n0, n1);
        highpass.push(dft.inverse_real(hi));
        x = lo;
    }
    let lowpass = dft.inverse_real(x);
    Ok(SubbandSet {
        highpass,
        lowpass,
        signal_len: signal.len(),
        padded_len: n,
    })
}

/// Inverse transform. Subbands may have been modified in place beforehand.
pub fn reconstruct(subbands: &SubbandSet, params: &TqwtParams) -> Result<Vec<f64>> {
    let n = subbands.padded_len;
    if subbands.highpass.len() != params.levels {
        return Err(Error::GeometryMismatch(format!(
            "{} highpass subbands for {} levels",
            subbands.highpass.len(),
            params.levels
        )));
    }
    if !n.is_power_of_two() || !params.geometry_ok(n) || subbands.signal_len > n {
        return Err(Error::GeometryMismatch(format!(
            "padded length {n} is invalid for these parameters"
        )));
    }
    for (i, band) in subbands.highpass.iter().enumerate() {
        let (_, n1) = params.level_lengths(n, i + 1);
        if band.len() != n1 {
            return Err(Error::GeometryMismatch(format!(
                "level {} has {} coefficients, expected {n1}",
                i + 1,
                band.len()
            )));
        }
    }
    let (n0, _) = params.level_lengths(n, params.levels);
    if subbands.lowpass.len() != n0 {
        return Err(Error::GeometryMismatch(format!(
            "lowpass has {} coefficients, expected {n0}",
            subbands.lowpass.len()
        )));
    }

    let mut dft = Dft::new();
    let mut y = dft.forward(&subbands.lowpass);
    for level in (1..=params.levels).rev() {
        let w = dft.forward(&subbands.highpass[level - 1]);
        let parent = if level == 1 {
            n
        } else {
            params.level_lengths(n, level - 1).0
        };
        y = synthesis(&y, &w, parent);
    }
    let mut out = dft.inverse_real(y);
    out.truncate(subbands.signal_len);
    Ok(out)
}

/// Lowpass filter magnitude at normalized angular frequency `w` (rad/sample).
fn lowpass_response(w: f64, alpha: f64, beta: f64) -> f64 {
    let w = w.abs();
    let lo = (1.0 - beta) * PI;
    let hi = alpha * PI;
    if w <= lo {
        1.0
    } else if w >= hi {
        0.0
    } else {
        theta((w - lo) / (alpha + beta - 1.0))
    }
}

fn highpass_response(w: f64, alpha: f64, beta: f64) -> f64 {
    let w = w.abs();
    let lo = (1.0 - beta) * PI;
    let hi = alpha * PI;
    if w <= lo {
        0.0
    } else if w >= hi {
        1.0
    } else {
        theta((hi - w) / (alpha + beta - 1.0))
    }
}

/// Magnitude response of the cascaded highpass channel at `level`, evaluated
/// at `freq_hz` for sampling rate `fs`.
pub fn level_response(params: &TqwtParams, level: usize, freq_hz: f64, fs: f64) -> f64 {
    let (alpha, beta) = (params.alpha(), params.beta());
    let w = 2.0 * PI * freq_hz / fs;
    let mut gain = 1.0;
    let mut scale = 1.0;
    for _ in 0..level.saturating_sub(1) {
        gain *= lowpass_response(w / scale, alpha, beta);
        if gain == 0.0 {
            return 0.0;
        }
        scale *= alpha;
    }
    gain * highpass_response(w / scale, alpha, beta)
}

/// Magnitude response of the lowpass residual channel after `levels` levels.
pub fn residual_response(params: &TqwtParams, freq_hz: f64, fs: f64) -> f64 {
    let (alpha, beta) = (params.alpha(), params.beta());
    let w = 2.0 * PI * freq_hz / fs;
    let mut gain = 1.0;
    let mut scale = 1.0;
    for _ in 0..params.levels {
        gain *= lowpass_response(w / scale, alpha, beta);
        scale *= alpha;
    }
    gain
}

/// Center frequency and lower 3 dB cutoff (both Hz) of the highpass subband
/// at `level`.
pub fn subband_frequencies(params: &TqwtParams, fs: f64, level: usize) -> Result<(f64, f64)> {
    if level == 0 || level > params.levels {
        return Err(Error::InvalidParameter(format!(
            "level {level} outside 1..={}",
            params.levels
        )));
    }
    if !(fs > 0.0) {
        return Err(Error::InvalidParameter(format!("fs must be > 0, got {fs}")));
    }
    let (alpha, beta) = (params.alpha(), params.beta());
    let center = alpha.powi(level as i32) * (2.0 - beta) / (4.0 * alpha) * fs;

    const GRID: usize = 1 << 17;
    let step = fs / 2.0 / GRID as f64;
    let response: Vec<f64> = (0..=GRID)
        .map(|i| level_response(params, level, i as f64 * step, fs))
        .collect();
    let peak = response.iter().cloned().fold(0.0, f64::max);
    let target = peak * FRAC_1_SQRT_2;
    let idx = response
        .iter()
        .position(|&g| g >= target)
        .expect("response reaches its own maximum");
    let lower = if idx == 0 {
        0.0
    } else {
        // the response is continuous and rising here: refine by bisection
        let (mut a, mut b) = ((idx - 1) as f64 * step, idx as f64 * step);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if level_response(params, level, m, fs) >= target {
                b = m;
            } else {
                a = m;
            }
        }
        b
    };
    Ok((center, lower))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyRow {
    pub q: f64,
    pub center_hz: f64,
    pub lower3db_hz: f64,
}

/// Level-J subband frequencies over a grid of Q values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub rows: Vec<FrequencyRow>,
    pub fs: f64,
    pub level: usize,
    pub redundancy: f64,
}

pub fn build_q_lookup(
    fs: f64,
    level: usize,
    q_min: f64,
    q_max: f64,
    step: f64,
) -> Result<FrequencyTable> {
    build_q_lookup_with_redundancy(fs, level, q_min, q_max, step, DEFAULT_REDUNDANCY)
}

pub fn build_q_lookup_with_redundancy(
    fs: f64,
    level: usize,
    q_min: f64,
    q_max: f64,
    step: f64,
    redundancy: f64,
) -> Result<FrequencyTable> {
    if !(q_min < q_max) || !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bad Q grid {q_min}:{step}:{q_max}"
        )));
    }
    let count = ((q_max - q_min) / step + 1e-9).floor() as usize + 1;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let q = round_to(q_min + i as f64 * step, 1e-9);
        let params = TqwtParams::new(q, redundancy, level)?;
        let (center_hz, lower3db_hz) = subband_frequencies(&params, fs, level)?;
        rows.push(FrequencyRow {
            q,
            center_hz,
            lower3db_hz,
        });
    }
    Ok(FrequencyTable {
        rows,
        fs,
        level,
        redundancy,
    })
}

fn round_to(v: f64, quantum: f64) -> f64 {
    (v / quantum).round() * quantum
}

impl FrequencyTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# fs={},level={},r={}\nq,center_hz,lower3db_hz\n",
            self.fs, self.level, self.redundancy
        );
        for row in &self.rows {
            let _ = writeln!(out, "{},{},{}", row.q, row.center_hz, row.lower3db_hz);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut fs = None;
        let mut level = None;
        let mut redundancy = DEFAULT_REDUNDANCY;
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Csv {
                row: lineno + 1,
                column: 0,
                reason: reason.to_string(),
            };
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split(',') {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad("bad metadata"))?;
                    match k.trim() {
                        "fs" => fs = v.trim().parse().ok(),
                        "level" => level = v.trim().parse().ok(),
                        "r" => redundancy = v.trim().parse().map_err(|_| bad("bad redundancy"))?,
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_header {
                if line != "q,center_hz,lower3db_hz" {
                    return Err(bad("expected header q,center_hz,lower3db_hz"));
                }
                seen_header = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(bad("expected 3 columns"));
            }
            let mut vals = [0.0; 3];
            for (c, cell) in cells.iter().enumerate() {
                vals[c] = cell.trim().parse().map_err(|_| Error::Csv {
                    row: lineno + 1,
                    column: c + 1,
                    reason: format!("not a number: {cell}"),
                })?;
            }
            rows.push(FrequencyRow {
                q: vals[0],
                center_hz: vals[1],
                lower3db_hz: vals[2],
            });
        }
        let fs = fs.ok_or_else(|| Error::BadFile("frequency table lacks fs".into()))?;
        let level = level.ok_or_else(|| Error::BadFile("frequency table lacks level".into()))?;
        if rows.is_empty() {
            return Err(Error::BadFile("frequency table has no rows".into()));
        }
        Ok(FrequencyTable {
            rows,
            fs,
            level,
            redundancy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn impulse_reconstructs() {
        let params = TqwtParams::new(1.0, 3.0, 3).unwrap();
        let mut x = vec![0.0; 64];
        x[10] = 1.0;
        let w = decompose(&x, &params).unwrap();
        assert_eq!(w.levels(), 3);
        let y = reconstruct(&w, &params).unwrap();
        assert!(max_abs_diff(&x, &y) <= 1e-10);
    }

    #[test]
    fn dc_lives_in_residual() {
        let params = TqwtParams::with_q(1.08).unwrap();
        let x = vec![3.0; 4096];
        let w = decompose(&x, &params).unwrap();
        for band in &w.highpass {
            assert!(band.iter().all(|v| v.abs() <= 1e-10));
        }
        assert!(w.lowpass.iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn random_signal_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = TqwtParams::with_q(1.08).unwrap();
        let w = decompose(&x, &params).unwrap();
        assert_eq!(w.padded_len, 8192);
        let y = reconstruct(&w, &params).unwrap();
        assert_eq!(y.len(), 5000);
        assert!(max_abs_diff(&x, &y) <= 1e-8);
    }

    #[test]
    fn removing_residual_equals_subtracting_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..2000)
            .map(|i| (i as f64 * 0.01).sin() * 3.0 + rng.gen_range(-0.5..0.5))
            .collect();
        let params = TqwtParams::with_q(1.2).unwrap();
        let w = decompose(&x, &params).unwrap();

        let mut only_low = w.clone();
        only_low.highpass.iter_mut().for_each(|b| b.fill(0.0));
        let baseline = reconstruct(&only_low, &params).unwrap();

        let mut no_low = w.clone();
        no_low.lowpass.fill(0.0);
        let detrended = reconstruct(&no_low, &params).unwrap();

        for i in 0..x.len() {
            assert!((x[i] - baseline[i] - detrended[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn zeroed_residual_removes_mean() {
        let n = 4096;
        let x: Vec<f64> = (0..n)
            .map(|i| 5.0 + (2.0 * PI * 1.5 * i as f64 / 125.0).sin())
            .collect();
        let params = TqwtParams::with_q(1.08).unwrap();
        let mut w = decompose(&x, &params).unwrap();
        w.lowpass.fill(0.0);
        let y = reconstruct(&w, &params).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() <= 1e-3 * rms, "mean {mean}");
    }

    #[test]
    fn too_short_is_rejected() {
        let params = TqwtParams::with_q(1.0).unwrap();
        let err = decompose(&[1.0; 64], &params).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { .. }));
        assert!(params.min_transform_len() > 64);
    }

    #[test]
    fn non_finite_is_rejected() {
        let params = TqwtParams::new(1.0, 3.0, 2).unwrap();
        let mut x = vec![0.0; 256];
        x[5] = f64::NAN;
        assert!(matches!(decompose(&x, &params), Err(Error::NonFinite(5))));
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let params = TqwtParams::with_q(1.0).unwrap();
        let w = decompose(&vec![1.0; 2000], &params).unwrap();
        let other = TqwtParams::with_q(1.4).unwrap();
        assert!(matches!(
            reconstruct(&w, &other),
            Err(Error::GeometryMismatch(_))
        ));
        let fewer = TqwtParams::new(1.0, 3.0, 9).unwrap();
        assert!(reconstruct(&w, &fewer).is_err());
    }

    #[test]
    fn params_validate() {
        assert!(TqwtParams::new(0.5, 3.0, 10).is_err());
        assert!(TqwtParams::new(1.0, 1.0, 10).is_err());
        assert!(TqwtParams::new(1.0, 3.0, 0).is_err());
        let p = TqwtParams::with_q(1.0).unwrap();
        assert_eq!(p.beta(), 1.0);
        assert!((p.alpha() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn center_frequencies_match_reference_values() {
        for (q, expected) in [(1.0, 0.8129), (1.08, 1.0020), (1.4, 1.9491)] {
            let p = TqwtParams::with_q(q).unwrap();
            let (center, lower) = subband_frequencies(&p, 125.0, 10).unwrap();
            assert!(
                (center - expected).abs() / expected < 0.01,
                "Q={q}: {center}"
            );
            assert!(lower < center);
        }
    }

    #[test]
    fn level_out_of_range() {
        let p = TqwtParams::with_q(1.0).unwrap();
        assert!(subband_frequencies(&p, 125.0, 0).is_err());
        assert!(subband_frequencies(&p, 125.0, 11).is_err());
    }

    #[test]
    fn subband_energy_follows_response() {
        // a tone at the level-10 center frequency lands mostly in level 10
        let p = TqwtParams::with_q(1.08).unwrap();
        let fs = 125.0;
        let (center, _) = subband_frequencies(&p, fs, 10).unwrap();
        let x: Vec<f64> = (0..8192)
            .map(|i| (2.0 * PI * center * i as f64 / fs).sin())
            .collect();
        let w = decompose(&x, &p).unwrap();
        let energy = |b: &[f64]| b.iter().map(|v| v * v).sum::<f64>();
        let total: f64 = w.highpass.iter().map(|b| energy(b)).sum::<f64>() + energy(&w.lowpass);
        let g = level_response(&p, 10, center, fs);
        let frac = energy(&w.highpass[9]) / total;
        assert!((frac - g * g).abs() < 0.05, "{frac} vs {}", g * g);
    }

    #[test]
    fn lookup_csv_roundtrip() {
        let table = build_q_lookup(125.0, 10, 1.0, 1.1, 0.05).unwrap();
        assert_eq!(table.rows.len(), 3);
        let back = FrequencyTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(back, table);
        assert!(FrequencyTable::from_csv("q,center_hz,lower3db_hz\n1,x,2\n").is_err());
    }
}
