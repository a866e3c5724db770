//! Adaptive baseline removal and denoising of ECG/PPG windows.
//!
//! For each window: locate the fundamental (heart-rate) peak of the
//! normalized magnitude spectrum, pick the TQWT quality factor whose level-10
//! subband sits on that peak, drop the lowpass residual (DC and baseline
//! wander), shrink the highpass subbands with a SURE-selected soft
//! threshold, and synthesize.

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::peaks;
use crate::tqwt::{self, FrequencyTable, SubbandSet, TqwtParams};

/// Q used when no fundamental peak is found.
pub const FALLBACK_Q: f64 = 1.08;
pub const MIN_PROMINENCE: f64 = 0.4;
pub const FUNDAMENTAL_BAND_HZ: (f64, f64) = (1.0, 3.5);
/// Frequency range searched for the bases of a candidate peak.
pub const PROMINENCE_WINDOW_HZ: (f64, f64) = (0.5, 5.0);
/// Median absolute deviation to Gaussian sigma.
const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalPeak {
    pub frequency: f64,
    /// Normalized magnitude, in (0, 1].
    pub amplitude: f64,
    pub prominence: f64,
    pub left_end_frequency: f64,
}

/// Magnitude spectrum of the mean-removed signal for bins `0..=n/2`,
/// normalized so the largest non-DC bin is 1. `None` for a signal with no
/// AC content.
pub fn normalized_spectrum(signal: &[f64]) -> Option<Vec<f64>> {
    let n = signal.len();
    if n < 4 {
        return None;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let scale = signal.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut buf: Vec<Complex64> = signal
        .iter()
        .map(|&v| Complex64::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut mag: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    mag[0] = 0.0;
    let max = mag.iter().cloned().fold(0.0, f64::max);
    // rounding residue of a constant signal is ~1e-16 relative
    if max <= 1e-9 * scale.max(f64::MIN_POSITIVE) * n as f64 || max == 0.0 {
        return None;
    }
    mag.iter_mut().for_each(|m| *m /= max);
    Some(mag)
}

/// Finds the fundamental peak: the lowest-frequency spectral peak inside
/// 1.0-3.5 Hz whose prominence exceeds 0.4.
pub fn spectrum_peak(signal: &[f64], fs: f64) -> Result<Option<FundamentalPeak>> {
    if !(fs > 7.0) {
        return Err(Error::InvalidParameter(format!(
            "fs must exceed 7 Hz, got {fs}"
        )));
    }
    let min_len = (4.0 * fs).ceil() as usize;
    if signal.len() < min_len {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            min: min_len,
        });
    }
    let Some(spec) = normalized_spectrum(signal) else {
        return Ok(None);
    };
    let n = signal.len();
    let df = fs / n as f64;
    let last = spec.len() - 1;
    let bin = |hz: f64| ((hz / df).round() as usize).min(last);
    let (win_lo, win_hi) = (bin(PROMINENCE_WINDOW_HZ.0), bin(PROMINENCE_WINDOW_HZ.1));

    for p in peaks::local_maxima(&spec) {
        let f = p as f64 * df;
        if f < FUNDAMENTAL_BAND_HZ.0 {
            continue;
        }
        if f > FUNDAMENTAL_BAND_HZ.1 {
            break;
        }
        let (prom, _, _) = peaks::prominence(&spec, p, win_lo.min(p), win_hi.max(p));
        if prom > MIN_PROMINENCE {
            let left = left_end_bin(&spec, p)
                .map(|k| k as f64 * df)
                .unwrap_or(f / 2.0);
            return Ok(Some(FundamentalPeak {
                frequency: f,
                amplitude: spec[p],
                prominence: prom,
                left_end_frequency: left,
            }));
        }
    }
    Ok(None)
}

/// Nearest local minimum below `peak`: walk down the left flank while the
/// spectrum keeps falling; the walk ends at the first rise.
fn left_end_bin(spec: &[f64], peak: usize) -> Option<usize> {
    const RISE_TOL: f64 = 1e-9;
    let mut best = peak;
    let mut k = peak;
    while k > 1 {
        k -= 1;
        if spec[k] < spec[best] {
            best = k;
        } else if spec[k] > spec[best] + RISE_TOL {
            return (best < peak).then_some(best);
        }
    }
    None
}

/// Chooses Q from the lookup table.
pub fn select_q(peak: Option<&FundamentalPeak>, table: &FrequencyTable) -> Result<f64> {
    if table.rows.is_empty() {
        return Err(Error::InvalidParameter("empty Q lookup table".into()));
    }
    let Some(peak) = peak else {
        return Ok(FALLBACK_Q);
    };
    let argmin = |rows: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut best: Option<(f64, f64)> = None;
        for (q, d) in rows {
            // strict comparison on ascending Q keeps the smaller Q on ties
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((q, d));
            }
        }
        best.map(|(q, _)| q)
    };
    let mut rows = table.rows.clone();
    rows.sort_by(|a, b| a.q.total_cmp(&b.q));
    let q_max = argmin(
        &mut rows
            .iter()
            .map(|r| (r.q, (r.center_hz - peak.frequency).abs())),
    )
    .expect("non-empty table");
    let q = argmin(
        &mut rows
            .iter()
            .filter(|r| r.q <= q_max)
            .map(|r| (r.q, (r.lower3db_hz - peak.left_end_frequency).abs())),
    )
    .expect("q_max row is always eligible");
    Ok(q)
}

/// Noise scale from the finest subband: `median(|w|) / 0.6745`.
pub fn noise_sigma(finest: &[f64]) -> f64 {
    if finest.is_empty() {
        return 0.0;
    }
    let mut abs: Vec<f64> = finest.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    median / MAD_SCALE
}

/// SURE-minimizing threshold for coefficients with unit noise variance.
pub fn sure_threshold(coeffs: &[f64]) -> f64 {
    let n = coeffs.len();
    if n == 0 {
        return 0.0;
    }
    let mut sq: Vec<f64> = coeffs.iter().map(|v| v * v).collect();
    sq.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut cumsum = 0.0;
    let mut best = (f64::INFINITY, 0.0);
    for (i, &s) in sq.iter().enumerate() {
        let k = (i + 1) as f64;
        cumsum += s;
        let risk = (nf - 2.0 * k + cumsum + (nf - k) * s) / nf;
        if risk < best.0 {
            best = (risk, s);
        }
    }
    best.1.sqrt()
}

pub fn soft_threshold(w: f64, t: f64) -> f64 {
    w.signum() * (w.abs() - t).max(0.0)
}

/// Soft-threshold denoising of every highpass subband, with per-subband
/// SURE thresholds and a noise scale estimated from the finest subband.
/// The lowpass residual is left as is.
pub fn rigrsure_soft_denoise(subbands: &SubbandSet) -> Result<SubbandSet> {
    if subbands.highpass.is_empty() || subbands.finest().len() < 8 {
        return Err(Error::InvalidParameter(
            "finest subband needs at least 8 coefficients".into(),
        ));
    }
    let sigma = noise_sigma(subbands.finest());
    let mut out = subbands.clone();
    if !(sigma > 0.0) {
        return Ok(out);
    }
    for band in out.highpass.iter_mut() {
        if band.iter().all(|&v| v == 0.0) {
            continue;
        }
        let normalized: Vec<f64> = band.iter().map(|v| v / sigma).collect();
        let t = sure_threshold(&normalized) * sigma;
        band.iter_mut().for_each(|w| *w = soft_threshold(*w, t));
    }
    Ok(out)
}

/// Output of [`preprocess_signal`] together with the choices made on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub signal: Vec<f64>,
    pub q: f64,
    pub peak: Option<FundamentalPeak>,
}

/// Reconstructs `signal` without its TQWT lowpass residual.
pub fn remove_baseline(signal: &[f64], params: &TqwtParams) -> Result<Vec<f64>> {
    let mut bands = tqwt::decompose(signal, params)?;
    bands.lowpass.fill(0.0);
    tqwt::reconstruct(&bands, params)
}

/// Full window chain: spectral peak, Q selection, baseline removal,
/// SURE soft denoising and synthesis.
pub fn preprocess_signal(signal: &[f64], fs: f64, table: &FrequencyTable) -> Result<Preprocessed> {
    let peak = spectrum_peak(signal, fs)?;
    let q = select_q(peak.as_ref(), table)?;
    let params = TqwtParams::new(q, table.redundancy, table.level)?;

    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let centered: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    let mut bands = tqwt::decompose(&centered, &params)?;
    bands.lowpass.fill(0.0);
    let bands = rigrsure_soft_denoise(&bands)?;
    let mut out = tqwt::reconstruct(&bands, &params)?;

    // zero extension leaks a little low-frequency content back in
    let out_mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= out_mean);
    Ok(Preprocessed {
        signal: out,
        q,
        peak,
    })
}

/// CSV dump of the normalized spectrum and the choices made for a window.
pub fn debug_dump(signal: &[f64], fs: f64, result: &Preprocessed) -> String {
    let mut out = String::new();
    match result.peak {
        Some(p) => {
            let _ = writeln!(
                out,
                "# q={},peak_hz={},left_end_hz={}",
                result.q, p.frequency, p.left_end_frequency
            );
        }
        None => {
            let _ = writeln!(out, "# q={},peak_hz=,left_end_hz=", result.q);
        }
    }
    out.push_str("frequency,normalized_magnitude\n");
    if let Some(spec) = normalized_spectrum(signal) {
        let df = fs / signal.len() as f64;
        for (k, m) in spec.iter().enumerate() {
            let _ = writeln!(out, "{},{}", k as f64 * df, m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tqwt::build_q_lookup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    const FS: f64 = 125.0;

    fn tone(f: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * f * i as f64 / FS).sin())
            .collect()
    }

    fn table() -> FrequencyTable {
        build_q_lookup(FS, 10, 1.0, 1.4, 0.01).unwrap()
    }

    #[test]
    fn pure_tone_peak() {
        let x = tone(1.5, 1.0, 2000);
        let p = spectrum_peak(&x, FS).unwrap().unwrap();
        assert!((p.frequency - 1.5).abs() <= FS / 2000.0);
        assert!((p.prominence - 1.0).abs() < 1e-9);
        assert!(p.left_end_frequency > 0.0 && p.left_end_frequency < p.frequency);
    }

    #[test]
    fn dc_has_no_peak() {
        assert_eq!(spectrum_peak(&vec![4.2; 2000], FS).unwrap(), None);
    }

    #[test]
    fn short_window_is_rejected() {
        assert!(spectrum_peak(&vec![0.0; 100], FS).is_err());
    }

    #[test]
    fn two_tones_pick_the_first() {
        // 20 s window puts both tones on exact bins, so the flank below the
        // first peak has no local minimum
        let n = 2500;
        let x: Vec<f64> = tone(1.2, 1.0, n)
            .iter()
            .zip(tone(2.4, 0.5, n))
            .map(|(a, b)| a + b)
            .collect();
        let p = spectrum_peak(&x, FS).unwrap().unwrap();
        assert!((p.frequency - 1.2).abs() < 1e-9);
        assert!((p.left_end_frequency - 0.6).abs() < 1e-9);
    }

    #[test]
    fn first_qualifying_peak_wins_over_larger() {
        let n = 2500;
        let x: Vec<f64> = tone(1.2, 0.6, n)
            .iter()
            .zip(tone(2.4, 1.0, n))
            .map(|(a, b)| a + b)
            .collect();
        let p = spectrum_peak(&x, FS).unwrap().unwrap();
        assert!((p.frequency - 1.2).abs() < 1e-9);
        assert!((p.amplitude - 0.6).abs() < 1e-9);
    }

    #[test]
    fn q_selection_rules() {
        let t = table();
        assert_eq!(select_q(None, &t).unwrap(), FALLBACK_Q);
        let peak = |f: f64, l: f64| FundamentalPeak {
            frequency: f,
            amplitude: 1.0,
            prominence: 1.0,
            left_end_frequency: l,
        };
        let q = select_q(Some(&peak(0.8129, 0.4309)), &t).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        let q = select_q(Some(&peak(1.9491, 1.3397)), &t).unwrap();
        assert!((q - 1.4).abs() < 1e-12);
        let empty = FrequencyTable { rows: vec![], ..t };
        assert!(select_q(None, &empty).is_err());
    }

    #[test]
    fn sure_threshold_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        // brute force: evaluate the SURE risk of every candidate threshold
        let n = x.len() as f64;
        let risk = |t: f64| {
            let mut r = n;
            for &w in &x {
                if w.abs() <= t {
                    r += w * w - 2.0;
                } else {
                    r += t * t;
                }
            }
            r / n
        };
        let best = x
            .iter()
            .map(|w| w.abs())
            .min_by(|a, b| risk(*a).total_cmp(&risk(*b)))
            .unwrap();
        assert!((sure_threshold(&x) - best).abs() < 1e-12);
    }

    fn bands_from(highpass: Vec<Vec<f64>>) -> SubbandSet {
        SubbandSet {
            highpass,
            lowpass: vec![7.0; 8],
            signal_len: 0,
            padded_len: 0,
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let s = bands_from(vec![vec![0.0; 16], vec![0.0; 8]]);
        let d = rigrsure_soft_denoise(&s).unwrap();
        assert_eq!(d, s);
    }

    #[test]
    fn large_coefficient_shrinks_by_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut band: Vec<f64> = (0..256).map(|_| normal.sample(&mut rng)).collect();
        band[100] = 50.0;
        let s = bands_from(vec![band.clone()]);
        let d = rigrsure_soft_denoise(&s).unwrap();
        let sigma = noise_sigma(&band);
        let normalized: Vec<f64> = band.iter().map(|v| v / sigma).collect();
        let t = sure_threshold(&normalized) * sigma;
        assert!(t > 0.0);
        assert!((d.highpass[0][100] - (50.0 - t)).abs() < 1e-12);
        assert_eq!(d.lowpass, s.lowpass);
    }

    #[test]
    fn preprocess_constant_is_zero() {
        let out = preprocess_signal(&vec![3.3; 2000], FS, &table()).unwrap();
        assert_eq!(out.q, FALLBACK_Q);
        assert!(out.signal.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn preprocess_keeps_length_and_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.2).unwrap();
        let x: Vec<f64> = tone(1.3, 1.0, 5000)
            .iter()
            .enumerate()
            .map(|(i, v)| v + 4.0 + 0.001 * i as f64 + normal.sample(&mut rng))
            .collect();
        let out = preprocess_signal(&x, FS, &table()).unwrap();
        assert_eq!(out.signal.len(), x.len());
        let mean = out.signal.iter().sum::<f64>() / x.len() as f64;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-2 * rms);
        assert!((1.0..=1.4).contains(&out.q));
    }

    #[test]
    fn debug_dump_has_header_and_rows() {
        let x = tone(1.5, 1.0, 2000);
        let out = preprocess_signal(&x, FS, &table()).unwrap();
        let dump = debug_dump(&x, FS, &out);
        assert!(dump.starts_with("# q="));
        assert_eq!(dump.lines().count(), 2 + 1001);
    }
}
