//! Beat detection on preprocessed ECG and PPG.
//!
//! Candidates are local maxima of a detection signal (|ECG - median| for the
//! R wave, the PPG itself for systolic apexes). A candidate survives if its
//! prominence reaches a fraction of the typical beat prominence, taken as
//! the median over 2 s blocks of the largest prominence in each block. The
//! survivors are thinned greedily, tallest first, to the refractory spacing.

use crate::error::{Error, Result};
use crate::peaks;

/// 250 bpm ceiling.
pub const ECG_REFRACTORY_S: f64 = 0.24;
pub const PPG_REFRACTORY_S: f64 = 0.3;
pub const MIN_PEAKS: usize = 3;

const ECG_RELATIVE_PROMINENCE: f64 = 0.4;
const PPG_RELATIVE_PROMINENCE: f64 = 0.5;
const BLOCK_S: f64 = 2.0;
/// Half-width of the window searched for a candidate's bases.
const BASE_SEARCH_S: f64 = 2.0;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn detect(signal: &[f64], fs: f64, refractory_s: f64, relative: f64) -> Result<Vec<usize>> {
    if !(fs > 0.0) {
        return Err(Error::InvalidParameter(format!("fs must be > 0, got {fs}")));
    }
    let n = signal.len();
    let reach = (BASE_SEARCH_S * fs).round() as usize;
    let candidates: Vec<(usize, f64)> = peaks::local_maxima(signal)
        .into_iter()
        .map(|p| {
            let lo = p.saturating_sub(reach);
            let hi = (p + reach).min(n - 1);
            (p, peaks::prominence(signal, p, lo, hi).0)
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::TooFewPeaks {
            found: 0,
            needed: MIN_PEAKS,
        });
    }

    let block = ((BLOCK_S * fs).round() as usize).max(1);
    let mut block_max: Vec<f64> = vec![0.0; n.div_ceil(block)];
    for &(p, prom) in &candidates {
        let b = &mut block_max[p / block];
        *b = b.max(prom);
    }
    let mut populated: Vec<f64> = block_max.into_iter().filter(|&m| m > 0.0).collect();
    let reference = median(&mut populated);
    if !(reference > 0.0) {
        return Err(Error::TooFewPeaks {
            found: 0,
            needed: MIN_PEAKS,
        });
    }

    let strong: Vec<usize> = candidates
        .iter()
        .filter(|&&(_, prom)| prom >= relative * reference)
        .map(|&(p, _)| p)
        .collect();
    let min_distance = (refractory_s * fs).ceil() as usize;
    let found = peaks::select_by_distance(signal, &strong, min_distance);
    if found.len() < MIN_PEAKS {
        return Err(Error::TooFewPeaks {
            found: found.len(),
            needed: MIN_PEAKS,
        });
    }
    Ok(found)
}

/// R-peak indices, insensitive to QRS polarity.
pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<Vec<usize>> {
    let mut sorted = ecg.to_vec();
    let center = median(&mut sorted);
    let envelope: Vec<f64> = ecg.iter().map(|v| (v - center).abs()).collect();
    detect(&envelope, fs, ECG_REFRACTORY_S, ECG_RELATIVE_PROMINENCE)
}

/// Systolic apex indices of a PPG.
pub fn detect_ppg_peaks(ppg: &[f64], fs: f64) -> Result<Vec<usize>> {
    detect(ppg, fs, PPG_REFRACTORY_S, PPG_RELATIVE_PROMINENCE)
}
