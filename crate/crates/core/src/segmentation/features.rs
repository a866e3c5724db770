use std::ops::Range;

use crate::error::{Error, Result};
use crate::peaks;

pub const SEGMENT_SAMPLES: usize = 256;
pub const FEATURE_DIM: usize = 2 * SEGMENT_SAMPLES + 1;
pub const MIN_SEGMENT_SAMPLES: usize = 16;
pub const MAX_SEGMENT_S: f64 = 10.0;

/// `[ecg(256) | ppg(256) | segment length / 256]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::ShapeMismatch(format!(
                "feature vector has {} values, expected {FEATURE_DIM}",
                values.len()
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn ecg(&self) -> &[f64] {
        &self.0[..SEGMENT_SAMPLES]
    }

    pub fn ppg(&self) -> &[f64] {
        &self.0[SEGMENT_SAMPLES..2 * SEGMENT_SAMPLES]
    }

    pub fn norm_length(&self) -> f64 {
        self.0[FEATURE_DIM - 1]
    }
}

/// Linear interpolation of `x` onto `len` uniformly spaced points spanning
/// its first to last sample.
pub fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    assert!(
        x.len() >= 2 && len >= 2,
        "resampling needs at least two points"
    );
    let scale = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|j| {
            if j == len - 1 {
                return x[x.len() - 1];
            }
            let pos = j as f64 * scale;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if frac == 0.0 {
                x[i]
            } else {
                x[i] + frac * (x[i + 1] - x[i])
            }
        })
        .collect()
}

/// Feature vector over the two-cycle span `[start, end)`.
pub fn build_feature_vector(
    ecg: &[f64],
    ppg: &[f64],
    start: usize,
    end: usize,
    fs: f64,
) -> Result<FeatureVector> {
    if start >= end || end > ecg.len() || end > ppg.len() {
        return Err(Error::SegmentRejected(format!(
            "span {start}..{end} outside signals of length {}",
            ecg.len().min(ppg.len())
        )));
    }
    let len = end - start;
    if len < MIN_SEGMENT_SAMPLES {
        return Err(Error::SegmentRejected(format!(
            "{len} samples is too short"
        )));
    }
    if len as f64 > MAX_SEGMENT_S * fs {
        return Err(Error::SegmentRejected(format!(
            "{len} samples exceeds {MAX_SEGMENT_S} s"
        )));
    }
    let mut values = resample_linear(&ecg[start..end], SEGMENT_SAMPLES);
    values.extend(resample_linear(&ppg[start..end], SEGMENT_SAMPLES));
    values.push(len as f64 / SEGMENT_SAMPLES as f64);
    Ok(FeatureVector(values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPair {
    pub sbp: f64,
    pub dbp: f64,
}

const PLAUSIBLE_MMHG: (f64, f64) = (20.0, 300.0);
const ABP_REFRACTORY_S: f64 = 0.3;
const ABP_RELATIVE_PROMINENCE: f64 = 0.3;

fn beat_extrema(x: &[f64], fs: f64, range: f64) -> Vec<usize> {
    let n = x.len();
    let strong: Vec<usize> = peaks::local_maxima(x)
        .into_iter()
        .filter(|&p| peaks::prominence(x, p, 0, n - 1).0 >= ABP_RELATIVE_PROMINENCE * range)
        .collect();
    peaks::select_by_distance(x, &strong, (ABP_REFRACTORY_S * fs).ceil() as usize)
}

/// SBP/DBP over `span`: the means of the per-beat ABP maxima and minima
/// found inside it.
pub fn extract_targets(abp: &[f64], fs: f64, span: Range<usize>) -> Result<TargetPair> {
    if span.start >= span.end || span.end > abp.len() {
        return Err(Error::TargetRejected(format!(
            "span {span:?} outside ABP of length {}",
            abp.len()
        )));
    }
    let x = &abp[span];
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::TargetRejected("no ABP beats in span".into()));
    }
    let maxima = beat_extrema(x, fs, range);
    let negated: Vec<f64> = x.iter().map(|v| -v).collect();
    let minima = beat_extrema(&negated, fs, range);
    if maxima.is_empty() || minima.is_empty() {
        return Err(Error::TargetRejected("no ABP beats in span".into()));
    }
    let mean = |idx: &[usize]| idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
    let (sbp, dbp) = (mean(&maxima), mean(&minima));
    let plausible = |v: f64| v > PLAUSIBLE_MMHG.0 && v < PLAUSIBLE_MMHG.1;
    if !(plausible(sbp) && plausible(dbp) && dbp < sbp) {
        return Err(Error::TargetRejected(format!(
            "implausible SBP {sbp:.1} / DBP {dbp:.1} mmHg"
        )));
    }
    Ok(TargetPair { sbp, dbp })
}
