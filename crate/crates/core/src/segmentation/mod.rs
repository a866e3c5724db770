//! Non-uniform two-cycle segmentation.
//!
//! PPG systolic peaks anchor the segments: every triple of consecutive peaks
//! `k, k+1, k+2` yields one feature vector over `[p_k, p_{k+2})`, and runs of
//! `M` consecutive vectors (stride one peak) form a sequence.

mod dataset;
mod detect;
mod features;

pub use dataset::{
    assign_splits, read_dataset, split_and_standardize, standardize, write_dataset, DatasetSplit,
    Split, SplitFractions, Standardization, MIN_SEQUENCES_PER_PATIENT,
};
pub use detect::{detect_ppg_peaks, detect_r_peaks, ECG_REFRACTORY_S, MIN_PEAKS, PPG_REFRACTORY_S};
pub use features::{
    build_feature_vector, extract_targets, resample_linear, FeatureVector, TargetPair, FEATURE_DIM,
    MAX_SEGMENT_S, MIN_SEGMENT_SAMPLES, SEGMENT_SAMPLES,
};

use crate::error::Result;

/// `M` consecutive feature vectors and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub inputs: Vec<FeatureVector>,
    pub targets: Vec<TargetPair>,
    pub patient: String,
    /// The `M + 2` PPG peak indices (record coordinates) the vectors span.
    pub peaks: Vec<usize>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn start_index(&self) -> usize {
        self.peaks[0]
    }

    /// Exclusive end of the last segment.
    pub fn end_index(&self) -> usize {
        self.peaks[self.peaks.len() - 1]
    }

    /// Final-step target, the one a prediction is compared with.
    pub fn last_target(&self) -> TargetPair {
        self.targets[self.targets.len() - 1]
    }
}

/// One two-cycle segment of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub features: FeatureVector,
    pub target: Option<TargetPair>,
    pub start: usize,
    pub end: usize,
}

/// Everything segmentation produced for one window.
#[derive(Debug, Clone, Default)]
pub struct WindowSegmentation {
    /// PPG peaks in window coordinates.
    pub peaks: Vec<usize>,
    /// One entry per peak triple; `None` where the segment was rejected.
    pub segments: Vec<Option<Segment>>,
    pub sequences: Vec<SequenceSample>,
}

/// Where a window sits: the patient it belongs to and its first sample's
/// index in the full record.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindowOrigin<'a> {
    pub patient: &'a str,
    pub offset: usize,
}

fn segment_window(
    ecg: &[f64],
    ppg: &[f64],
    abp: Option<&[f64]>,
    fs: f64,
) -> Result<(Vec<usize>, Vec<Option<Segment>>)> {
    let peaks = detect_ppg_peaks(ppg, fs)?;
    let segments = peaks
        .windows(3)
        .map(|w| {
            let (start, end) = (w[0], w[2]);
            let features = build_feature_vector(ecg, ppg, start, end, fs).ok()?;
            let target = match abp {
                Some(abp) => Some(extract_targets(abp, fs, start..end).ok()?),
                None => None,
            };
            Some(Segment {
                features,
                target,
                start,
                end,
            })
        })
        .collect();
    Ok((peaks, segments))
}

/// Builds training sequences of length `m` from one preprocessed window.
/// A window with `P` PPG peaks gives `P - 2` segments and up to
/// `P - 2 - m + 1` sequences; a sequence containing a rejected segment is
/// dropped.
pub fn build_sequences(
    ecg: &[f64],
    ppg: &[f64],
    abp: &[f64],
    fs: f64,
    m: usize,
    origin: WindowOrigin<'_>,
) -> Result<WindowSegmentation> {
    assert!(m >= 1, "sequence length must be at least 1");
    let (peaks, segments) = segment_window(ecg, ppg, Some(abp), fs)?;
    let mut sequences = Vec::new();
    if segments.len() >= m {
        for s in 0..=segments.len() - m {
            let run = &segments[s..s + m];
            if run.iter().any(Option::is_none) {
                continue;
            }
            let run: Vec<&Segment> = run.iter().flatten().collect();
            sequences.push(SequenceSample {
                inputs: run.iter().map(|seg| seg.features.clone()).collect(),
                targets: run
                    .iter()
                    .map(|seg| seg.target.expect("targets extracted with ABP"))
                    .collect(),
                patient: origin.patient.to_string(),
                peaks: peaks[s..s + m + 2]
                    .iter()
                    .map(|p| p + origin.offset)
                    .collect(),
            });
        }
    }
    Ok(WindowSegmentation {
        peaks,
        segments,
        sequences,
    })
}

/// Input-only sequence for inference when no ABP is available.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    pub inputs: Vec<FeatureVector>,
    pub peaks: Vec<usize>,
}

pub fn build_input_sequences(
    ecg: &[f64],
    ppg: &[f64],
    fs: f64,
    m: usize,
    offset: usize,
) -> Result<Vec<InputSequence>> {
    assert!(m >= 1, "sequence length must be at least 1");
    let (peaks, segments) = segment_window(ecg, ppg, None, fs)?;
    let mut out = Vec::new();
    if segments.len() >= m {
        for s in 0..=segments.len() - m {
            let run = &segments[s..s + m];
            if run.iter().any(Option::is_none) {
                continue;
            }
            out.push(InputSequence {
                inputs: run
                    .iter()
                    .flatten()
                    .map(|seg| seg.features.clone())
                    .collect(),
                peaks: peaks[s..s + m + 2].iter().map(|p| p + offset).collect(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 125.0;

    /// A window with exactly `count` PPG apexes at a period of 100 samples.
    fn window(count: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let period = 100.0;
        let n = (count as f64 * period) as usize;
        let ppg: Vec<f64> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / period).cos()))
            .collect();
        let ecg: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.3).sin()).collect();
        let abp: Vec<f64> = ppg.iter().map(|v| 80.0 + 40.0 * v).collect();
        (ecg, ppg, abp)
    }

    #[test]
    fn counting_rule() {
        let (ecg, ppg, abp) = window(12);
        let w = build_sequences(&ecg, &ppg, &abp, FS, 10, WindowOrigin::default()).unwrap();
        assert_eq!(w.peaks.len(), 12);
        assert_eq!(w.segments.len(), 10);
        assert_eq!(w.sequences.len(), 1);

        let (ecg, ppg, abp) = window(11);
        let w = build_sequences(&ecg, &ppg, &abp, FS, 10, WindowOrigin::default()).unwrap();
        assert_eq!(w.segments.len(), 9);
        assert!(w.sequences.is_empty());
    }

    #[test]
    fn single_step_sequences() {
        let (ecg, ppg, abp) = window(8);
        let w = build_sequences(&ecg, &ppg, &abp, FS, 1, WindowOrigin::default()).unwrap();
        assert_eq!(w.sequences.len(), w.segments.len());
        assert!(w.sequences.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn sequences_are_ordered_and_overlapping() {
        let (ecg, ppg, abp) = window(16);
        let origin = WindowOrigin {
            patient: "p1",
            offset: 5000,
        };
        let w = build_sequences(&ecg, &ppg, &abp, FS, 10, origin).unwrap();
        assert_eq!(w.sequences.len(), 5);
        for s in &w.sequences {
            assert_eq!(s.patient, "p1");
            assert_eq!(s.peaks.len(), 12);
            assert!(s.peaks.windows(2).all(|p| p[0] < p[1]));
            assert!(s.start_index() >= 5000);
            assert!(s
                .inputs
                .iter()
                .all(|v| v.values().iter().all(|x| x.is_finite())));
            for t in &s.targets {
                assert!((t.sbp - 120.0).abs() < 0.1 && (t.dbp - 80.0).abs() < 0.1);
            }
        }
        // consecutive sequences shift by exactly one peak
        assert_eq!(w.sequences[0].peaks[1..], w.sequences[1].peaks[..11]);
    }

    #[test]
    fn rejected_segment_drops_its_sequences() {
        let (ecg, ppg, mut abp) = window(13);
        // flatten ABP under the whole first segment
        abp[40..250].fill(100.0);
        let w = build_sequences(&ecg, &ppg, &abp, FS, 10, WindowOrigin::default()).unwrap();
        assert_eq!(w.segments.len(), 11);
        assert!(w.segments[0].is_none());
        assert_eq!(w.sequences.len(), 1);
        assert_eq!(w.sequences[0].peaks[0], w.peaks[1]);
    }

    #[test]
    fn inference_sequences_without_abp() {
        let (ecg, ppg, _) = window(12);
        let seqs = build_input_sequences(&ecg, &ppg, FS, 10, 0).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].inputs.len(), 10);
    }
}
