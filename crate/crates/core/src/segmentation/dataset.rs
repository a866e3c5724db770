//! Per-patient chronological splitting, input standardization and the
//! `BPSEQ1` dataset file.
//!
//! `BPSEQ1` layout (all integers u32 little-endian):
//!
//! ```text
//! "BPSEQ1" | count | M | 513 | per sequence: M*513 f32 inputs, M*2 f32 (sbp, dbp)
//! ```
//!
//! A sidecar CSV manifest carries `patient,start_index,end_index,split,peaks`
//! for each sequence in file order.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use log::warn;

use super::{FeatureVector, SequenceSample, TargetPair, FEATURE_DIM, SEGMENT_SAMPLES};
use crate::error::{Error, Result};

pub const MIN_SEQUENCES_PER_PATIENT: usize = 10;
const MAGIC: &[u8; 6] = b"BPSEQ1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::BadFile(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|f| !(*f >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions must be non-negative and sum to 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-channel mean/std of the ECG and PPG parts of the feature vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub ecg_mean: f64,
    pub ecg_std: f64,
    pub ppg_mean: f64,
    pub ppg_std: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization {
        ecg_mean: 0.0,
        ecg_std: 1.0,
        ppg_mean: 0.0,
        ppg_std: 1.0,
    };

    /// Statistics over every input vector of `samples`.
    pub fn fit(samples: &[SequenceSample]) -> Self {
        let mut ecg = Moments::default();
        let mut ppg = Moments::default();
        for v in samples.iter().flat_map(|s| &s.inputs) {
            v.ecg().iter().for_each(|&x| ecg.push(x));
            v.ppg().iter().for_each(|&x| ppg.push(x));
        }
        let (ecg_mean, ecg_std) = ecg.finish();
        let (ppg_mean, ppg_std) = ppg.finish();
        Standardization {
            ecg_mean,
            ecg_std,
            ppg_mean,
            ppg_std,
        }
    }

    pub fn apply(&self, v: &mut FeatureVector) {
        let values = v.values_mut();
        for x in &mut values[..SEGMENT_SAMPLES] {
            *x = (*x - self.ecg_mean) / self.ecg_std;
        }
        for x in &mut values[SEGMENT_SAMPLES..2 * SEGMENT_SAMPLES] {
            *x = (*x - self.ppg_mean) / self.ppg_std;
        }
    }

    pub fn apply_all(&self, samples: &mut [SequenceSample]) {
        for v in samples.iter_mut().flat_map(|s| s.inputs.iter_mut()) {
            self.apply(v);
        }
    }
}

/// Two-pass-free mean/variance accumulator (Welford).
#[derive(Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    /// Mean and population standard deviation; a zero spread maps to 1.
    fn finish(&self) -> (f64, f64) {
        if self.n == 0.0 {
            return (0.0, 1.0);
        }
        let sd = (self.m2 / self.n).sqrt();
        (self.mean, if sd > 0.0 { sd } else { 1.0 })
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub validation: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub stats: Option<Standardization>,
    pub excluded_patients: Vec<String>,
}

impl DatasetSplit {
    pub fn stats(&self) -> Standardization {
        self.stats.unwrap_or(Standardization::IDENTITY)
    }
}

/// Assigns each sample a split. Per patient, samples are ordered by start
/// index; the earliest fraction goes to train, the next to validation, the
/// rest to test. Validation and test samples whose span overlaps an earlier
/// partition are purged (`None`). Patients with fewer than
/// [`MIN_SEQUENCES_PER_PATIENT`] sequences are excluded entirely.
pub fn assign_splits(
    samples: &[SequenceSample],
    fractions: SplitFractions,
) -> Result<(Vec<Option<Split>>, Vec<String>)> {
    fractions.validate()?;
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_patient.entry(s.patient.as_str()).or_default().push(i);
    }
    let mut out = vec![None; samples.len()];
    let mut excluded = Vec::new();
    for (patient, mut idx) in by_patient {
        if idx.len() < MIN_SEQUENCES_PER_PATIENT {
            warn!(
                "patient {patient:?} has {} sequences (< {MIN_SEQUENCES_PER_PATIENT}); excluded",
                idx.len()
            );
            excluded.push(patient.to_string());
            continue;
        }
        idx.sort_by_key(|&i| (samples[i].start_index(), samples[i].end_index()));
        let n = idx.len();
        let n_train = (fractions.train * n as f64).round() as usize;
        let n_val = ((fractions.validation * n as f64).round() as usize).min(n - n_train);

        let rank_split = |rank: usize| {
            if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            }
        };
        // each partition must start at or after the end of everything kept
        // in the partitions before it
        let mut frontier = 0usize;
        let mut next_frontier = 0usize;
        let mut current = Split::Train;
        for (rank, &i) in idx.iter().enumerate() {
            let split = rank_split(rank);
            if split != current {
                frontier = frontier.max(next_frontier);
                current = split;
            }
            let s = &samples[i];
            if split != Split::Train && s.start_index() < frontier {
                continue;
            }
            next_frontier = next_frontier.max(s.end_index());
            out[i] = Some(split);
        }
    }
    Ok((out, excluded))
}

/// Chronological per-patient split followed by standardization of every
/// partition with statistics fitted on the training partition only.
pub fn split_and_standardize(
    samples: Vec<SequenceSample>,
    fractions: SplitFractions,
) -> Result<DatasetSplit> {
    let (assignment, excluded_patients) = assign_splits(&samples, fractions)?;
    let mut split = DatasetSplit {
        excluded_patients,
        ..Default::default()
    };
    for (s, a) in samples.into_iter().zip(assignment) {
        match a {
            Some(Split::Train) => split.train.push(s),
            Some(Split::Validation) => split.validation.push(s),
            Some(Split::Test) => split.test.push(s),
            None => {}
        }
    }
    standardize(&mut split);
    Ok(split)
}

/// Fits statistics on `split.train` and applies them to all partitions.
pub fn standardize(split: &mut DatasetSplit) {
    let stats = Standardization::fit(&split.train);
    stats.apply_all(&mut split.train);
    stats.apply_all(&mut split.validation);
    stats.apply_all(&mut split.test);
    split.stats = Some(stats);
}

/// Serializes samples to `BPSEQ1` bytes and the sidecar manifest.
pub fn write_dataset(
    samples: &[SequenceSample],
    splits: &[Option<Split>],
) -> Result<(Vec<u8>, String)> {
    assert_eq!(samples.len(), splits.len());
    let m = samples.first().map_or(0, SequenceSample::len);
    if samples.iter().any(|s| s.len() != m || s.targets.len() != m) {
        return Err(Error::ShapeMismatch("sequences of unequal length".into()));
    }
    let mut bytes = Vec::with_capacity(18 + samples.len() * m * (FEATURE_DIM + 2) * 4);
    bytes.extend_from_slice(MAGIC);
    for v in [samples.len(), m, FEATURE_DIM] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut manifest = String::from("patient,start_index,end_index,split,peaks\n");
    for (s, split) in samples.iter().zip(splits) {
        for v in &s.inputs {
            for &x in v.values() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        for t in &s.targets {
            bytes.extend_from_slice(&(t.sbp as f32).to_le_bytes());
            bytes.extend_from_slice(&(t.dbp as f32).to_le_bytes());
        }
        let peaks: Vec<String> = s.peaks.iter().map(usize::to_string).collect();
        let _ = writeln!(
            manifest,
            "{},{},{},{},{}",
            s.patient,
            s.start_index(),
            s.end_index(),
            split.map_or_else(|| "excluded".to_string(), |x| x.to_string()),
            peaks.join(";")
        );
    }
    Ok((bytes, manifest))
}

/// Inverse of [`write_dataset`].
pub fn read_dataset(bytes: &[u8], manifest: &str) -> Result<Vec<(SequenceSample, Option<Split>)>> {
    let bad = |msg: &str| Error::BadFile(format!("BPSEQ1: {msg}"));
    if bytes.len() < 18 || &bytes[..6] != MAGIC {
        return Err(bad("missing magic"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (count, m, dim) = (word(0), word(1), word(2));
    if dim != FEATURE_DIM {
        return Err(bad(&format!(
            "feature dimension {dim}, expected {FEATURE_DIM}"
        )));
    }
    let per_seq = m * (dim + 2) * 4;
    if bytes.len() != 18 + count * per_seq {
        return Err(bad("payload length does not match header counts"));
    }

    let rows: Vec<&str> = manifest
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .collect();
    if rows.len() != count {
        return Err(bad(&format!(
            "manifest has {} rows for {count} sequences",
            rows.len()
        )));
    }

    let mut floats = bytes[18..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut out = Vec::with_capacity(count);
    for (r, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::Csv {
                row: r + 2,
                column: 0,
                reason: "expected 5 columns".into(),
            });
        }
        let peaks = cells[4]
            .split(';')
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Csv {
                row: r + 2,
                column: 5,
                reason: "bad peak list".into(),
            })?;
        if peaks.len() != m + 2 {
            return Err(Error::Csv {
                row: r + 2,
                column: 5,
                reason: format!("{} peaks for M = {m}", peaks.len()),
            });
        }
        let split = match cells[3] {
            "excluded" => None,
            s => Some(s.parse::<Split>()?),
        };
        let mut inputs = Vec::with_capacity(m);
        for _ in 0..m {
            let values: Vec<f64> = floats.by_ref().take(dim).collect();
            inputs.push(FeatureVector::from_values(values)?);
        }
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            let sbp = floats.next().ok_or_else(|| bad("truncated"))?;
            let dbp = floats.next().ok_or_else(|| bad("truncated"))?;
            targets.push(TargetPair { sbp, dbp });
        }
        out.push((
            SequenceSample {
                inputs,
                targets,
                patient: cells[0].to_string(),
                peaks,
            },
            split,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Non-overlapping sequences of length `m`, one every 1000 samples.
    fn samples(patient: &str, count: usize, m: usize) -> Vec<SequenceSample> {
        (0..count)
            .map(|k| {
                let base = k * 1000;
                SequenceSample {
                    inputs: (0..m)
                        .map(|j| {
                            let mut v: Vec<f64> = (0..FEATURE_DIM)
                                .map(|i| ((i + j + k) as f64 * 0.1).sin() * 3.0 + 1.0)
                                .collect();
                            v[FEATURE_DIM - 1] = 0.8;
                            FeatureVector::from_values(v).unwrap()
                        })
                        .collect(),
                    targets: vec![
                        TargetPair {
                            sbp: 120.0 + k as f64,
                            dbp: 80.0
                        };
                        m
                    ],
                    patient: patient.to_string(),
                    peaks: (0..m + 2).map(|j| base + j * 50).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn fractions_of_one_patient() {
        let split = split_and_standardize(samples("a", 100, 2), SplitFractions::default()).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (70, 10, 20)
        );
        // chronological: all train before validation before test
        let last_train = split.train.iter().map(|s| s.end_index()).max().unwrap();
        let first_val = split
            .validation
            .iter()
            .map(|s| s.start_index())
            .min()
            .unwrap();
        assert!(last_train <= first_val);
    }

    #[test]
    fn standardized_train_is_unit() {
        let split = split_and_standardize(samples("a", 50, 3), SplitFractions::default()).unwrap();
        let ecg: Vec<f64> = split
            .train
            .iter()
            .flat_map(|s| &s.inputs)
            .flat_map(|v| v.ecg().to_vec())
            .collect();
        let n = ecg.len() as f64;
        let mean = ecg.iter().sum::<f64>() / n;
        let sd = (ecg.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((sd - 1.0).abs() <= 1e-9);
        // norm_length untouched
        assert_eq!(split.train[0].inputs[0].norm_length(), 0.8);
        // validation uses train statistics, so its mean is not forced to 0
        let vmean = split
            .validation
            .iter()
            .flat_map(|s| &s.inputs)
            .flat_map(|v| v.ecg().to_vec())
            .sum::<f64>();
        assert!(vmean.abs() > 1e-6);
    }

    #[test]
    fn overlapping_boundary_samples_are_purged() {
        // sliding sequences: start every 50 samples, each spanning 600
        let mut all = samples("a", 40, 1);
        for (k, s) in all.iter_mut().enumerate() {
            s.peaks = vec![k * 50, k * 50 + 300, k * 50 + 600];
        }
        let (assign, _) = assign_splits(&all, SplitFractions::default()).unwrap();
        let range = |split: Split| {
            all.iter()
                .zip(&assign)
                .filter(|(_, a)| **a == Some(split))
                .map(|(s, _)| (s.start_index(), s.end_index()))
                .collect::<Vec<_>>()
        };
        let train = range(Split::Train);
        let val = range(Split::Validation);
        let test = range(Split::Test);
        let train_end = train.iter().map(|r| r.1).max().unwrap();
        assert!(val.iter().all(|r| r.0 >= train_end));
        let val_end = val.iter().map(|r| r.1).max().unwrap_or(train_end);
        assert!(test.iter().all(|r| r.0 >= val_end.max(train_end)));
        assert_eq!(train.len(), 28);
    }

    #[test]
    fn small_patients_are_excluded() {
        let mut all = samples("big", 30, 1);
        all.extend(samples("small", 5, 1));
        let split = split_and_standardize(all, SplitFractions::default()).unwrap();
        assert_eq!(split.excluded_patients, vec!["small".to_string()]);
        assert!(split.train.iter().all(|s| s.patient == "big"));
    }

    #[test]
    fn dataset_file_roundtrip() {
        let all = samples("p", 12, 3);
        let (assign, _) = assign_splits(&all, SplitFractions::default()).unwrap();
        let (bytes, manifest) = write_dataset(&all, &assign).unwrap();
        assert_eq!(&bytes[..6], b"BPSEQ1");
        assert_eq!(bytes.len(), 18 + 12 * 3 * (FEATURE_DIM + 2) * 4);
        let back = read_dataset(&bytes, &manifest).unwrap();
        assert_eq!(back.len(), 12);
        for ((s, split), (orig, a)) in back.iter().zip(all.iter().zip(&assign)) {
            assert_eq!(split, a);
            assert_eq!(s.peaks, orig.peaks);
            for (v, o) in s.inputs.iter().zip(&orig.inputs) {
                for (x, y) in v.values().iter().zip(o.values()) {
                    assert_eq!(*x, *y as f32 as f64);
                }
            }
        }
        assert!(read_dataset(&bytes[..100], &manifest).is_err());
        assert!(read_dataset(b"NOPE..", &manifest).is_err());
    }
}
