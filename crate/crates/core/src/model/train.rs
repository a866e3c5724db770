//! Mini-batch training with early stopping, inference, and the `BPNET1`
//! model file.
//!
//! `BPNET1` layout, little-endian:
//!
//! ```text
//! "BPNET1" | u32 M | u32 input | u32 dense | u32 hidden | u32 outputs
//!          | f64 ecg_mean, ecg_std, ppg_mean, ppg_std | u64 count | count x f64
//! ```

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{backward, forward, mse, Batch};
use super::optim::{adam_step, clip_gradient_norm, AdamState};
use super::{ModelDims, ModelParams, OUTPUTS};
use crate::error::{Error, Result};
use crate::segmentation::{
    DatasetSplit, FeatureVector, SequenceSample, Standardization, TargetPair,
};

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_MAX_EPOCHS: usize = 300;
pub const DEFAULT_PATIENCE: usize = 20;
const MAGIC: &[u8; 6] = b"BPNET1";

/// Gradient-norm cap paired with a sequence length: 3 up to M = 10, 5 above.
pub fn default_clip_norm(seq_len: usize) -> f64 {
    if seq_len <= 10 {
        3.0
    } else {
        5.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seq_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dims: ModelDims,
}

impl TrainConfig {
    pub fn new(seq_len: usize) -> Self {
        TrainConfig {
            seq_len,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: default_clip_norm(seq_len),
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            dims: ModelDims::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.seq_len == 0 {
            return bad("sequence length must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!(
                "gradient-norm cap must be > 0, got {}",
                self.clip_norm
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1".into());
        }
        self.dims.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the returned parameters.
    pub best_epoch: usize,
    pub steps: u64,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.get(self.best_epoch)
    }
}

/// Trained parameters together with what inference needs to reproduce the
/// training-time input pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub seq_len: usize,
    pub stats: Standardization,
}

fn mean_targets(samples: &[SequenceSample]) -> [f64; OUTPUTS] {
    let mut sum = [0.0; OUTPUTS];
    let mut n = 0.0;
    for t in samples.iter().flat_map(|s| &s.targets) {
        sum[0] += t.sbp;
        sum[1] += t.dbp;
        n += 1.0;
    }
    sum.map(|s| if n > 0.0 { s / n } else { 0.0 })
}

fn check_lengths(samples: &[SequenceSample], m: usize, name: &str) -> Result<()> {
    match samples
        .iter()
        .find(|s| s.len() != m || s.targets.len() != m)
    {
        Some(s) => Err(Error::ShapeMismatch(format!(
            "{name} sequence of length {} (targets {}), configured M = {m}",
            s.len(),
            s.targets.len()
        ))),
        None => Ok(()),
    }
}

/// Mean-squared loss of `params` over `samples`, evaluated in batches.
pub(crate) fn dataset_loss(
    params: &ModelParams,
    samples: &[SequenceSample],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        let (y, _) = forward(params, &batch)?;
        let t = batch.targets.as_deref().expect("samples carry targets");
        total += mse(&y, t) * y.len() as f64;
        count += y.len();
    }
    Ok(total / count as f64)
}

/// Trains on `split.train` with early stopping on `split.validation`.
/// Returns the parameters of the best validation epoch.
pub fn train(split: &DatasetSplit, config: &TrainConfig) -> Result<(TrainedModel, TrainHistory)> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "training needs non-empty train and validation partitions (got {} / {})",
            split.train.len(),
            split.validation.len()
        )));
    }
    check_lengths(&split.train, config.seq_len, "train")?;
    check_lengths(&split.validation, config.seq_len, "validation")?;

    let mut params = ModelParams::init(config.dims, config.seed);
    // Start the head at the mean target so early steps fit shape, not offset.
    params.set_output_bias(mean_targets(&split.train));
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&SequenceSample> = idx.iter().map(|&i| &split.train[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let diverged = || Error::Diverged { epoch, batch: b };
            let (_, cache) = forward(&params, &batch).map_err(|e| match e {
                Error::NonFiniteActivation { .. } => diverged(),
                e => e,
            })?;
            let targets = batch.targets.as_deref().expect("samples carry targets");
            let (mut grads, loss) = backward(&params, &cache, targets)?;
            if !loss.is_finite() {
                return Err(diverged());
            }
            clip_gradient_norm(&mut grads, config.clip_norm);
            adam_step(&mut params, &grads, &mut adam, config.learning_rate)?;
            sum += loss * idx.len() as f64;
        }
        let train_loss = sum / split.train.len() as f64;
        let validation_loss = dataset_loss(&params, &split.validation, config.batch_size)
            .map_err(|_| Error::Diverged { epoch, batch: 0 })?;
        if !validation_loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
        });
        debug!("epoch {epoch}: train {train_loss:.4} validation {validation_loss:.4}");
        if validation_loss < best.0 {
            best = (validation_loss, params.clone());
            history.best_epoch = epoch;
        } else if epoch - history.best_epoch >= config.patience {
            info!(
                "early stop at epoch {epoch}; best epoch {}",
                history.best_epoch
            );
            break;
        }
    }
    history.steps = adam.step;
    let model = TrainedModel {
        params: best.1,
        seq_len: config.seq_len,
        stats: split.stats(),
    };
    Ok((model, history))
}

impl TrainedModel {
    fn check_sequence(&self, inputs: &[FeatureVector]) -> Result<()> {
        if inputs.len() != self.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "sequence of length {}, model trained with M = {}",
                inputs.len(),
                self.seq_len
            )));
        }
        Ok(())
    }

    /// Final-step (SBP, DBP) for one standardized input sequence.
    pub fn predict(&self, inputs: &[FeatureVector]) -> Result<TargetPair> {
        Ok(self.predict_batch(&[inputs])?[0])
    }

    pub fn predict_batch(&self, sequences: &[&[FeatureVector]]) -> Result<Vec<TargetPair>> {
        if sequences.is_empty() {
            return Ok(Vec::new());
        }
        for s in sequences {
            self.check_sequence(s)?;
        }
        let batch = Batch::from_inputs(sequences)?;
        let (y, _) = forward(&self.params, &batch)?;
        let last = (self.seq_len - 1) * sequences.len() * OUTPUTS;
        Ok(y[last..]
            .chunks_exact(OUTPUTS)
            .map(|o| TargetPair {
                sbp: o[0],
                dbp: o[1],
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.params.dims();
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        for v in [self.seq_len, d.input, d.dense, d.hidden, OUTPUTS] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let s = self.stats;
        for v in [s.ecg_mean, s.ecg_std, s.ppg_mean, s.ppg_std] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::BadFile(format!("BPNET1: {msg}"));
        const HEADER: usize = 6 + 5 * 4 + 4 * 8 + 8;
        if bytes.len() < HEADER || &bytes[..6] != MAGIC {
            return Err(bad("missing magic".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let seq_len = u32_at(6);
        let dims = ModelDims {
            input: u32_at(10),
            dense: u32_at(14),
            hidden: u32_at(18),
        };
        if u32_at(22) != OUTPUTS {
            return Err(bad(format!("{} outputs, expected {OUTPUTS}", u32_at(22))));
        }
        dims.validate()?;
        let stats = Standardization {
            ecg_mean: f64_at(26),
            ecg_std: f64_at(34),
            ppg_mean: f64_at(42),
            ppg_std: f64_at(50),
        };
        let count = u64::from_le_bytes(bytes[58..66].try_into().unwrap()) as usize;
        if count != dims.param_count() || bytes.len() != HEADER + 8 * count {
            return Err(bad(format!(
                "{count} parameters in {} bytes for dims {dims:?}",
                bytes.len()
            )));
        }
        let values = bytes[HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = ModelParams::from_values(dims, values)?;
        if !params.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(TrainedModel {
            params,
            seq_len,
            stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::FEATURE_DIM;
    use rand::Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            input: FEATURE_DIM,
            dense: 8,
            hidden: 6,
        }
    }

    fn synthetic(count: usize, m: usize, seed: u64) -> Vec<SequenceSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let level: f64 = rng.gen_range(-1.0..1.0);
                let inputs = (0..m)
                    .map(|j| {
                        let v = (0..FEATURE_DIM)
                            .map(|i| {
                                level * ((i + j) as f64 * 0.05).sin() + rng.gen_range(-0.1..0.1)
                            })
                            .collect();
                        FeatureVector::from_values(v).unwrap()
                    })
                    .collect();
                SequenceSample {
                    inputs,
                    targets: vec![
                        TargetPair {
                            sbp: 120.0 + 10.0 * level,
                            dbp: 80.0 + 5.0 * level
                        };
                        m
                    ],
                    patient: "s".into(),
                    peaks: (0..m + 2).map(|p| k * 1000 + p).collect(),
                }
            })
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 15,
            patience: 3,
            seed: 4,
            dims: small_dims(),
            ..TrainConfig::new(3)
        }
    }

    fn split() -> DatasetSplit {
        DatasetSplit {
            train: synthetic(48, 3, 1),
            validation: synthetic(16, 3, 2),
            ..Default::default()
        }
    }

    #[test]
    fn clip_norm_pairs_with_sequence_length() {
        assert_eq!(TrainConfig::new(10).clip_norm, 3.0);
        assert_eq!(TrainConfig::new(32).clip_norm, 5.0);
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_epoch() {
        let (a, ha) = train(&split(), &config()).unwrap();
        let (b, hb) = train(&split(), &config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let best = ha.best().unwrap().validation_loss;
        assert!(ha.epochs[..=ha.best_epoch]
            .iter()
            .all(|e| e.validation_loss >= best));
        assert!(ha.epochs.iter().all(|e| e.validation_loss >= best));
        assert_eq!(
            dataset_loss(&a.params, &split().validation, 16).unwrap(),
            best
        );
        // learning happened
        assert!(ha.epochs.last().unwrap().train_loss < ha.epochs[0].train_loss);
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let mut s = split();
        s.validation.clear();
        assert!(train(&s, &config()).is_err());
        let mut c = config();
        c.seq_len = 4;
        assert!(matches!(train(&split(), &c), Err(Error::ShapeMismatch(_))));
        c = config();
        c.clip_norm = 0.0;
        assert!(train(&split(), &c).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut s = split();
        s.train[5].targets[0].sbp = f64::INFINITY;
        let c = TrainConfig {
            batch_size: 64,
            ..config()
        };
        assert!(matches!(
            train(&s, &c),
            Err(Error::Diverged { epoch: 0, batch: 0 })
        ));
    }

    #[test]
    fn prediction_and_file_roundtrip() {
        let model = TrainedModel {
            params: ModelParams::init(small_dims(), 9),
            seq_len: 3,
            stats: Standardization {
                ecg_mean: 0.1,
                ecg_std: 2.0,
                ppg_mean: -0.3,
                ppg_std: 0.5,
            },
        };
        let seqs = synthetic(4, 3, 3);
        let single = model.predict(&seqs[1].inputs).unwrap();
        assert_eq!(single, model.predict(&seqs[1].inputs).unwrap());
        let refs: Vec<&[FeatureVector]> = seqs.iter().map(|s| s.inputs.as_slice()).collect();
        let all = model.predict_batch(&refs).unwrap();
        assert!((all[1].sbp - single.sbp).abs() < 1e-12);
        assert!(model.predict(&seqs[0].inputs[..2]).is_err());

        let bytes = model.to_bytes();
        assert_eq!(&bytes[..6], b"BPNET1");
        assert_eq!(TrainedModel::from_bytes(&bytes).unwrap(), model);
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(TrainedModel::from_bytes(&corrupt).is_err());
    }
}
