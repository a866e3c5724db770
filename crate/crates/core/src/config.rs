//! Run configuration: flat `key = value` lines with dotted section keys and
//! `#` comments.
//!
//! ```text
//! data.records = a.csv, b.hea     # comma-separated; .hea pairs with .dat
//! segment.m = 32                  # window and cap pair automatically
//! train.seed = 7
//! ```
//!
//! Unknown keys are rejected. `segment.m` and `segment.window_s` must be one
//! of the standard pairs (10 / 16 s, 32 / 40 s) unless
//! `segment.allow_unpaired = true`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    default_clip_norm, ModelDims, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE,
};
use crate::record::DEFAULT_FS;
use crate::segmentation::SplitFractions;
use crate::tqwt::{DEFAULT_LEVELS, DEFAULT_REDUNDANCY};

/// Standard sequence-length / window pairs.
pub const STANDARD_PAIRS: [(usize, f64); 2] = [(10, 16.0), (32, 40.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// One model over every patient's training partition.
    Pooled,
    /// One model per patient.
    PerPatient,
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pooled" => Ok(TrainMode::Pooled),
            "per_patient" => Ok(TrainMode::PerPatient),
            _ => Err("expected pooled or per_patient".into()),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Pooled => "pooled",
            TrainMode::PerPatient => "per_patient",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TqwtConfig {
    pub redundancy: f64,
    pub levels: usize,
    pub q_min: f64,
    pub q_max: f64,
    pub q_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub records: Vec<PathBuf>,
    pub fs: f64,
    pub m: usize,
    pub window_s: f64,
    pub allow_unpaired: bool,
    pub tqwt: TqwtConfig,
    pub train: TrainConfig,
    pub mode: TrainMode,
    pub split: SplitFractions,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are consistent")
    }
}

fn parse_value<T: FromStr>(key: &str, line: usize, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: {key} = {raw:?} has the wrong type")))
}

/// Raw settings before pairing rules are applied.
#[derive(Default)]
struct Raw {
    records: Option<Vec<PathBuf>>,
    fs: Option<f64>,
    m: Option<usize>,
    window_s: Option<f64>,
    allow_unpaired: Option<bool>,
    redundancy: Option<f64>,
    levels: Option<usize>,
    q_min: Option<f64>,
    q_max: Option<f64>,
    q_step: Option<f64>,
    lr: Option<f64>,
    batch: Option<usize>,
    cap: Option<f64>,
    patience: Option<usize>,
    max_epochs: Option<usize>,
    seed: Option<u64>,
    dense: Option<usize>,
    hidden: Option<usize>,
    mode: Option<TrainMode>,
    split_train: Option<f64>,
    split_validation: Option<f64>,
    split_test: Option<f64>,
    output_dir: Option<PathBuf>,
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut raw = Raw::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let content = match line.find('#') {
            Some(p) => &line[..p],
            None => line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {n}: expected key = value, got {content:?}"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        macro_rules! set {
            ($field:ident) => {
                raw.$field = Some(parse_value(key, n, value)?)
            };
        }
        match key {
            "data.records" => {
                raw.records = Some(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(PathBuf::from)
                        .collect(),
                )
            }
            "data.fs" => set!(fs),
            "segment.m" => set!(m),
            "segment.window_s" => set!(window_s),
            "segment.allow_unpaired" => set!(allow_unpaired),
            "tqwt.redundancy" => set!(redundancy),
            "tqwt.levels" => set!(levels),
            "tqwt.q_min" => set!(q_min),
            "tqwt.q_max" => set!(q_max),
            "tqwt.q_step" => set!(q_step),
            "train.lr" => set!(lr),
            "train.batch" => set!(batch),
            "train.cap" => set!(cap),
            "train.patience" => set!(patience),
            "train.max_epochs" => set!(max_epochs),
            "train.seed" => set!(seed),
            "train.dense" => set!(dense),
            "train.hidden" => set!(hidden),
            "train.mode" => {
                raw.mode = Some(
                    value
                        .parse()
                        .map_err(|e| Error::Config(format!("line {n}: {key}: {e}")))?,
                )
            }
            "split.train" => set!(split_train),
            "split.validation" => set!(split_validation),
            "split.test" => set!(split_test),
            "output.dir" => raw.output_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("line {n}: unknown key {key:?}"))),
        }
    }
    resolve(raw)
}

fn resolve(raw: Raw) -> Result<PipelineConfig> {
    let allow_unpaired = raw.allow_unpaired.unwrap_or(false);
    let pair_of_m = |m: usize| STANDARD_PAIRS.iter().find(|p| p.0 == m).map(|p| p.1);
    let pair_of_w = |w: f64| STANDARD_PAIRS.iter().find(|p| p.1 == w).map(|p| p.0);
    let (m, window_s) = match (raw.m, raw.window_s) {
        (None, None) => STANDARD_PAIRS[0],
        (Some(m), None) => match pair_of_m(m) {
            Some(w) => (m, w),
            None => {
                return Err(Error::Config(format!(
                    "segment.m = {m} has no standard window; set segment.window_s and segment.allow_unpaired = true"
                )))
            }
        },
        (None, Some(w)) => match pair_of_w(w) {
            Some(m) => (m, w),
            None => {
                return Err(Error::Config(format!(
                    "segment.window_s = {w} has no standard sequence length; set segment.m and segment.allow_unpaired = true"
                )))
            }
        },
        (Some(m), Some(w)) => {
            if pair_of_m(m) != Some(w) && !allow_unpaired {
                return Err(Error::Config(format!(
                    "segment.m = {m} with segment.window_s = {w} is not a standard pairing (10/16, 32/40); set segment.allow_unpaired = true to override"
                )));
            }
            (m, w)
        }
    };
    if m == 0 || !(window_s > 0.0) {
        return Err(Error::Config(
            "segment.m and segment.window_s must be positive".into(),
        ));
    }

    let fs = raw.fs.unwrap_or(DEFAULT_FS);
    if !(fs > 0.0) {
        return Err(Error::Config(format!("data.fs must be positive, got {fs}")));
    }
    let tqwt = TqwtConfig {
        redundancy: raw.redundancy.unwrap_or(DEFAULT_REDUNDANCY),
        levels: raw.levels.unwrap_or(DEFAULT_LEVELS),
        q_min: raw.q_min.unwrap_or(1.0),
        q_max: raw.q_max.unwrap_or(1.4),
        q_step: raw.q_step.unwrap_or(0.01),
    };
    if !(tqwt.q_min >= 1.0 && tqwt.q_max >= tqwt.q_min && tqwt.q_step > 0.0) {
        return Err(Error::Config(format!("invalid Q grid {:?}", tqwt)));
    }

    let defaults = ModelDims::default();
    let train = TrainConfig {
        seq_len: m,
        batch_size: raw.batch.unwrap_or(DEFAULT_BATCH_SIZE),
        learning_rate: raw.lr.unwrap_or(DEFAULT_LEARNING_RATE),
        clip_norm: raw.cap.unwrap_or_else(|| default_clip_norm(m)),
        max_epochs: raw.max_epochs.unwrap_or(DEFAULT_MAX_EPOCHS),
        patience: raw.patience.unwrap_or(DEFAULT_PATIENCE),
        seed: raw.seed.unwrap_or(0),
        dims: ModelDims {
            dense: raw.dense.unwrap_or(defaults.dense),
            hidden: raw.hidden.unwrap_or(defaults.hidden),
            ..defaults
        },
    };
    train.validate().map_err(|e| Error::Config(e.to_string()))?;

    let d = SplitFractions::default();
    let split = SplitFractions {
        train: raw.split_train.unwrap_or(d.train),
        validation: raw.split_validation.unwrap_or(d.validation),
        test: raw.split_test.unwrap_or(d.test),
    };
    split.validate().map_err(|e| Error::Config(e.to_string()))?;

    Ok(PipelineConfig {
        records: raw.records.unwrap_or_default(),
        fs,
        m,
        window_s,
        allow_unpaired,
        tqwt,
        train,
        mode: raw.mode.unwrap_or(TrainMode::Pooled),
        split,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
    })
}

impl PipelineConfig {
    /// Fully resolved settings in the input syntax; parsing this text gives
    /// back the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let records: Vec<String> = self
            .records
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let t = &self.train;
        let rows: Vec<(&str, String)> = vec![
            ("data.records", records.join(", ")),
            ("data.fs", self.fs.to_string()),
            ("segment.m", self.m.to_string()),
            ("segment.window_s", self.window_s.to_string()),
            ("segment.allow_unpaired", self.allow_unpaired.to_string()),
            ("tqwt.redundancy", self.tqwt.redundancy.to_string()),
            ("tqwt.levels", self.tqwt.levels.to_string()),
            ("tqwt.q_min", self.tqwt.q_min.to_string()),
            ("tqwt.q_max", self.tqwt.q_max.to_string()),
            ("tqwt.q_step", self.tqwt.q_step.to_string()),
            ("train.lr", t.learning_rate.to_string()),
            ("train.batch", t.batch_size.to_string()),
            ("train.cap", t.clip_norm.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.dense", t.dims.dense.to_string()),
            ("train.hidden", t.dims.hidden.to_string()),
            ("train.mode", self.mode.to_string()),
            ("split.train", self.split.train.to_string()),
            ("split.validation", self.split.validation.to_string()),
            ("split.test", self.split.test.to_string()),
            ("output.dir", self.output_dir.display().to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the resolved settings, excluding the output directory so
    /// that relocating a run does not change its identity.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("output.dir"))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn window_samples(&self) -> usize {
        (self.window_s * self.fs).round() as usize
    }
}
