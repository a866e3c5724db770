//! Stage runner. Each stage reads the previous stage's artifacts from the
//! output directory and writes its own atomically:
//!
//! ```text
//! ingest      ingest/patients.csv, ingest/<patient>.csv
//! preprocess  preprocess/q_table.csv, preprocess/windows.csv, preprocess/<patient>.csv
//! segment     dataset/sequences.bpseq, dataset/manifest.csv
//! train       model/model.bpnet (or model/<patient>.bpnet), model/history*.csv
//! eval        eval/predictions.csv, eval/report.txt, eval/report.csv
//! track       track/<patient>.csv, track/<patient>.svg
//! report      report/summary.txt
//! ```
//!
//! `manifest.json` records the configuration hash, seed and the SHA-256 of
//! every artifact written so far.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, TrainMode};
use crate::error::{Error, Result};
use crate::evaluate::{tracking_export, EvalReport};
use crate::fsutil::{atomic_write, read, read_to_string};
use crate::model::{train, TrainedModel};
use crate::preprocess::preprocess_signal;
use crate::record::{self, ChannelRole, Parsed, PatientRecord};
use crate::segmentation::{
    self, assign_splits, build_sequences, read_dataset, write_dataset, DatasetSplit,
    SequenceSample, Split, TargetPair, WindowOrigin,
};
use crate::tqwt::{build_q_lookup_with_redundancy, FrequencyTable};

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "CUFFBP_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preprocess,
    Segment,
    Train,
    Eval,
    Track,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Segment,
        Stage::Train,
        Stage::Eval,
        Stage::Track,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Segment => "segment",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Track => "track",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: String,
    /// Stage name -> artifact path (relative to the output directory) -> SHA-256.
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
}

/// One test-partition prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub patient: String,
    pub start_index: usize,
    pub end_index: usize,
    pub truth: TargetPair,
    pub estimate: TargetPair,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Csv {
        row,
        column: 0,
        reason: format!("{}: {e}", path.display()),
    }
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let text = read_to_string(path)?;
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

fn field<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, i: usize) -> Result<T> {
    let line = row.position().map_or(0, |p| p.line() as usize);
    let cell = row.get(i).unwrap_or("");
    cell.parse().map_err(|_| Error::Csv {
        row: line,
        column: i + 1,
        reason: format!("{}: bad value {cell:?}", path.display()),
    })
}

/// Reads a CSV or WFDB (`.hea` + signal file) record.
pub fn load_record(path: &Path, fs: f64) -> Result<Parsed> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hea") => {
            let header = read(path)?;
            let text = String::from_utf8_lossy(&header);
            let (descriptor, _) = record::parse_header(&text)?;
            let file = descriptor
                .signals
                .first()
                .map(|s| s.file.clone())
                .ok_or_else(|| Error::InvalidRecord("header lists no signals".into()))?;
            let signal = read(&path.with_file_name(file))?;
            record::read_wfdb_record(&header, &signal)
        }
        _ => record::read_csv_record(&read_to_string(path)?, fs),
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    /// Uses [`OUTPUT_DIR_ENV`] when set, else `output.dir`.
    pub fn new(config: PipelineConfig) -> Self {
        let out = std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| config.output_dir.clone());
        Self::with_output_dir(config, out)
    }

    pub fn with_output_dir(config: PipelineConfig, out: PathBuf) -> Self {
        Pipeline { config, out }
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                path: p,
                stage: stage.name(),
            })
        }
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        info!("stage {}: output {}", stage.name(), self.out.display());
        let mut written = Artifacts::new(&self.out);
        match stage {
            Stage::Ingest => self.ingest(&mut written)?,
            Stage::Preprocess => self.preprocess(&mut written)?,
            Stage::Segment => self.segment(&mut written)?,
            Stage::Train => self.train(&mut written)?,
            Stage::Eval => self.eval(&mut written)?,
            Stage::Track => self.track(&mut written)?,
            Stage::Report => self.report(&mut written)?,
        }
        self.update_manifest(stage, written.finish())
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.require("manifest.json", Stage::Ingest)?;
        serde_json::from_slice(&read(&p)?)
            .map_err(|e| Error::BadFile(format!("{}: {e}", p.display())))
    }

    fn update_manifest(&self, stage: Stage, artifacts: BTreeMap<String, String>) -> Result<()> {
        let hash = self.config.hash();
        let mut manifest = match self.manifest() {
            Ok(m) if m.config_hash == hash => m,
            Ok(_) => {
                warn!("configuration changed since the last run; earlier stage records dropped");
                Manifest::default()
            }
            Err(_) => Manifest::default(),
        };
        manifest.config_hash = hash;
        manifest.seed = self.config.train.seed;
        manifest.config = self.config.to_text();
        manifest.stages.insert(stage.name().to_string(), artifacts);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        atomic_write(&self.path("manifest.json"), text.as_bytes())
    }

    fn patients(&self) -> Result<Vec<String>> {
        let p = self.require("ingest/patients.csv", Stage::Ingest)?;
        read_csv(&p)?.iter().map(|r| field(&p, r, 0)).collect()
    }

    fn ingest(&self, out: &mut Artifacts) -> Result<()> {
        if self.config.records.is_empty() {
            return Err(Error::Config("data.records lists no input records".into()));
        }
        let mut index = String::from("patient,source,ecg_lead,samples,fs\n");
        let mut seen = std::collections::BTreeSet::new();
        for path in &self.config.records {
            let patient = path
                .file_stem()
                .and_then(|s| s.to_str())
                .filter(|s| !s.is_empty() && !s.contains(','))
                .ok_or_else(|| {
                    Error::Config(format!("cannot name a patient after {}", path.display()))
                })?
                .to_string();
            if !seen.insert(patient.clone()) {
                return Err(Error::Config(format!(
                    "two records map to patient {patient:?}"
                )));
            }
            let parsed = load_record(path, self.config.fs)?;
            for w in &parsed.warnings {
                warn!("{}: {w}", path.display());
            }
            let rec = parsed.record;
            if rec.fs() != self.config.fs {
                return Err(Error::InvalidRecord(format!(
                    "{} is sampled at {} Hz, configuration expects {}",
                    path.display(),
                    rec.fs(),
                    self.config.fs
                )));
            }
            let triple = record::select_channels(&rec)?;
            let abp = triple.abp.ok_or(Error::NoAbpChannel)?;
            let mut channels = BTreeMap::new();
            channels.insert(triple.ecg_lead, triple.ecg);
            channels.insert(ChannelRole::Ppg, triple.ppg);
            channels.insert(ChannelRole::Abp, abp);
            let selected =
                PatientRecord::from_channels(&patient, rec.fs(), channels, rec.meta.clone())?;
            out.write(
                &format!("ingest/{patient}.csv"),
                record::write_csv_record(&selected).as_bytes(),
            )?;
            let _ = writeln!(
                index,
                "{patient},{},{},{},{}",
                path.display().to_string().replace(',', "_"),
                triple.ecg_lead.csv_column(),
                selected.len(),
                selected.fs()
            );
            info!(
                "ingested {patient}: {} samples, ECG lead {}",
                selected.len(),
                triple.ecg_lead
            );
        }
        out.write("ingest/patients.csv", index.as_bytes())
    }

    fn q_table(&self) -> Result<FrequencyTable> {
        let t = &self.config.tqwt;
        build_q_lookup_with_redundancy(
            self.config.fs,
            t.levels,
            t.q_min,
            t.q_max,
            t.q_step,
            t.redundancy,
        )
    }

    fn preprocess(&self, out: &mut Artifacts) -> Result<()> {
        let patients = self.patients()?;
        let table = self.q_table()?;
        out.write("preprocess/q_table.csv", table.to_csv().as_bytes())?;
        let fs = self.config.fs;
        let width = self.config.window_samples();
        let mut windows = String::from("patient,window,start,end,ecg_q,ppg_q,status\n");
        for patient in &patients {
            let path = self.require(&format!("ingest/{patient}.csv"), Stage::Ingest)?;
            let rec = record::read_csv_record(&read_to_string(&path)?, fs)?.record;
            let triple = record::select_channels(&rec)?;
            let abp = triple.abp.ok_or(Error::NoAbpChannel)?;
            let mut rows = String::from("index,window,ecg,ppg,abp\n");
            let mut kept = 0;
            for (w, start) in (0..).zip((0..rec.len()).step_by(width.max(1))) {
                let end = start + width;
                if end > rec.len() {
                    break;
                }
                let result = preprocess_signal(&triple.ecg[start..end], fs, &table)
                    .and_then(|e| Ok((e, preprocess_signal(&triple.ppg[start..end], fs, &table)?)));
                match result {
                    Ok((e, p)) => {
                        let _ = writeln!(windows, "{patient},{w},{start},{end},{},{},ok", e.q, p.q);
                        for i in 0..width {
                            let _ = writeln!(
                                rows,
                                "{},{w},{},{},{}",
                                start + i,
                                e.signal[i],
                                p.signal[i],
                                abp[start + i]
                            );
                        }
                        kept += 1;
                    }
                    Err(err) => {
                        warn!("{patient} window {w}: {err}");
                        let _ = writeln!(windows, "{patient},{w},{start},{end},,,rejected");
                    }
                }
            }
            info!("preprocessed {patient}: {kept} windows");
            out.write(&format!("preprocess/{patient}.csv"), rows.as_bytes())?;
        }
        out.write("preprocess/windows.csv", windows.as_bytes())
    }

    fn segment(&self, out: &mut Artifacts) -> Result<()> {
        self.require("preprocess/windows.csv", Stage::Preprocess)?;
        let patients = self.patients()?;
        let fs = self.config.fs;
        let mut samples: Vec<SequenceSample> = Vec::new();
        for patient in &patients {
            let path = self.require(&format!("preprocess/{patient}.csv"), Stage::Preprocess)?;
            // window -> (start, ecg, ppg, abp)
            type Columns = (usize, Vec<f64>, Vec<f64>, Vec<f64>);
            let mut windows: BTreeMap<usize, Columns> = BTreeMap::new();
            for row in read_csv(&path)? {
                let index: usize = field(&path, &row, 0)?;
                let w = windows.entry(field(&path, &row, 1)?).or_insert((
                    index,
                    vec![],
                    vec![],
                    vec![],
                ));
                w.1.push(field(&path, &row, 2)?);
                w.2.push(field(&path, &row, 3)?);
                w.3.push(field(&path, &row, 4)?);
            }
            let before = samples.len();
            for (w, (start, ecg, ppg, abp)) in windows {
                let origin = WindowOrigin {
                    patient,
                    offset: start,
                };
                match build_sequences(&ecg, &ppg, &abp, fs, self.config.m, origin) {
                    Ok(seg) => samples.extend(seg.sequences),
                    Err(e) => warn!("{patient} window {w}: {e}"),
                }
            }
            info!("segmented {patient}: {} sequences", samples.len() - before);
        }
        let (splits, excluded) = assign_splits(&samples, self.config.split)?;
        for p in &excluded {
            warn!("patient {p} excluded: too few sequences");
        }
        if splits.iter().all(Option::is_none) {
            return Err(Error::InvalidRecord(
                "no usable sequences in any record".into(),
            ));
        }
        let (bytes, manifest) = write_dataset(&samples, &splits)?;
        out.write("dataset/sequences.bpseq", &bytes)?;
        out.write("dataset/manifest.csv", manifest.as_bytes())
    }

    fn load_dataset(&self) -> Result<Vec<(SequenceSample, Option<Split>)>> {
        let data = self.require("dataset/sequences.bpseq", Stage::Segment)?;
        let manifest = self.require("dataset/manifest.csv", Stage::Segment)?;
        let samples = read_dataset(&read(&data)?, &read_to_string(&manifest)?)?;
        if let Some((s, _)) = samples.iter().find(|(s, _)| s.len() != self.config.m) {
            return Err(Error::ShapeMismatch(format!(
                "dataset has sequences of length {}, configuration says M = {}; re-run segment",
                s.len(),
                self.config.m
            )));
        }
        Ok(samples)
    }

    /// Partitions grouped per model: one group when pooled, one per patient
    /// otherwise. Keys are model names.
    fn groups(
        &self,
        samples: Vec<(SequenceSample, Option<Split>)>,
    ) -> BTreeMap<String, DatasetSplit> {
        let mut groups: BTreeMap<String, DatasetSplit> = BTreeMap::new();
        for (s, split) in samples {
            let Some(split) = split else { continue };
            let key = match self.config.mode {
                TrainMode::Pooled => "model".to_string(),
                TrainMode::PerPatient => s.patient.clone(),
            };
            let g = groups.entry(key).or_default();
            match split {
                Split::Train => g.train.push(s),
                Split::Validation => g.validation.push(s),
                Split::Test => g.test.push(s),
            }
        }
        groups
    }

    fn train(&self, out: &mut Artifacts) -> Result<()> {
        let groups = self.groups(self.load_dataset()?);
        let mut trained = 0;
        for (name, mut split) in groups {
            if split.train.is_empty() || split.validation.is_empty() {
                warn!("{name}: empty train or validation partition, no model trained");
                continue;
            }
            segmentation::standardize(&mut split);
            info!(
                "training {name}: {} train / {} validation sequences",
                split.train.len(),
                split.validation.len()
            );
            let (model, history) = train(&split, &self.config.train)?;
            let mut h = String::from("epoch,train_loss,validation_loss\n");
            for e in &history.epochs {
                let _ = writeln!(h, "{},{},{}", e.epoch, e.train_loss, e.validation_loss);
            }
            if let Some(best) = history.best() {
                info!(
                    "{name}: best epoch {} validation MSE {:.4}",
                    best.epoch, best.validation_loss
                );
            }
            let suffix = if name == "model" {
                String::new()
            } else {
                format!("_{name}")
            };
            out.write(&format!("model/{name}.bpnet"), &model.to_bytes())?;
            out.write(&format!("model/history{suffix}.csv"), h.as_bytes())?;
            trained += 1;
        }
        if trained == 0 {
            return Err(Error::InvalidRecord(
                "no partition had both train and validation data".into(),
            ));
        }
        Ok(())
    }

    fn eval(&self, out: &mut Artifacts) -> Result<()> {
        if self.config.mode == TrainMode::Pooled {
            self.require("model/model.bpnet", Stage::Train)?;
        }
        let groups = self.groups(self.load_dataset()?);
        let mut predictions = Vec::new();
        for (name, split) in groups {
            if split.test.is_empty() {
                continue;
            }
            let path = self.require(&format!("model/{name}.bpnet"), Stage::Train)?;
            let model = TrainedModel::from_bytes(&read(&path)?)?;
            let mut test = split.test;
            model.stats.apply_all(&mut test);
            let inputs: Vec<&[segmentation::FeatureVector]> =
                test.iter().map(|s| s.inputs.as_slice()).collect();
            let mut estimates = Vec::with_capacity(test.len());
            for chunk in inputs.chunks(self.config.train.batch_size) {
                estimates.extend(model.predict_batch(chunk)?);
            }
            for (s, est) in test.iter().zip(estimates) {
                predictions.push(Prediction {
                    patient: s.patient.clone(),
                    start_index: s.start_index(),
                    end_index: s.end_index(),
                    truth: s.last_target(),
                    estimate: est,
                });
            }
        }
        if predictions.is_empty() {
            return Err(Error::InvalidRecord("test partition is empty".into()));
        }
        predictions.sort_by(|a, b| (&a.patient, a.start_index).cmp(&(&b.patient, b.start_index)));
        let mut csv =
            String::from("patient,start_index,end_index,sbp_true,dbp_true,sbp_est,dbp_est\n");
        for p in &predictions {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                p.patient,
                p.start_index,
                p.end_index,
                p.truth.sbp,
                p.truth.dbp,
                p.estimate.sbp,
                p.estimate.dbp
            );
        }
        let truth: Vec<TargetPair> = predictions.iter().map(|p| p.truth).collect();
        let est: Vec<TargetPair> = predictions.iter().map(|p| p.estimate).collect();
        let report = EvalReport::from_pairs(&est, &truth)?;
        info!(
            "test SBP MAE {:.3}, DBP MAE {:.3} mmHg",
            report.sbp.mae, report.dbp.mae
        );
        out.write("eval/predictions.csv", csv.as_bytes())?;
        out.write("eval/report.txt", report.to_text().as_bytes())?;
        out.write("eval/report.csv", report.to_csv().as_bytes())
    }

    /// Test-partition predictions written by the eval stage.
    pub fn predictions(&self) -> Result<Vec<Prediction>> {
        let p = self.require("eval/predictions.csv", Stage::Eval)?;
        read_csv(&p)?
            .iter()
            .map(|r| {
                Ok(Prediction {
                    patient: field(&p, r, 0)?,
                    start_index: field(&p, r, 1)?,
                    end_index: field(&p, r, 2)?,
                    truth: TargetPair {
                        sbp: field(&p, r, 3)?,
                        dbp: field(&p, r, 4)?,
                    },
                    estimate: TargetPair {
                        sbp: field(&p, r, 5)?,
                        dbp: field(&p, r, 6)?,
                    },
                })
            })
            .collect()
    }

    fn track(&self, out: &mut Artifacts) -> Result<()> {
        let predictions = self.predictions()?;
        let mut by_patient: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
        for p in &predictions {
            by_patient.entry(&p.patient).or_default().push(p);
        }
        std::fs::create_dir_all(self.path("track"))
            .map_err(|e| Error::io(self.path("track"), e))?;
        for (patient, preds) in by_patient {
            let truth: Vec<TargetPair> = preds.iter().map(|p| p.truth).collect();
            let est: Vec<TargetPair> = preds.iter().map(|p| p.estimate).collect();
            let (csv, svg) = (
                format!("track/{patient}.csv"),
                format!("track/{patient}.svg"),
            );
            tracking_export(Some(&est), &truth, &self.path(&csv), &self.path(&svg))?;
            out.record(&csv)?;
            out.record(&svg)?;
        }
        Ok(())
    }

    fn report(&self, out: &mut Artifacts) -> Result<()> {
        let eval = self.require("eval/report.txt", Stage::Eval)?;
        let mut s = String::new();
        let _ = writeln!(s, "configuration hash {}", self.config.hash());
        let _ = writeln!(s, "seed {}\n", self.config.train.seed);
        s.push_str(&self.config.to_text());
        if let Ok(p) = self.require("dataset/manifest.csv", Stage::Segment) {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for r in read_csv(&p)? {
                *counts
                    .entry(r.get(3).unwrap_or("").to_string())
                    .or_default() += 1;
            }
            let _ = writeln!(s, "\nsequences by partition: {counts:?}");
        }
        if let Ok(p) = self.require("model/history.csv", Stage::Train) {
            let rows = read_csv(&p)?;
            let best = rows
                .iter()
                .filter_map(|r| Some((r.get(0)?.to_string(), r.get(2)?.parse::<f64>().ok()?)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((epoch, loss)) = best {
                let _ = writeln!(
                    s,
                    "epochs run {}, best epoch {epoch} (validation MSE {loss:.4})",
                    rows.len()
                );
            }
        }
        s.push('\n');
        s.push_str(&read_to_string(&eval)?);
        out.write("report/summary.txt", s.as_bytes())
    }
}

/// Tracks the artifacts a stage writes, with their digests.
struct Artifacts<'a> {
    root: &'a Path,
    written: BTreeMap<String, String>,
}

impl<'a> Artifacts<'a> {
    fn new(root: &'a Path) -> Self {
        Artifacts {
            root,
            written: BTreeMap::new(),
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        atomic_write(&path, bytes)?;
        self.written.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Registers a file written by someone else.
    fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = read(&self.root.join(rel))?;
        self.written.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn finish(self) -> BTreeMap<String, String> {
        self.written
    }
}

/// Writes a synthetic record in CSV form (helper for the CLI and tests).
pub fn write_synthetic_record(path: &Path, params: &crate::synth::SynthParams) -> Result<()> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("synthetic");
    let rec = crate::synth::generate(params, name)?.record;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    atomic_write(path, record::write_csv_record(&rec).as_bytes())
}
