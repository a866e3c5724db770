//! Physiological record ingestion.
//!
//! Two input forms are accepted: a WFDB-style header plus a single
//! interleaved signal stream in format 212 or 16, and a plain CSV file with
//! one sample per row. Both produce a [`PatientRecord`] holding channels in
//! physical units.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// Sampling rate of the source database.
pub const DEFAULT_FS: f64 = 125.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelRole {
    EcgII,
    EcgIII,
    EcgV,
    Ppg,
    Abp,
}

impl ChannelRole {
    pub const ALL: [ChannelRole; 5] = [
        ChannelRole::EcgII,
        ChannelRole::EcgIII,
        ChannelRole::EcgV,
        ChannelRole::Ppg,
        ChannelRole::Abp,
    ];

    /// Maps a WFDB signal label, case-insensitively.
    pub fn from_label(label: &str) -> Option<Self> {
        match label.trim().to_ascii_uppercase().as_str() {
            "II" => Some(ChannelRole::EcgII),
            "III" => Some(ChannelRole::EcgIII),
            "V" => Some(ChannelRole::EcgV),
            "PLETH" => Some(ChannelRole::Ppg),
            "ABP" => Some(ChannelRole::Abp),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ChannelRole::EcgII => "II",
            ChannelRole::EcgIII => "III",
            ChannelRole::EcgV => "V",
            ChannelRole::Ppg => "PLETH",
            ChannelRole::Abp => "ABP",
        }
    }

    pub fn csv_column(self) -> &'static str {
        match self {
            ChannelRole::EcgII => "ecg_ii",
            ChannelRole::EcgIII => "ecg_iii",
            ChannelRole::EcgV => "ecg_v",
            ChannelRole::Ppg => "ppg",
            ChannelRole::Abp => "abp",
        }
    }

    pub fn from_csv_column(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.csv_column().eq_ignore_ascii_case(name.trim()))
    }

    pub fn units(self) -> &'static str {
        match self {
            ChannelRole::EcgII | ChannelRole::EcgIII | ChannelRole::EcgV => "mV",
            ChannelRole::Ppg => "NU",
            ChannelRole::Abp => "mmHg",
        }
    }

    pub fn is_ecg(self) -> bool {
        matches!(
            self,
            ChannelRole::EcgII | ChannelRole::EcgIII | ChannelRole::EcgV
        )
    }
}

impl fmt::Display for ChannelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageFormat {
    /// Pairs of 12-bit two's complement samples packed into 3 bytes.
    Format212,
    /// 16-bit two's complement, little-endian.
    Format16,
    /// Decimal text (CSV input); samples are already physical.
    Text,
}

impl StorageFormat {
    pub fn code(self) -> &'static str {
        match self {
            StorageFormat::Format212 => "212",
            StorageFormat::Format16 => "16",
            StorageFormat::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file: String,
    pub label: String,
    pub format: StorageFormat,
    /// ADC units per physical unit.
    pub gain: f64,
    pub baseline: i32,
    pub adc_zero: i32,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordDescriptor {
    pub record_name: String,
    pub num_signals: usize,
    pub sampling_rate: f64,
    pub num_samples: usize,
    pub signals: Vec<SignalSpec>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientMeta {
    pub age_group: Option<String>,
    pub sex: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub descriptor: RecordDescriptor,
    pub channels: BTreeMap<ChannelRole, Vec<f64>>,
    pub meta: PatientMeta,
}

impl PatientRecord {
    /// Builds a record, checking equal channel lengths and the plausible
    /// ABP range.
    pub fn new(
        descriptor: RecordDescriptor,
        channels: BTreeMap<ChannelRole, Vec<f64>>,
        meta: PatientMeta,
    ) -> Result<Self> {
        if !(descriptor.sampling_rate > 0.0) {
            return Err(Error::InvalidRecord(format!(
                "sampling rate must be > 0, got {}",
                descriptor.sampling_rate
            )));
        }
        let mut len = None;
        for (role, data) in &channels {
            match len {
                None => len = Some(data.len()),
                Some(l) if l != data.len() => {
                    return Err(Error::InvalidRecord(format!(
                        "channel {role} has {} samples, expected {l}",
                        data.len()
                    )))
                }
                _ => {}
            }
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord(format!(
                    "channel {role} has a non-finite sample at {i}"
                )));
            }
        }
        if let Some(abp) = channels.get(&ChannelRole::Abp) {
            if let Some(i) = abp.iter().position(|&v| !(v > 0.0 && v < 300.0)) {
                return Err(Error::InvalidRecord(format!(
                    "ABP sample {i} = {} mmHg outside (0, 300)",
                    abp[i]
                )));
            }
        }
        Ok(PatientRecord {
            descriptor,
            channels,
            meta,
        })
    }

    /// Record of physical-unit channels with no on-disk storage format.
    pub fn from_channels(
        name: &str,
        fs: f64,
        channels: BTreeMap<ChannelRole, Vec<f64>>,
        meta: PatientMeta,
    ) -> Result<Self> {
        let signals: Vec<SignalSpec> = channels
            .keys()
            .map(|&role| SignalSpec {
                file: String::new(),
                label: role.label().to_string(),
                format: StorageFormat::Text,
                gain: 1.0,
                baseline: 0,
                adc_zero: 0,
                units: role.units().to_string(),
            })
            .collect();
        let descriptor = RecordDescriptor {
            record_name: name.to_string(),
            num_signals: signals.len(),
            sampling_rate: fs,
            num_samples: channels.values().next().map_or(0, Vec::len),
            signals,
        };
        Self::new(descriptor, channels, meta)
    }

    pub fn fs(&self) -> f64 {
        self.descriptor.sampling_rate
    }

    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, role: ChannelRole) -> Option<&[f64]> {
        self.channels.get(&role).map(Vec::as_slice)
    }
}

/// A parsed record plus any non-fatal issues met while parsing.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub record: PatientRecord,
    pub warnings: Vec<String>,
}

struct Token<'a> {
    text: &'a str,
    offset: usize,
}

fn tokenize(line: &str, base: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    offset: base + s,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            offset: base + s,
        });
    }
    out
}

fn leading_number(s: &str) -> &str {
    let end = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == 'e'
                || c == 'E'
                || (i == 0 && (c == '-' || c == '+')))
        })
        .map_or(s.len(), |(i, _)| i);
    &s[..end]
}

fn parse_format(tok: &Token<'_>) -> Result<StorageFormat> {
    let digits: String = tok
        .text
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    match digits.as_str() {
        "212" => Ok(StorageFormat::Format212),
        "16" => Ok(StorageFormat::Format16),
        _ => Err(Error::UnsupportedFormat {
            format: tok.text.to_string(),
            offset: tok.offset,
        }),
    }
}

/// Parses a WFDB-style header.
///
/// Signal lines are accepted either in the compact form
/// `file format gain baseline units label` or in the standard WFDB form
/// `file format gain[(baseline)][/units] adcres adczero initval checksum blocksize label`.
/// Comment lines may carry `age: <group>` and `sex: <M|F>`.
pub fn parse_header(text: &str) -> Result<(RecordDescriptor, PatientMeta)> {
    let mut meta = PatientMeta::default();
    let mut lines = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line_offset = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let trimmed = line.trim_start();
        if let Some(comment) = trimmed.strip_prefix('#') {
            parse_meta_comment(comment, &mut meta);
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        lines.push((i + 1, line_offset, line));
    }
    let malformed = |line: usize, offset: usize, reason: &str| Error::MalformedHeader {
        line,
        offset,
        reason: reason.to_string(),
    };

    let &(line_no, line_off, first) = lines
        .first()
        .ok_or_else(|| malformed(1, 0, "empty header"))?;
    let toks = tokenize(first, line_off);
    if toks.len() < 3 {
        return Err(malformed(
            line_no,
            line_off,
            "record line needs name, signal count and fs",
        ));
    }
    let record_name = toks[0].text.split('/').next().unwrap_or("").to_string();
    let num_signals: usize = toks[1]
        .text
        .parse()
        .map_err(|_| malformed(line_no, toks[1].offset, "bad signal count"))?;
    let sampling_rate: f64 = leading_number(toks[2].text)
        .parse()
        .map_err(|_| malformed(line_no, toks[2].offset, "bad sampling frequency"))?;
    let num_samples: usize = match toks.get(3) {
        Some(t) => t
            .text
            .parse()
            .map_err(|_| malformed(line_no, t.offset, "bad sample count"))?,
        None => 0,
    };
    if num_signals == 0 {
        return Err(malformed(
            line_no,
            toks[1].offset,
            "record must have at least one signal",
        ));
    }
    if !(sampling_rate > 0.0) {
        return Err(malformed(
            line_no,
            toks[2].offset,
            "sampling frequency must be > 0",
        ));
    }
    if lines.len() - 1 < num_signals {
        return Err(malformed(
            line_no,
            line_off,
            &format!(
                "declares {num_signals} signals but has {} signal lines",
                lines.len() - 1
            ),
        ));
    }

    let mut signals = Vec::with_capacity(num_signals);
    for &(line_no, line_off, line) in &lines[1..=num_signals] {
        let toks = tokenize(line, line_off);
        if toks.len() < 2 {
            return Err(malformed(
                line_no,
                line_off,
                "signal line needs file and format",
            ));
        }
        let format = parse_format(&toks[1])?;
        let compact = toks.len() == 6
            && toks[2].text.parse::<f64>().is_ok()
            && toks[3].text.parse::<i32>().is_ok()
            && toks[4].text.parse::<f64>().is_err();
        let spec = if compact {
            let gain: f64 = toks[2].text.parse().expect("checked above");
            let baseline: i32 = toks[3].text.parse().expect("checked above");
            SignalSpec {
                file: toks[0].text.to_string(),
                label: toks[5].text.to_string(),
                format,
                gain,
                baseline,
                adc_zero: baseline,
                units: toks[4].text.to_string(),
            }
        } else {
            let (gain, baseline, units) = match toks.get(2) {
                Some(t) => parse_gain_field(t.text)
                    .ok_or_else(|| malformed(line_no, t.offset, "bad gain field"))?,
                None => (200.0, None, String::new()),
            };
            let adc_zero: i32 = match toks.get(4) {
                Some(t) => t
                    .text
                    .parse()
                    .map_err(|_| malformed(line_no, t.offset, "bad ADC zero"))?,
                None => 0,
            };
            let label = if toks.len() > 8 {
                toks[8..]
                    .iter()
                    .map(|t| t.text)
                    .collect::<Vec<_>>()
                    .join(" ")
            } else {
                String::new()
            };
            SignalSpec {
                file: toks[0].text.to_string(),
                label,
                format,
                gain,
                baseline: baseline.unwrap_or(adc_zero),
                adc_zero,
                units,
            }
        };
        if spec.gain == 0.0 || !spec.gain.is_finite() {
            return Err(malformed(line_no, line_off, "gain must be non-zero"));
        }
        signals.push(spec);
    }

    Ok((
        RecordDescriptor {
            record_name,
            num_signals,
            sampling_rate,
            num_samples,
            signals,
        },
        meta,
    ))
}

fn parse_gain_field(field: &str) -> Option<(f64, Option<i32>, String)> {
    let (head, units) = match field.split_once('/') {
        Some((h, u)) => (h, u.to_string()),
        None => (field, String::new()),
    };
    let (gain_text, baseline) = match head.split_once('(') {
        Some((g, rest)) => {
            let b = rest.strip_suffix(')')?.parse().ok()?;
            (g, Some(b))
        }
        None => (head, None),
    };
    let gain: f64 = gain_text.parse().ok()?;
    // WFDB convention: zero gain means uncalibrated, default 200
    let gain = if gain == 0.0 { 200.0 } else { gain };
    Some((gain, baseline, units))
}

fn parse_meta_comment(comment: &str, meta: &mut PatientMeta) {
    let lower = comment.to_ascii_lowercase();
    let value_after = |key: &str| -> Option<String> {
        let pos = lower.find(key)?;
        let rest = comment[pos + key.len()..].trim_start_matches([' ', ':', '=']);
        rest.split_whitespace().next().map(str::to_string)
    };
    if meta.age_group.is_none() {
        meta.age_group = value_after("age");
    }
    if meta.sex.is_none() {
        meta.sex = value_after("sex");
    }
}

/// Unpacks `count` samples from a format-212 byte stream.
pub fn decode_format212(bytes: &[u8], count: usize) -> Result<Vec<i16>> {
    let needed = count / 2 * 3 + if count % 2 == 1 { 2 } else { 0 };
    if bytes.len() < needed {
        return Err(Error::TruncatedSignal {
            needed,
            offset: bytes.len(),
        });
    }
    let sign_extend = |v: u16| ((v << 4) as i16) >> 4;
    let mut out = Vec::with_capacity(count);
    for chunk in bytes[..needed].chunks(3) {
        let first = chunk[0] as u16 | ((chunk[1] as u16 & 0x0f) << 8);
        out.push(sign_extend(first));
        if chunk.len() == 3 && out.len() < count {
            let second = chunk[2] as u16 | ((chunk[1] as u16 & 0xf0) << 4);
            out.push(sign_extend(second));
        }
    }
    Ok(out)
}

/// Packs 12-bit samples into format 212. Values outside [-2048, 2047] are
/// clamped.
pub fn encode_format212(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() / 2 * 3 + 2);
    for pair in samples.chunks(2) {
        let a = (pair[0].clamp(-2048, 2047) as u16) & 0x0fff;
        out.push((a & 0xff) as u8);
        match pair.get(1) {
            Some(&b) => {
                let b = (b.clamp(-2048, 2047) as u16) & 0x0fff;
                out.push(((a >> 8) as u8) | (((b >> 8) as u8) << 4));
                out.push((b & 0xff) as u8);
            }
            None => out.push((a >> 8) as u8),
        }
    }
    out
}

pub fn decode_format16(bytes: &[u8], count: usize) -> Result<Vec<i16>> {
    let needed = count * 2;
    if bytes.len() < needed {
        return Err(Error::TruncatedSignal {
            needed,
            offset: bytes.len(),
        });
    }
    Ok(bytes[..needed]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect())
}

pub fn encode_format16(samples: &[i16]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}

/// Decodes a header and its interleaved signal stream into physical units.
pub fn read_wfdb_record(header_bytes: &[u8], signal_bytes: &[u8]) -> Result<Parsed> {
    let text = std::str::from_utf8(header_bytes).map_err(|e| Error::MalformedHeader {
        line: 0,
        offset: e.valid_up_to(),
        reason: "header is not valid UTF-8".into(),
    })?;
    let (mut descriptor, meta) = parse_header(text)?;
    let format = descriptor.signals[0].format;
    if let Some(other) = descriptor.signals.iter().find(|s| s.format != format) {
        return Err(Error::UnsupportedFormat {
            format: format!("mixed {} and {}", format.code(), other.format.code()),
            offset: 0,
        });
    }
    let nsig = descriptor.num_signals;
    if descriptor.num_samples == 0 {
        let total = match format {
            StorageFormat::Format212 => signal_bytes.len() * 2 / 3,
            _ => signal_bytes.len() / 2,
        };
        descriptor.num_samples = total / nsig;
    }
    let total = descriptor.num_samples * nsig;
    let adc = match format {
        StorageFormat::Format212 => decode_format212(signal_bytes, total)?,
        StorageFormat::Format16 => decode_format16(signal_bytes, total)?,
        StorageFormat::Text => unreachable!("headers never declare text storage"),
    };

    let mut warnings = Vec::new();
    let mut channels = BTreeMap::new();
    for (s, spec) in descriptor.signals.iter().enumerate() {
        let Some(role) = ChannelRole::from_label(&spec.label) else {
            warnings.push(format!(
                "signal {s} label {:?} is not mapped to a channel",
                spec.label
            ));
            continue;
        };
        if channels.contains_key(&role) {
            warnings.push(format!("signal {s} duplicates channel {role}; ignored"));
            continue;
        }
        let data: Vec<f64> = adc[s..]
            .iter()
            .step_by(nsig)
            .map(|&v| (v as f64 - spec.baseline as f64) / spec.gain)
            .collect();
        channels.insert(role, data);
    }
    let record = PatientRecord::new(descriptor, channels, meta)?;
    Ok(Parsed { record, warnings })
}

/// Encodes physical samples as a compact-form header plus signal stream.
/// `gain`/`baseline` apply to every channel.
pub fn write_wfdb_record(
    record: &PatientRecord,
    name: &str,
    format: StorageFormat,
    gain: f64,
    baseline: i32,
) -> Result<(String, Vec<u8>)> {
    if format == StorageFormat::Text {
        return Err(Error::InvalidParameter(
            "text is not a binary format".into(),
        ));
    }
    let roles: Vec<ChannelRole> = record.channels.keys().copied().collect();
    let n = record.len();
    let mut header = format!("{name} {} {} {n}\n", roles.len(), record.fs());
    for role in &roles {
        let _ = writeln!(
            header,
            "{name}.dat {} {gain} {baseline} {} {}",
            format.code(),
            role.units(),
            role.label()
        );
    }
    let (lo, hi) = match format {
        StorageFormat::Format212 => (-2048.0, 2047.0),
        _ => (i16::MIN as f64, i16::MAX as f64),
    };
    let mut adc = Vec::with_capacity(n * roles.len());
    for i in 0..n {
        for role in &roles {
            let v = record.channels[role][i] * gain + baseline as f64;
            adc.push(v.round().clamp(lo, hi) as i16);
        }
    }
    let bytes = match format {
        StorageFormat::Format212 => encode_format212(&adc),
        _ => encode_format16(&adc),
    };
    Ok((header, bytes))
}

/// Reads a CSV record with columns drawn from
/// `{time, ecg_ii, ecg_iii, ecg_v, ppg, abp}`.
pub fn read_csv_record(text: &str, fs: f64) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            column: 0,
            reason: e.to_string(),
        })?
        .clone();

    let mut warnings = Vec::new();
    let mut columns: Vec<Option<ChannelRole>> = Vec::with_capacity(headers.len());
    let time_col = headers.iter().position(|h| h.eq_ignore_ascii_case("time"));
    let mut times: Vec<f64> = Vec::with_capacity(2);
    for (c, name) in headers.iter().enumerate() {
        let role = ChannelRole::from_csv_column(name);
        if role.is_none() && !name.eq_ignore_ascii_case("time") {
            warnings.push(format!(
                "column {} ({name:?}) is not recognized; ignored",
                c + 1
            ));
        }
        if let Some(r) = role {
            if columns.contains(&Some(r)) {
                warnings.push(format!("column {} duplicates {name:?}; ignored", c + 1));
                columns.push(None);
                continue;
            }
        }
        columns.push(role);
    }
    if !columns.iter().flatten().any(|r| r.is_ecg()) {
        return Err(Error::NoEcgChannel);
    }
    if !columns.contains(&Some(ChannelRole::Ppg)) {
        return Err(Error::NoPpgChannel);
    }

    let mut data: BTreeMap<ChannelRole, Vec<f64>> =
        columns.iter().flatten().map(|&r| (r, Vec::new())).collect();
    for result in reader.records() {
        let rec = result.map_err(|e| Error::Csv {
            row: e.position().map_or(0, |p| p.line() as usize),
            column: 0,
            reason: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        if let Some(t) = time_col.filter(|_| times.len() < 2) {
            if let Ok(v) = rec.get(t).unwrap_or("").parse() {
                times.push(v);
            }
        }
        for (c, cell) in rec.iter().enumerate() {
            let Some(role) = columns[c] else { continue };
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                row,
                column: c + 1,
                reason: format!("not a number: {cell:?}"),
            })?;
            data.get_mut(&role).expect("column registered").push(v);
        }
    }

    // the time column is informational, but must agree with the declared rate
    if let [t0, t1] = times[..] {
        let step = t1 - t0;
        if fs > 0.0 && ((step * fs) - 1.0).abs() > 0.01 {
            return Err(Error::InvalidRecord(format!(
                "time step {step} s does not match {fs} Hz"
            )));
        }
    }
    let record = PatientRecord::from_channels("csv", fs, data, PatientMeta::default())?;
    Ok(Parsed { record, warnings })
}

/// Writes a record in the CSV layout accepted by [`read_csv_record`].
pub fn write_csv_record(record: &PatientRecord) -> String {
    let roles: Vec<ChannelRole> = record.channels.keys().copied().collect();
    let mut out = String::from("time");
    for r in &roles {
        out.push(',');
        out.push_str(r.csv_column());
    }
    out.push('\n');
    let fs = record.fs();
    for i in 0..record.len() {
        let _ = write!(out, "{}", i as f64 / fs);
        for r in &roles {
            let _ = write!(out, ",{}", record.channels[r][i]);
        }
        out.push('\n');
    }
    out
}

/// The ECG lead, PPG and (optional) ABP channels used downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTriple {
    pub ecg_lead: ChannelRole,
    pub ecg: Vec<f64>,
    pub ppg: Vec<f64>,
    pub abp: Option<Vec<f64>>,
}

/// Picks the ECG lead by priority II > III > V, plus PPG and ABP.
pub fn select_channels(record: &PatientRecord) -> Result<AlignedTriple> {
    let lead = [ChannelRole::EcgII, ChannelRole::EcgIII, ChannelRole::EcgV]
        .into_iter()
        .find(|r| record.channels.contains_key(r))
        .ok_or(Error::NoEcgChannel)?;
    let ppg = record
        .channel(ChannelRole::Ppg)
        .ok_or(Error::NoPpgChannel)?
        .to_vec();
    Ok(AlignedTriple {
        ecg_lead: lead,
        ecg: record.channels[&lead].clone(),
        ppg,
        abp: record.channel(ChannelRole::Abp).map(<[f64]>::to_vec),
    })
}
