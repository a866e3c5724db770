//! Synthetic ECG/PPG/ABP records with a known pressure-timing relationship.
//!
//! A slow latent state `s(t)` in `[-1, 1]` drives every beat:
//!
//! ```text
//! SBP = 125 + 15 s      DBP = 80 + 8 s
//! RR  = 0.80 - 0.15 s   PTT = 0.25 - 0.08 s     (seconds, R peak to PPG foot)
//! ```
//!
//! so higher pressure means a faster heart rate and a shorter transit time,
//! both of which are visible in an ECG+PPG two-cycle segment. Baseline drift
//! and white noise are added to ECG and PPG; ABP is left clean.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::record::{ChannelRole, PatientMeta, PatientRecord, DEFAULT_FS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub fs: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Scales the latent-driven RR swing (1 = the mapping above).
    pub heart_rate_scale: f64,
    /// Period range (s) of the latent state's components.
    pub latent_period_s: (f64, f64),
    /// Peak amplitude of baseline wander, in units of the pulse height.
    pub drift: f64,
    /// White-noise standard deviation, in units of the pulse height.
    pub noise: f64,
    /// Dicrotic-wave height relative to the systolic wave.
    pub dicrotic: f64,
    /// Width (s) of the PPG systolic wave.
    pub pulse_width_s: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            fs: DEFAULT_FS,
            duration_s: 600.0,
            seed: 0,
            heart_rate_scale: 1.0,
            latent_period_s: (40.0, 180.0),
            drift: 0.3,
            noise: 0.02,
            dicrotic: 0.35,
            pulse_width_s: 0.07,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fs >= 50.0
            && self.duration_s >= 10.0
            && self.heart_rate_scale >= 0.0
            && self.latent_period_s.0 > 0.0
            && self.latent_period_s.1 >= self.latent_period_s.0
            && self.drift >= 0.0
            && self.noise >= 0.0
            && (0.0..1.0).contains(&self.dicrotic)
            && self.pulse_width_s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid synthetic parameters: {self:?}"
            )))
        }
    }
}

pub fn sbp_of(latent: f64) -> f64 {
    125.0 + 15.0 * latent
}

pub fn dbp_of(latent: f64) -> f64 {
    80.0 + 8.0 * latent
}

pub fn rr_of(latent: f64, scale: f64) -> f64 {
    0.80 - 0.15 * scale * latent
}

pub fn ptt_of(latent: f64) -> f64 {
    0.25 - 0.08 * latent
}

/// Ground truth of one generated beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthBeat {
    pub r_time: f64,
    /// PPG pulse foot.
    pub foot_time: f64,
    pub latent: f64,
    pub sbp: f64,
    pub dbp: f64,
}

#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub record: PatientRecord,
    pub beats: Vec<SynthBeat>,
}

fn gauss(t: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((t - center) / width).powi(2)).exp()
}

/// Smooth latent state: three sinusoids with random periods and phases,
/// normalized to `[-1, 1]`.
struct Latent {
    parts: Vec<(f64, f64, f64)>,
}

impl Latent {
    fn new(rng: &mut ChaCha8Rng, periods: (f64, f64)) -> Self {
        let parts: Vec<(f64, f64, f64)> = (0..3)
            .map(|k| {
                let amp = 1.0 / (k + 1) as f64;
                let period = if periods.1 > periods.0 {
                    rng.gen_range(periods.0..=periods.1)
                } else {
                    periods.0
                };
                (amp, 2.0 * PI / period, rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        let total: f64 = parts.iter().map(|p| p.0).sum();
        Latent {
            parts: parts
                .into_iter()
                .map(|(a, w, p)| (a / total, w, p))
                .collect(),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.parts
            .iter()
            .map(|(a, w, p)| a * (w * t + p).sin())
            .sum()
    }
}

/// PPG pulse (peak near 1) `tau` seconds after its foot.
fn ppg_pulse(tau: f64, width: f64, dicrotic: f64) -> f64 {
    if tau < 0.0 {
        return 0.0;
    }
    // 2.5 widths from foot to apex keeps the foot a clean trough
    let apex = 2.5 * width;
    gauss(tau, apex, width) + dicrotic * gauss(tau, apex + 0.25, 0.8 * width)
}

/// ABP shape in `[0, 1]` over one beat of length `period`, starting at the
/// pulse foot.
fn abp_shape(tau: f64, period: f64) -> f64 {
    let rise = 0.12;
    if tau < rise {
        0.5 * (1.0 - (PI * tau / rise).cos())
    } else {
        let fall = (tau - rise) / (period - rise);
        let notch = 0.08 * gauss(tau, rise + 0.22, 0.03);
        ((1.0 - fall) * (-(tau - rise) / 0.35).exp() + notch).clamp(0.0, 1.0)
    }
}

fn ecg_beat(t: f64, r: f64) -> f64 {
    0.12 * gauss(t, r - 0.16, 0.025) - 0.12 * gauss(t, r - 0.03, 0.01) + gauss(t, r, 0.012)
        - 0.25 * gauss(t, r + 0.03, 0.01)
        + 0.3 * gauss(t, r + 0.28, 0.05)
}

pub fn generate(params: &SynthParams, name: &str) -> Result<SynthRecord> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let latent = Latent::new(&mut rng, params.latent_period_s);
    let fs = params.fs;
    let n = (params.duration_s * fs).round() as usize;
    let span = n as f64 / fs;

    let mut beats = Vec::new();
    let mut r = 0.3;
    while r < span + 1.5 {
        let s = latent.at(r);
        beats.push(SynthBeat {
            r_time: r,
            foot_time: r + ptt_of(s),
            latent: s,
            sbp: sbp_of(s),
            dbp: dbp_of(s),
        });
        r += rr_of(s, params.heart_rate_scale);
    }

    let (drift_f1, drift_f2) = (rng.gen_range(0.1..0.3), rng.gen_range(0.02..0.08));
    let (ph1, ph2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let drift = |t: f64| {
        params.drift
            * (0.7 * (2.0 * PI * drift_f1 * t + ph1).sin()
                + 0.3 * (2.0 * PI * drift_f2 * t + ph2).sin())
    };
    let noise = Normal::new(0.0, params.noise).expect("validated noise level");

    let mut ecg = vec![0.0; n];
    let mut ppg = vec![0.0; n];
    let mut abp = vec![0.0; n];
    // every sample is influenced only by beats within a couple of seconds
    let mut first = 0;
    for i in 0..n {
        let t = i as f64 / fs;
        while first + 1 < beats.len() && beats[first + 1].foot_time + 2.0 < t {
            first += 1;
        }
        let mut e = 0.0;
        let mut p = 0.0;
        for b in beats[first..].iter().take_while(|b| b.r_time - 1.0 < t) {
            e += ecg_beat(t, b.r_time);
            p += ppg_pulse(t - b.foot_time, params.pulse_width_s, params.dicrotic);
        }
        // ABP: the beat whose foot most recently passed
        let k = beats.partition_point(|b| b.foot_time <= t);
        abp[i] = if k == 0 {
            beats[0].dbp
        } else {
            let b = &beats[k - 1];
            let next = beats.get(k).unwrap_or(b);
            let period = (next.foot_time - b.foot_time).max(0.3);
            let tau = t - b.foot_time;
            let u = (tau / period).clamp(0.0, 1.0);
            let floor = b.dbp + u * (next.dbp - b.dbp);
            floor + (b.sbp - b.dbp) * abp_shape(tau, period)
        };
        let d = drift(t);
        ecg[i] = e + d + noise.sample(&mut rng);
        ppg[i] = p + 0.8 * d + noise.sample(&mut rng);
    }
    beats.retain(|b| b.r_time < span);

    let mut channels = BTreeMap::new();
    channels.insert(ChannelRole::EcgII, ecg);
    channels.insert(ChannelRole::Ppg, ppg);
    channels.insert(ChannelRole::Abp, abp);
    let record = PatientRecord::from_channels(name, fs, channels, PatientMeta::default())?;
    Ok(SynthRecord { record, beats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physio::{measure_ptt, PttVariant};
    use crate::segmentation::{detect_ppg_peaks, detect_r_peaks, extract_targets};

    fn short() -> SynthParams {
        SynthParams {
            duration_s: 60.0,
            seed: 3,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&short(), "a").unwrap();
        let b = generate(&short(), "a").unwrap();
        assert_eq!(a.record, b.record);
        let c = generate(&SynthParams { seed: 4, ..short() }, "a").unwrap();
        assert_ne!(a.record, c.record);
    }

    #[test]
    fn channels_and_ranges() {
        let s = generate(&short(), "x").unwrap();
        assert_eq!(s.record.len(), 7500);
        let abp = s.record.channel(ChannelRole::Abp).unwrap();
        assert!(abp.iter().all(|&v| v > 60.0 && v < 150.0));
        assert!(s.beats.iter().all(|b| b.latent.abs() <= 1.0 + 1e-12));
        assert!(s.beats.windows(2).all(|w| w[1].r_time > w[0].r_time));
    }

    #[test]
    fn detectors_recover_the_beats() {
        let s = generate(
            &SynthParams {
                drift: 0.0,
                ..short()
            },
            "x",
        )
        .unwrap();
        let fs = s.record.fs();
        let r = detect_r_peaks(s.record.channel(ChannelRole::EcgII).unwrap(), fs).unwrap();
        let matched = s
            .beats
            .iter()
            .filter(|b| r.iter().any(|&p| (p as f64 / fs - b.r_time).abs() <= 0.04))
            .count();
        assert!(matched as f64 >= 0.95 * s.beats.len() as f64);
        let p = detect_ppg_peaks(s.record.channel(ChannelRole::Ppg).unwrap(), fs).unwrap();
        assert!((p.len() as f64 - s.beats.len() as f64).abs() <= 2.0);
    }

    #[test]
    fn physio_transit_time_tracks_the_mapping() {
        let clean = SynthParams {
            drift: 0.0,
            noise: 0.0,
            ..short()
        };
        let s = generate(&clean, "x").unwrap();
        let ppg = s.record.channel(ChannelRole::Ppg).unwrap();
        for b in &s.beats[2..s.beats.len() - 3] {
            let ptt = measure_ptt(b.r_time, ppg, clean.fs, PttVariant::Onset).unwrap();
            assert!(
                (ptt - ptt_of(b.latent)).abs() <= 0.05,
                "{ptt} vs {}",
                ptt_of(b.latent)
            );
        }
    }

    #[test]
    fn abp_extrema_follow_latent() {
        let s = generate(&short(), "x").unwrap();
        let fs = s.record.fs();
        let abp = s.record.channel(ChannelRole::Abp).unwrap();
        for w in s.beats.windows(3).skip(2).take(40) {
            let (a, b) = (
                (w[0].foot_time * fs) as usize,
                (w[2].foot_time * fs) as usize,
            );
            let t = extract_targets(abp, fs, a..b).unwrap();
            let expected_sbp = 0.5 * (w[0].sbp + w[1].sbp);
            let expected_dbp = 0.5 * (w[1].dbp + w[2].dbp);
            assert!((t.sbp - expected_sbp).abs() < 1.5, "{t:?} {expected_sbp}");
            assert!((t.dbp - expected_dbp).abs() < 1.5, "{t:?} {expected_dbp}");
        }
    }
}
