//! Pulse transit time, pulse wave velocity and the Moens-Korteweg pressure
//! relation. Nothing here feeds the learned model; these are reference
//! utilities for sanity-checking signals and generators.

use crate::error::{Error, Result};

/// Landmarks may be at most this far after the R peak.
pub const MAX_PTT_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PttVariant {
    /// Foot of the pulse: the minimum preceding the systolic upstroke.
    Onset,
    /// Steepest point of the upstroke (maximum first difference).
    DerivativePeak,
    /// Systolic apex.
    Peak,
}

/// Landmark times (seconds after the R peak) of the first pulse following it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseLandmarks {
    pub onset: f64,
    pub derivative_peak: f64,
    pub peak: f64,
}

impl PulseLandmarks {
    pub fn get(&self, variant: PttVariant) -> f64 {
        match variant {
            PttVariant::Onset => self.onset,
            PttVariant::DerivativePeak => self.derivative_peak,
            PttVariant::Peak => self.peak,
        }
    }
}

/// All three PTT landmarks of the first pulse after `r_peak_time`.
pub fn pulse_landmarks(r_peak_time: f64, ppg: &[f64], fs: f64) -> Result<PulseLandmarks> {
    if !(fs > 0.0) || !r_peak_time.is_finite() || r_peak_time < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need fs > 0 and a non-negative R-peak time (fs {fs}, R {r_peak_time})"
        )));
    }
    let none = || Error::NoLandmark(r_peak_time);
    let r = (r_peak_time * fs).round() as usize;
    let end = (r + (MAX_PTT_S * fs).round() as usize + 1).min(ppg.len());
    if end < r + 3 {
        return Err(none());
    }
    let w = &ppg[r..end];
    let (lo, hi) = w
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(none());
    }
    // first apex that rises clearly above what precedes it in the window
    let apex = crate::peaks::local_maxima(w)
        .into_iter()
        .find(|&p| {
            let before = w[..p].iter().copied().fold(f64::INFINITY, f64::min);
            w[p] - before >= 0.3 * range
        })
        .ok_or_else(none)?;
    // latest minimum before the apex
    let foot = (0..apex)
        .rev()
        .min_by(|&a, &b| w[a].total_cmp(&w[b]))
        .ok_or_else(none)?;
    let steepest = (foot..apex)
        .max_by(|&a, &b| (w[a + 1] - w[a]).total_cmp(&(w[b + 1] - w[b])))
        .ok_or_else(none)?;

    let offset = r as f64 / fs - r_peak_time;
    let t = |i: f64| i / fs + offset;
    Ok(PulseLandmarks {
        onset: t(foot as f64),
        derivative_peak: t(steepest as f64 + 0.5),
        peak: t(apex as f64),
    })
}

/// PTT from the R peak at `r_peak_time` to the chosen PPG landmark, seconds.
pub fn measure_ptt(r_peak_time: f64, ppg: &[f64], fs: f64, variant: PttVariant) -> Result<f64> {
    Ok(pulse_landmarks(r_peak_time, ppg, fs)?.get(variant))
}

pub fn pwv_from_ptt(distance: f64, ptt: f64) -> Result<f64> {
    if !(distance > 0.0 && ptt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "distance and PTT must be positive (got {distance} m, {ptt} s)"
        )));
    }
    Ok(distance / ptt)
}

/// Vessel parameters of the Moens-Korteweg model with `E = E0 * exp(gamma * P)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselModel {
    pub e0: f64,
    /// 1/mmHg.
    pub gamma: f64,
    /// Wall thickness, m.
    pub h: f64,
    /// Blood density, kg/m^3.
    pub rho: f64,
    /// Arterial diameter, m.
    pub diameter: f64,
    /// Arterial path length, m.
    pub distance: f64,
}

impl VesselModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.e0,
            self.gamma,
            self.h,
            self.rho,
            self.diameter,
            self.distance,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "vessel parameters must be positive and finite: {self:?}"
            )))
        }
    }

    /// Elastic modulus at pressure `p` (mmHg).
    pub fn modulus(&self, p: f64) -> f64 {
        self.e0 * (self.gamma * p).exp()
    }

    /// Forward model: PWV at pressure `p`.
    pub fn pwv_at(&self, p: f64) -> f64 {
        (self.modulus(p) * self.h / (self.rho * self.diameter)).sqrt()
    }
}

/// Pressure (mmHg) that produces wave speed `c` under `model`.
pub fn analytic_bp_from_pwv(c: f64, model: &VesselModel) -> Result<f64> {
    model.validate()?;
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "PWV must be positive, got {c}"
        )));
    }
    let arg = model.rho * model.diameter * c * c / (model.h * model.e0);
    if !(arg > 0.0) {
        return Err(Error::InvalidParameter(
            "logarithm argument is not positive".into(),
        ));
    }
    Ok(arg.ln() / model.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 125.0;

    fn vessel() -> VesselModel {
        VesselModel {
            e0: 1.2e5,
            gamma: 0.017,
            h: 1e-3,
            rho: 1060.0,
            diameter: 4e-3,
            distance: 0.6,
        }
    }

    /// Beats every `period` s starting at `r0`; each pulse has its foot 0.20 s,
    /// steepest rise 0.25 s and apex 0.32 s after its R peak.
    fn pulse_train(r0: f64, period: f64, n: usize) -> Vec<f64> {
        // derivative: triangle 0 -> peak at 0.05 s -> 0 at 0.12 s
        let rise = |tau: f64| -> f64 {
            let (a, b) = (0.05, 0.12);
            if tau <= 0.0 {
                0.0
            } else if tau <= a {
                tau * tau / (2.0 * a)
            } else if tau <= b {
                a / 2.0 + (tau - a) - ((tau - a).powi(2)) / (2.0 * (b - a))
            } else {
                a / 2.0 + (b - a) / 2.0
            }
        };
        let top = rise(1.0);
        (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                let since = (t - r0).rem_euclid(period);
                let tau = since - 0.20;
                if t < r0 || tau <= 0.0 {
                    0.0
                } else if tau <= 0.12 {
                    rise(tau) / top
                } else {
                    (-(tau - 0.12) / 0.12).exp() * (1.0 - tau / (period - 0.2)).max(0.0)
                }
            })
            .collect()
    }

    #[test]
    fn three_landmarks_of_a_known_pulse() {
        let ppg = pulse_train(0.4, 1.0, 1000);
        let tol = 1.0 / FS + 1e-9;
        let l = pulse_landmarks(1.4, &ppg, FS).unwrap();
        assert!((l.onset - 0.20).abs() <= tol, "{l:?}");
        assert!((l.derivative_peak - 0.25).abs() <= tol, "{l:?}");
        assert!((l.peak - 0.32).abs() <= tol, "{l:?}");
        assert_eq!(
            measure_ptt(1.4, &ppg, FS, PttVariant::Peak).unwrap(),
            l.peak
        );
    }

    #[test]
    fn r_peak_after_last_pulse_is_rejected() {
        let ppg = pulse_train(0.4, 1.0, 600);
        assert!(matches!(
            measure_ptt(4.7, &ppg, FS, PttVariant::Onset),
            Err(Error::NoLandmark(_))
        ));
        assert!(measure_ptt(10.0, &ppg, FS, PttVariant::Onset).is_err());
    }

    #[test]
    fn pwv_arithmetic() {
        assert_eq!(pwv_from_ptt(0.5, 0.25).unwrap(), 2.0);
        assert_eq!(pwv_from_ptt(1.0, 0.25).unwrap(), 4.0);
        assert!(pwv_from_ptt(0.5, 0.0).is_err());
        assert!(pwv_from_ptt(-1.0, 0.2).is_err());
    }

    #[test]
    fn moens_korteweg_round_trip() {
        let m = vessel();
        for p in [60.0, 95.0, 120.0, 180.0] {
            let c = m.pwv_at(p);
            assert!((analytic_bp_from_pwv(c, &m).unwrap() - p).abs() <= 1e-9);
        }
    }

    #[test]
    fn sqrt_e_speed_step_adds_one_over_gamma() {
        let m = vessel();
        let p = analytic_bp_from_pwv(5.0, &m).unwrap();
        let q = analytic_bp_from_pwv(5.0 * 0.5f64.exp(), &m).unwrap();
        assert!((q - p - 1.0 / m.gamma).abs() <= 1e-9);
    }

    #[test]
    fn sensitivity_matches_calculus() {
        for gamma in [0.01, 0.02, 0.04] {
            let m = VesselModel { gamma, ..vessel() };
            let c = 6.0;
            let h = 1e-6;
            let fd = (analytic_bp_from_pwv(c + h, &m).unwrap()
                - analytic_bp_from_pwv(c - h, &m).unwrap())
                / (2.0 * h);
            assert!((fd - 2.0 / (gamma * c)).abs() <= 1e-6 * fd.abs());
        }
    }

    #[test]
    fn invalid_vessel_is_rejected() {
        let m = VesselModel { h: 0.0, ..vessel() };
        assert!(analytic_bp_from_pwv(5.0, &m).is_err());
        assert!(analytic_bp_from_pwv(0.0, &vessel()).is_err());
    }
}
