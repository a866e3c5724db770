//! Error statistics and clinical standards: MAE/RMSE, AAMI, BHS grading,
//! Bland-Altman agreement, Pearson correlation and box-plot statistics.
//!
//! Differences are always `estimate - truth`.

mod report;

pub use report::{tracking_csv, tracking_export, tracking_svg, EvalReport, TypeReport};

use crate::error::{Error, Result};

pub const AAMI_MAX_ABS_ME: f64 = 5.0;
pub const AAMI_MAX_SDE: f64 = 8.0;
pub const BHS_THRESHOLDS: [f64; 3] = [5.0, 10.0, 15.0];
/// z-score of the two-sided 95% limits of agreement.
pub const LOA_Z: f64 = 1.96;

/// Paired estimates and ground truth for one BP type, mmHg.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    estimated: Vec<f64>,
    truth: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(estimated: Vec<f64>, truth: Vec<f64>) -> Result<Self> {
        if estimated.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} estimates for {} ground-truth values",
                estimated.len(),
                truth.len()
            )));
        }
        if let Some(i) = estimated.iter().chain(&truth).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i % estimated.len().max(1)));
        }
        Ok(ErrorSeries { estimated, truth })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn estimated(&self) -> &[f64] {
        &self.estimated
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn differences(&self) -> Vec<f64> {
        self.estimated
            .iter()
            .zip(&self.truth)
            .map(|(z, y)| z - y)
            .collect()
    }

    fn require(&self, n: usize) -> Result<()> {
        match self.len() {
            0 => Err(Error::EmptySeries),
            len if len < n => Err(Error::TooFewValues(format!(
                "{len} pairs, need at least {n}"
            ))),
            _ => Ok(()),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample (N-1) standard deviation.
fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn mae_rmse(series: &ErrorSeries) -> Result<(f64, f64)> {
    series.require(1)?;
    let d = series.differences();
    let mae = d.iter().map(|e| e.abs()).sum::<f64>() / d.len() as f64;
    let rmse = (d.iter().map(|e| e * e).sum::<f64>() / d.len() as f64).sqrt();
    Ok((mae, rmse))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aami {
    pub me: f64,
    pub sde: f64,
    pub pass: bool,
}

impl Aami {
    pub fn from_moments(me: f64, sde: f64) -> Self {
        Aami {
            me,
            sde,
            pass: me.abs() < AAMI_MAX_ABS_ME && sde < AAMI_MAX_SDE,
        }
    }
}

pub fn aami_check(series: &ErrorSeries) -> Result<Aami> {
    series.require(2)?;
    let d = series.differences();
    Ok(Aami::from_moments(mean(&d), sample_sd(&d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BhsGrade {
    A,
    B,
    C,
    Fail,
}

impl BhsGrade {
    /// Minimum cumulative percentages under 5/10/15 mmHg for grades A-C.
    pub const MINIMA: [(BhsGrade, [f64; 3]); 3] = [
        (BhsGrade::A, [60.0, 85.0, 95.0]),
        (BhsGrade::B, [50.0, 75.0, 90.0]),
        (BhsGrade::C, [40.0, 65.0, 85.0]),
    ];

    /// Best grade whose three minima are all met (inclusive).
    pub fn from_percentages(p: [f64; 3]) -> Self {
        Self::MINIMA
            .iter()
            .find(|(_, min)| p.iter().zip(min).all(|(v, m)| v >= m))
            .map_or(BhsGrade::Fail, |(g, _)| *g)
    }
}

impl std::fmt::Display for BhsGrade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BhsGrade::A => "A",
            BhsGrade::B => "B",
            BhsGrade::C => "C",
            BhsGrade::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bhs {
    /// Cumulative percentages of |error| below 5, 10 and 15 mmHg.
    pub percentages: [f64; 3],
    pub grade: BhsGrade,
}

pub fn bhs_grade(series: &ErrorSeries) -> Result<Bhs> {
    series.require(1)?;
    let d = series.differences();
    let n = d.len() as f64;
    let percentages =
        BHS_THRESHOLDS.map(|t| 100.0 * d.iter().filter(|e| e.abs() < t).count() as f64 / n);
    Ok(Bhs {
        percentages,
        grade: BhsGrade::from_percentages(percentages),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltman {
    pub mean_diff: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// Per pair: (mean of estimate and truth, difference).
    pub points: Vec<(f64, f64)>,
}

/// `[mean - 1.96 sd, mean + 1.96 sd]`.
pub fn limits_of_agreement(mean_diff: f64, sd: f64) -> (f64, f64) {
    (mean_diff - LOA_Z * sd, mean_diff + LOA_Z * sd)
}

pub fn bland_altman(series: &ErrorSeries) -> Result<BlandAltman> {
    series.require(2)?;
    let d = series.differences();
    let (mean_diff, sd) = (mean(&d), sample_sd(&d));
    let (loa_low, loa_high) = limits_of_agreement(mean_diff, sd);
    let points = series
        .estimated
        .iter()
        .zip(&series.truth)
        .map(|(z, y)| (0.5 * (z + y), z - y))
        .collect();
    Ok(BlandAltman {
        mean_diff,
        sd,
        loa_low,
        loa_high,
        points,
    })
}

pub fn pearson_r(series: &ErrorSeries) -> Result<f64> {
    series.require(2)?;
    let (z, y) = (&series.estimated, &series.truth);
    let (mz, my) = (mean(z), mean(y));
    let (mut szy, mut szz, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in z.iter().zip(y) {
        let (da, db) = (a - mz, b - my);
        szy += da * db;
        szz += da * da;
        syy += db * db;
    }
    if szz == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((szy / (szz.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// `q1 - 1.5 IQR` and `q3 + 1.5 IQR`.
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Most extreme values inside the fences.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics of `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.len() < 4 {
        return Err(Error::TooFewValues(format!(
            "{} values, box statistics need at least 4",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.75),
    );
    let iqr = q3 - q1;
    let (lower_fence, upper_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = |v: &&f64| **v >= lower_fence && **v <= upper_fence;
    let lower_whisker = *sorted
        .iter()
        .find(inside)
        .expect("median lies inside the fences");
    let upper_whisker = *sorted
        .iter()
        .rev()
        .find(inside)
        .expect("median lies inside the fences");
    let outliers = values
        .iter()
        .copied()
        .filter(|v| *v < lower_fence || *v > upper_fence)
        .collect();
    Ok(BoxStats {
        q1,
        median,
        q3,
        lower_fence,
        upper_fence,
        lower_whisker,
        upper_whisker,
        outliers,
    })
}
