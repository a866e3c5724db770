use std::fmt::Write as _;
use std::path::Path;

use super::{
    aami_check, bhs_grade, bland_altman, box_stats, mae_rmse, pearson_r, BhsGrade, BoxStats,
    ErrorSeries,
};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::segmentation::TargetPair;

/// All statistics for one BP type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub me: f64,
    pub sde: f64,
    pub aami_pass: bool,
    pub bhs_percentages: [f64; 3],
    pub bhs_grade: BhsGrade,
    pub loa_mean: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `None` when either side has zero variance.
    pub pearson_r: Option<f64>,
    /// `None` below four pairs.
    pub box_truth: Option<BoxStats>,
    pub box_estimate: Option<BoxStats>,
}

impl TypeReport {
    pub fn from_series(series: &ErrorSeries) -> Result<Self> {
        let (mae, rmse) = mae_rmse(series)?;
        let aami = aami_check(series)?;
        let bhs = bhs_grade(series)?;
        let ba = bland_altman(series)?;
        let pearson_r = match pearson_r(series) {
            Ok(r) => Some(r),
            Err(Error::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        Ok(TypeReport {
            n: series.len(),
            mae,
            rmse,
            me: aami.me,
            sde: aami.sde,
            aami_pass: aami.pass,
            bhs_percentages: bhs.percentages,
            bhs_grade: bhs.grade,
            loa_mean: ba.mean_diff,
            loa_low: ba.loa_low,
            loa_high: ba.loa_high,
            pearson_r,
            box_truth: box_stats(series.truth()).ok(),
            box_estimate: box_stats(series.estimated()).ok(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sbp: TypeReport,
    pub dbp: TypeReport,
}

impl EvalReport {
    pub fn from_pairs(estimates: &[TargetPair], truth: &[TargetPair]) -> Result<Self> {
        let series = |f: fn(&TargetPair) -> f64| {
            ErrorSeries::new(
                estimates.iter().map(f).collect(),
                truth.iter().map(f).collect(),
            )
        };
        Ok(EvalReport {
            sbp: TypeReport::from_series(&series(|t| t.sbp)?)?,
            dbp: TypeReport::from_series(&series(|t| t.dbp)?)?,
        })
    }

    fn types(&self) -> [(&'static str, &TypeReport); 2] {
        [("SBP", &self.sbp), ("DBP", &self.dbp)]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, r) in self.types() {
            let _ = writeln!(s, "{name} (n = {})", r.n);
            let _ = writeln!(s, "  MAE  {:.4} mmHg   RMSE {:.4} mmHg", r.mae, r.rmse);
            let _ = writeln!(
                s,
                "  ME   {:.4} mmHg   SDE  {:.4} mmHg   AAMI {}",
                r.me,
                r.sde,
                if r.aami_pass { "pass" } else { "fail" }
            );
            let [p5, p10, p15] = r.bhs_percentages;
            let _ = writeln!(
                s,
                "  BHS  <5: {p5:.2}%  <10: {p10:.2}%  <15: {p15:.2}%   grade {}",
                r.bhs_grade
            );
            let _ = writeln!(
                s,
                "  Bland-Altman mean {:.4}, LOA [{:.3}, {:.3}]",
                r.loa_mean, r.loa_low, r.loa_high
            );
            match r.pearson_r {
                Some(v) => {
                    let _ = writeln!(s, "  Pearson r {v:.4}");
                }
                None => {
                    let _ = writeln!(s, "  Pearson r undefined (zero variance)");
                }
            }
            for (label, b) in [("truth", &r.box_truth), ("estimate", &r.box_estimate)] {
                if let Some(b) = b {
                    let _ = writeln!(
                        s,
                        "  box {label:<8} q1 {:.2}  median {:.2}  q3 {:.2}  whiskers [{:.2}, {:.2}]  outliers {}",
                        b.q1,
                        b.median,
                        b.q3,
                        b.lower_whisker,
                        b.upper_whisker,
                        b.outliers.len()
                    );
                }
            }
        }
        s
    }

    /// One row per BP type.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "type,n,mae,rmse,me,sde,aami_pass,bhs_5,bhs_10,bhs_15,bhs_grade,loa_mean,loa_low,loa_high,pearson_r,\
             box_truth_q1,box_truth_median,box_truth_q3,box_truth_outliers,\
             box_est_q1,box_est_median,box_est_q3,box_est_outliers\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        let boxed = |b: &Option<BoxStats>| match b {
            Some(b) => format!("{},{},{},{}", b.q1, b.median, b.q3, b.outliers.len()),
            None => ",,,".to_string(),
        };
        for (name, r) in self.types() {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.mae,
                r.rmse,
                r.me,
                r.sde,
                r.aami_pass,
                r.bhs_percentages[0],
                r.bhs_percentages[1],
                r.bhs_percentages[2],
                r.bhs_grade,
                r.loa_mean,
                r.loa_low,
                r.loa_high,
                opt(r.pearson_r),
                boxed(&r.box_truth),
                boxed(&r.box_estimate)
            );
        }
        s
    }
}

fn check_aligned(estimates: Option<&[TargetPair]>, truth: &[TargetPair]) -> Result<()> {
    match estimates {
        Some(e) if e.len() != truth.len() => Err(Error::ShapeMismatch(format!(
            "{} estimates for {} ground-truth pairs",
            e.len(),
            truth.len()
        ))),
        _ => Ok(()),
    }
}

/// `index,sbp_true,sbp_est,dbp_true,dbp_est`; estimate cells are empty for a
/// truth-only export.
pub fn tracking_csv(estimates: Option<&[TargetPair]>, truth: &[TargetPair]) -> Result<String> {
    check_aligned(estimates, truth)?;
    let mut s = String::from("index,sbp_true,sbp_est,dbp_true,dbp_est\n");
    for (i, t) in truth.iter().enumerate() {
        let (se, de) = match estimates {
            Some(e) => (e[i].sbp.to_string(), e[i].dbp.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(s, "{i},{},{se},{},{de}", t.sbp, t.dbp);
    }
    Ok(s)
}

const SVG_WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN: f64 = 50.0;

fn polyline(values: &[f64], top: f64, lo: f64, hi: f64, color: &str, label: &str) -> String {
    let n = values.len().max(2) as f64 - 1.0;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let inner_h = PANEL_HEIGHT - 2.0 * MARGIN;
    let inner_w = SVG_WIDTH - 2.0 * MARGIN;
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = MARGIN + inner_w * i as f64 / n;
            let y = top + MARGIN + inner_h * (1.0 - (v - lo) / span);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<polyline data-series=\"{label}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        points.join(" ")
    )
}

/// Line chart with one panel per BP type, truth in black and estimates in
/// red.
pub fn tracking_svg(estimates: Option<&[TargetPair]>, truth: &[TargetPair]) -> Result<String> {
    check_aligned(estimates, truth)?;
    let height = 2.0 * PANEL_HEIGHT;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{height}\" viewBox=\"0 0 {SVG_WIDTH} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    type Pick = fn(&TargetPair) -> f64;
    let panels: [(&str, Pick); 2] = [("SBP", |t| t.sbp), ("DBP", |t| t.dbp)];
    for (k, (name, f)) in panels.into_iter().enumerate() {
        let top = k as f64 * PANEL_HEIGHT;
        let t: Vec<f64> = truth.iter().map(f).collect();
        let e: Option<Vec<f64>> = estimates.map(|e| e.iter().map(f).collect());
        let all = t.iter().chain(e.iter().flatten());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        let _ = writeln!(
            s,
            "<text x=\"{MARGIN}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"14\">{name} (mmHg) {lo:.1} - {hi:.1}</text>",
            top + MARGIN - 12.0
        );
        let _ = writeln!(
            s,
            "<rect x=\"{MARGIN}\" y=\"{:.0}\" width=\"{:.0}\" height=\"{:.0}\" fill=\"none\" stroke=\"#999\"/>",
            top + MARGIN,
            SVG_WIDTH - 2.0 * MARGIN,
            PANEL_HEIGHT - 2.0 * MARGIN
        );
        if !t.is_empty() {
            s.push_str(&polyline(&t, top, lo, hi, "black", &format!("{name} true")));
            if let Some(e) = &e {
                s.push_str(&polyline(
                    e,
                    top,
                    lo,
                    hi,
                    "#d62728",
                    &format!("{name} estimate"),
                ));
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the tracking CSV and SVG.
pub fn tracking_export(
    estimates: Option<&[TargetPair]>,
    truth: &[TargetPair],
    csv_path: &Path,
    svg_path: &Path,
) -> Result<()> {
    atomic_write(csv_path, tracking_csv(estimates, truth)?.as_bytes())?;
    atomic_write(svg_path, tracking_svg(estimates, truth)?.as_bytes())
}
