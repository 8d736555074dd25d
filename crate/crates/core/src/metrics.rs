//! ROI construction, MAE / mean-uncertainty scores and cohort-level
//! correlation reports.
//!
//! Per exam and region of interest, the mean absolute error between a
//! prediction and its ground truth is paired with the mean of the
//! uncertainty map; Pearson and Kendall correlations of those pairs across
//! a cohort measure how well the uncertainty predicts the error.

use serde::Serialize;

use crate::error::{MafError, Result};
use crate::volume::{absdiff, check_same_dims, Mask3, Volume3};

/// Region of interest within an exam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Roi {
    Healthy,
    Tumor,
}

impl Roi {
    pub const ALL: [Roi; 2] = [Roi::Healthy, Roi::Tumor];

    pub fn label(self) -> &'static str {
        match self {
            Roi::Healthy => "healthy",
            Roi::Tumor => "tumor",
        }
    }
}

impl std::fmt::Display for Roi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Tumor and healthy masks for one exam; disjoint by construction, with
/// the healthy region contained in the brain support.
#[derive(Debug, Clone)]
pub struct RoiPair {
    pub tumor: Mask3,
    pub healthy: Mask3,
}

impl RoiPair {
    pub fn mask(&self, roi: Roi) -> &Mask3 {
        match roi {
            Roi::Healthy => &self.healthy,
            Roi::Tumor => &self.tumor,
        }
    }
}

/// Build ROI masks from a segmentation volume and the input sequences.
///
/// Tumor is every voxel with a positive segmentation label. The brain is the
/// support of the (skull-stripped) input sequences, i.e. voxels where any
/// sequence is positive; healthy is brain minus tumor.
pub fn build_rois(seg: &Volume3, inputs: &[Volume3; 3]) -> Result<RoiPair> {
    let dims = seg.dims();
    for v in inputs {
        check_same_dims(dims, v.dims(), "build_rois")?;
    }
    let brain = Mask3::from_fn(dims, |x, y, z| {
        inputs
            .iter()
            .any(|v| v.valid_at(x, y, z) && v.get(x, y, z) > 0.0)
    })?;
    build_rois_with_brain(seg, &brain)
}

/// Build ROI masks from a segmentation volume and an explicit brain mask.
pub fn build_rois_with_brain(seg: &Volume3, brain: &Mask3) -> Result<RoiPair> {
    let dims = seg.dims();
    check_same_dims(dims, brain.dims(), "build_rois brain mask")?;
    let tumor = Mask3::from_fn(dims, |x, y, z| seg.valid_at(x, y, z) && seg.get(x, y, z) > 0.0)?;
    let healthy = brain.and_not(&tumor)?;
    Ok(RoiPair { tumor, healthy })
}

/// Arithmetic mean of a volume over voxels where both the mask and the
/// volume's validity hold. Errors when that intersection is empty.
pub fn masked_mean(v: &Volume3, m: &Mask3) -> Result<f64> {
    check_same_dims(v.dims(), m.dims(), "masked_mean")?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, &inside) in m.bits().iter().enumerate() {
        if inside && v.valid_at_index(i) {
            sum += v.data()[i] as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MafError::Degenerate(
            "masked_mean: no valid voxels under the mask".into(),
        ));
    }
    Ok(sum / count as f64)
}

fn check_series(xs: &[f64], ys: &[f64], what: &str) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(MafError::Shape(format!(
            "{what}: series lengths {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(MafError::Parameter(format!(
            "{what}: need at least 2 points, got {}",
            xs.len()
        )));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !v.is_finite()) {
        return Err(MafError::Parameter(format!(
            "{what}: non-finite value {v} in input"
        )));
    }
    Ok(())
}

/// Pearson product-moment correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys, "pearson")?;
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MafError::Degenerate(
            "pearson: zero variance in input series".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Kendall rank correlation, tau-b (tie corrected).
///
/// Counts concordant minus discordant pairs via a sort-and-merge pass and
/// normalizes by `sqrt((n0 - n1)(n0 - n2))`, where `n0 = n(n-1)/2` and
/// `n1`/`n2` are the tied-pair counts of either series.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys, "kendall_tau")?;
    let n = xs.len();

    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;

    // Tie counts: n1 over x, n3 over joint (x, y) runs.
    let mut n1 = 0u64;
    let mut n3 = 0u64;
    let mut run_x = 1u64;
    let mut run_xy = 1u64;
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                n3 += run_xy * (run_xy - 1) / 2;
                run_xy = 1;
            }
        } else {
            n1 += run_x * (run_x - 1) / 2;
            run_x = 1;
            n3 += run_xy * (run_xy - 1) / 2;
            run_xy = 1;
        }
    }
    n1 += run_x * (run_x - 1) / 2;
    n3 += run_xy * (run_xy - 1) / 2;

    // Discordant pairs are inversions of y once sorted by x.
    let mut ys_by_x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = sort_counting_inversions(&mut ys_by_x);

    let mut n2 = 0u64;
    let mut run_y = 1u64;
    for i in 1..n {
        if ys_by_x[i] == ys_by_x[i - 1] {
            run_y += 1;
        } else {
            n2 += run_y * (run_y - 1) / 2;
            run_y = 1;
        }
    }
    n2 += run_y * (run_y - 1) / 2;

    if n0 == n1 || n0 == n2 {
        return Err(MafError::Degenerate(
            "kendall_tau: all values tied in one series".into(),
        ));
    }

    let concordant_minus_discordant =
        n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(concordant_minus_discordant as f64 / ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt())
}

/// Bottom-up merge sort returning the number of strict inversions.
fn sort_counting_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    let mut buf = values.to_vec();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo + width < n {
            let mid = lo + width;
            let hi = (mid + width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if values[i] <= values[j] {
                    buf[k] = values[i];
                    i += 1;
                } else {
                    buf[k] = values[j];
                    j += 1;
                    swaps += (mid - i) as u64;
                }
                k += 1;
            }
            while i < mid {
                buf[k] = values[i];
                i += 1;
                k += 1;
            }
            while j < hi {
                buf[k] = values[j];
                j += 1;
                k += 1;
            }
            values[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    swaps
}

/// Ordinary least-squares fit of `y` on `x`; `None` when `x` is constant.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, mean_y - slope * mean_x))
}

/// One (case, ROI) sample in the cohort scatter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub case_id: String,
    pub roi: Roi,
    pub mae: f64,
    pub mu: f64,
}

/// Inputs for one cohort case.
pub struct EvalCase {
    pub case_id: String,
    pub prediction: Volume3,
    pub ground_truth: Volume3,
    pub uncertainty: Volume3,
    pub rois: RoiPair,
}

/// Correlation summary for one ROI; `None` marks undefined values
/// (fewer than two usable cases, or a degenerate series).
#[derive(Debug, Clone, Serialize)]
pub struct RoiSummary {
    pub n: usize,
    pub pearson: Option<f64>,
    pub kendall: Option<f64>,
    pub ols_slope: Option<f64>,
    pub ols_intercept: Option<f64>,
}

/// Cohort evaluation output: the scatter records, per-ROI summaries and
/// any per-case warnings.
#[derive(Debug, Clone, Serialize)]
pub struct CohortReport {
    pub method: String,
    pub healthy: RoiSummary,
    pub tumor: RoiSummary,
    #[serde(skip)]
    pub records: Vec<EvalRecord>,
    pub warnings: Vec<String>,
}

impl CohortReport {
    pub fn summary(&self, roi: Roi) -> &RoiSummary {
        match roi {
            Roi::Healthy => &self.healthy,
            Roi::Tumor => &self.tumor,
        }
    }

    /// Scatter records as CSV (`case_id,roi,mae,mu`).
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["case_id", "roi", "mae", "mu"])
            .and_then(|_| {
                for r in &self.records {
                    w.write_record([
                        r.case_id.as_str(),
                        r.roi.label(),
                        &format!("{:.17e}", r.mae),
                        &format!("{:.17e}", r.mu),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })
            .map_err(|e| MafError::Format {
                path: "<csv>".into(),
                reason: e.to_string(),
            })
    }

    /// Summary JSON: `{method, healthy: {...}, tumor: {...}, warnings}`.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Compute per-case, per-ROI MAE and mean-uncertainty records and the
/// cohort-level correlation summaries.
///
/// Cases whose (mask, validity) intersection is empty for a ROI are skipped
/// for that ROI with a warning; a ROI with fewer than two usable cases gets
/// undefined correlations rather than an error.
pub fn evaluate_cohort(cases: &[EvalCase], method: &str) -> Result<CohortReport> {
    if cases.is_empty() {
        return Err(MafError::Parameter("cohort is empty".into()));
    }

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut series: [(Vec<f64>, Vec<f64>); 2] = [(vec![], vec![]), (vec![], vec![])];

    for case in cases {
        let error_map = match absdiff(&case.prediction, &case.ground_truth) {
            Ok(v) => v,
            Err(e) => {
                warnings.push(format!("case {}: skipped ({e})", case.case_id));
                continue;
            }
        };
        for (slot, roi) in Roi::ALL.iter().enumerate() {
            let mask = case.rois.mask(*roi);
            let mae = masked_mean(&error_map, mask);
            let mu = masked_mean(&case.uncertainty, mask);
            match (mae, mu) {
                (Ok(mae), Ok(mu)) => {
                    records.push(EvalRecord {
                        case_id: case.case_id.clone(),
                        roi: *roi,
                        mae,
                        mu,
                    });
                    series[slot].0.push(mu);
                    series[slot].1.push(mae);
                }
                (Err(e), _) | (_, Err(e)) => {
                    warnings.push(format!("case {} {roi}: skipped ({e})", case.case_id));
                }
            }
        }
    }

    let summarize = |(mus, maes): &(Vec<f64>, Vec<f64>)| -> RoiSummary {
        let n = mus.len();
        if n < 2 {
            return RoiSummary {
                n,
                pearson: None,
                kendall: None,
                ols_slope: None,
                ols_intercept: None,
            };
        }
        let fit = ols_fit(mus, maes);
        RoiSummary {
            n,
            pearson: pearson(maes, mus).ok(),
            kendall: kendall_tau(maes, mus).ok(),
            ols_slope: fit.map(|f| f.0),
            ols_intercept: fit.map(|f| f.1),
        }
    };

    Ok(CohortReport {
        method: method.to_string(),
        healthy: summarize(&series[0]),
        tumor: summarize(&series[1]),
        records,
        warnings,
    })
}
