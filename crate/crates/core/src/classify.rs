//! PCO area quantification and treatment classification by area cutoff.
//!
//! Candidate cutoffs are the areas of clinically negative cases under the
//! manual ground truth. Each candidate is scored with a confusion matrix
//! against the clinical labels; the selected operating point maximises recall,
//! then minimises FPR, then maximises precision, then prefers the smallest
//! cutoff.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Roi};
use crate::image::Mask;
use crate::metrics::ConfusionCounts;
use crate::{Error, Result};

/// Which trained model produced a set of predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelSource {
    /// Trained on manual masks (GT1).
    Model1,
    /// Trained on automated masks (GT2).
    Model2,
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelSource::Model1 => "model1",
            ModelSource::Model2 => "model2",
        })
    }
}

/// PCO area of one case as a percentage of the ROI disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub id: String,
    pub area_percent: f64,
    pub source: ModelSource,
}

/// `100 * |mask ∩ disk| / |disk|`.
pub fn area_percent(mask: &Mask, roi: Roi) -> Result<f64> {
    let (h, w) = mask.shape();
    roi.validate(h, w)?;
    let side = 2 * roi.radius;
    let (r0, c0) = (roi.center_row - roi.radius, roi.center_col - roi.radius);
    let (mut disk, mut hit) = (0usize, 0usize);
    for r in r0..r0 + side {
        for c in c0..c0 + side {
            if roi.contains(r, c) {
                disk += 1;
                hit += mask.get(r, c) as usize;
            }
        }
    }
    if disk == 0 {
        return Err(Error::InvalidRoi("ROI disk contains no pixels".into()));
    }
    Ok(100.0 * hit as f64 / disk as f64)
}

/// Sorted, de-duplicated cutoff candidates from GT1-negative areas.
pub fn candidate_cutoffs(gt1_negative_areas: &[f64]) -> Result<Vec<f64>> {
    if gt1_negative_areas.is_empty() {
        return Err(Error::InvalidArgument(
            "no negative cases: nothing to draw cutoff candidates from".into(),
        ));
    }
    if let Some(bad) = gt1_negative_areas
        .iter()
        .find(|v| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidArgument(format!("invalid area value {bad}")));
    }
    let mut c = gt1_negative_areas.to_vec();
    c.sort_by(f64::total_cmp);
    c.dedup();
    Ok(c)
}

/// Evenly spaced candidates `start, start + step, ...` up to `end` inclusive.
pub fn uniform_cutoffs(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bad cutoff grid {start}..{end} step {step}"
        )));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Positive iff the area is strictly greater than the cutoff.
pub fn classify_case(area_percent: f64, cutoff: f64) -> Label {
    if area_percent > cutoff {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// One cutoff with its confusion matrix and derived rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub cutoff: f64,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
}

impl OperatingPoint {
    fn new(cutoff: f64, counts: ConfusionCounts) -> Self {
        Self {
            cutoff,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            fpr: counts.fpr(),
        }
    }
}

/// Operating points ordered by strictly increasing cutoff.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutoffCurve {
    pub points: Vec<OperatingPoint>,
}

impl CutoffCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Scores every candidate cutoff against the clinical labels.
pub fn sweep_cutoffs(
    areas: &[AreaRecord],
    clinical: &BTreeMap<String, Label>,
    candidates: &[f64],
) -> Result<CutoffCurve> {
    if candidates
        .windows(2)
        .any(|w| w[0].total_cmp(&w[1]) != Ordering::Less)
    {
        return Err(Error::InvalidArgument(
            "cutoff candidates must be strictly increasing".into(),
        ));
    }
    let labelled: Vec<(f64, Label)> = areas
        .iter()
        .map(|a| {
            clinical
                .get(&a.id)
                .map(|&l| (a.area_percent, l))
                .ok_or_else(|| Error::MissingLabel(a.id.clone()))
        })
        .collect::<Result<_>>()?;
    let points = candidates
        .iter()
        .map(|&cutoff| {
            let mut counts = ConfusionCounts::default();
            for &(area, actual) in &labelled {
                counts.record(classify_case(area, cutoff), actual);
            }
            OperatingPoint::new(cutoff, counts)
        })
        .collect();
    Ok(CutoffCurve { points })
}

/// Picks the operating point: maximum recall, then minimum FPR, then maximum
/// precision, then smallest cutoff. Undefined rates rank worst.
pub fn select_cutoff(curve: &CutoffCurve) -> Option<OperatingPoint> {
    let worst_high = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
    let worst_low = |v: Option<f64>| v.unwrap_or(f64::INFINITY);

    let mut pool: Vec<&OperatingPoint> = curve.points.iter().collect();
    let best_recall = pool
        .iter()
        .map(|p| worst_high(p.recall))
        .fold(f64::NEG_INFINITY, f64::max);
    pool.retain(|p| worst_high(p.recall) == best_recall);
    let best_fpr = pool
        .iter()
        .map(|p| worst_low(p.fpr))
        .fold(f64::INFINITY, f64::min);
    pool.retain(|p| worst_low(p.fpr) == best_fpr);
    let best_precision = pool
        .iter()
        .map(|p| worst_high(p.precision))
        .fold(f64::NEG_INFINITY, f64::max);
    pool.retain(|p| worst_high(p.precision) == best_precision);
    pool.into_iter()
        .min_by(|a, b| a.cutoff.total_cmp(&b.cutoff))
        .cloned()
}

/// Labels every area record with the given cutoff.
pub fn classify_all(areas: &[AreaRecord], cutoff: f64) -> Vec<(String, Label)> {
    areas
        .iter()
        .map(|a| (a.id.clone(), classify_case(a.area_percent, cutoff)))
        .collect()
}
