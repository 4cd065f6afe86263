//! PR/ROC curve export and the model-vs-model area scatterplot.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pco_core::classify::{classify_case, AreaRecord, CutoffCurve, ModelSource, OperatingPoint};
use pco_core::dataset::Label;
use pco_core::metrics::{fmt_metric, ConfusionCounts};

use crate::plot::{self, ScatterPoint, Series, PALETTE};

pub const CURVE_HEADER: [&str; 9] = [
    "cutoff",
    "tp",
    "fp",
    "fn",
    "tn",
    "precision",
    "recall",
    "fpr",
    "selected",
];

/// A model's cutoff sweep together with the chosen operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCurve {
    pub model: ModelSource,
    pub curve: CutoffCurve,
    pub selected: Option<f64>,
}

/// Files written by [`emit_curves`].
#[derive(Clone, Debug, PartialEq)]
pub struct CurveFiles {
    pub csvs: Vec<PathBuf>,
    pub pr_plot: PathBuf,
    pub roc_plot: PathBuf,
}

pub fn curve_csv_path(dir: &Path, model: ModelSource) -> PathBuf {
    dir.join(format!("curve_{model}.csv"))
}

/// Writes one CSV per model plus `pr.svg` and `roc.svg` overlaying all models.
pub fn emit_curves(curves: &[ModelCurve], dir: &Path) -> Result<CurveFiles> {
    ensure!(!curves.is_empty(), "no curves to emit");
    for c in curves {
        ensure!(!c.curve.is_empty(), "curve for {} is empty", c.model);
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csvs = Vec::new();
    for c in curves {
        let path = curve_csv_path(dir, c.model);
        write_curve_csv(&path, c)?;
        csvs.push(path);
    }
    let pr_plot = dir.join("pr.svg");
    let roc_plot = dir.join("roc.svg");
    write_text(&pr_plot, &pr_svg(curves))?;
    write_text(&roc_plot, &roc_svg(curves))?;
    Ok(CurveFiles {
        csvs,
        pr_plot,
        roc_plot,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_curve_csv(path: &Path, c: &ModelCurve) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(CURVE_HEADER)?;
    for p in &c.curve.points {
        let n = p.counts;
        w.write_record([
            p.cutoff.to_string(),
            n.tp.to_string(),
            n.fp.to_string(),
            n.fn_.to_string(),
            n.tn.to_string(),
            fmt_metric(p.precision),
            fmt_metric(p.recall),
            fmt_metric(p.fpr),
            (Some(p.cutoff) == c.selected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a curve CSV back. Rates are recomputed from the counts, so the
/// result is exactly the curve that was written.
pub fn read_curve_csv(path: &Path, model: ModelSource) -> Result<ModelCurve> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    ensure!(
        header == CURVE_HEADER,
        "{}: unexpected header {header:?}",
        path.display()
    );
    let mut points = Vec::new();
    let mut selected = None;
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let num = |j: usize| -> Result<usize> {
            row[j].parse().with_context(|| {
                format!("{} row {}: bad count `{}`", path.display(), i + 1, &row[j])
            })
        };
        let cutoff: f64 = row[0].parse().with_context(|| {
            format!("{} row {}: bad cutoff `{}`", path.display(), i + 1, &row[0])
        })?;
        let counts = ConfusionCounts::new(num(1)?, num(2)?, num(3)?, num(4)?);
        if &row[8] == "true" {
            selected = Some(cutoff);
        }
        points.push(OperatingPoint {
            cutoff,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            fpr: counts.fpr(),
        });
    }
    Ok(ModelCurve {
        model,
        curve: CutoffCurve { points },
        selected,
    })
}

fn series(curves: &[ModelCurve], axes: fn(&OperatingPoint) -> Option<(f64, f64)>) -> Vec<Series> {
    curves
        .iter()
        .enumerate()
        .map(|(i, c)| Series {
            name: model_title(c.model).to_string(),
            color: PALETTE[i % PALETTE.len()].to_string(),
            points: c.curve.points.iter().filter_map(axes).collect(),
            highlight: c
                .selected
                .and_then(|s| c.curve.points.iter().find(|p| p.cutoff == s))
                .and_then(axes),
        })
        .collect()
}

pub fn pr_svg(curves: &[ModelCurve]) -> String {
    let s = series(curves, |p| Some((p.recall?, p.precision?)));
    plot::line_plot("Precision-recall", "Recall", "Precision", &s)
}

pub fn roc_svg(curves: &[ModelCurve]) -> String {
    let s = series(curves, |p| Some((p.fpr?, p.recall?)));
    plot::line_plot("ROC", "False positive rate", "True positive rate", &s)
}

pub fn model_title(m: ModelSource) -> &'static str {
    match m {
        ModelSource::Model1 => "Model 1 (GT1)",
        ModelSource::Model2 => "Model 2 (GT2)",
    }
}

/// One row of the scatter CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub id: String,
    pub label: Option<Label>,
    pub model1_area: f64,
    pub model2_area: f64,
    pub model1_pred: Label,
    pub model2_pred: Label,
    /// The two models classify the case differently.
    pub disagree: bool,
    /// At least one model misclassifies a labelled case.
    pub misclassified: bool,
}

pub const SCATTER_HEADER: [&str; 8] = [
    "id",
    "label",
    "model1_area",
    "model2_area",
    "model1_pred",
    "model2_pred",
    "disagree",
    "misclassified",
];

/// Pairs the two models' areas by id and classifies each at its cutoff.
pub fn scatter_rows(
    m1: &[AreaRecord],
    m2: &[AreaRecord],
    labels: &BTreeMap<String, Label>,
    cutoffs: (f64, f64),
) -> Result<Vec<ScatterRow>> {
    let a1: BTreeMap<&str, f64> = m1.iter().map(|a| (a.id.as_str(), a.area_percent)).collect();
    let a2: BTreeMap<&str, f64> = m2.iter().map(|a| (a.id.as_str(), a.area_percent)).collect();
    ensure!(
        a1.len() == m1.len() && a2.len() == m2.len(),
        "duplicate ids in area records"
    );
    let only1: Vec<&str> = a1
        .keys()
        .filter(|k| !a2.contains_key(*k))
        .copied()
        .collect();
    let only2: Vec<&str> = a2
        .keys()
        .filter(|k| !a1.contains_key(*k))
        .copied()
        .collect();
    if !only1.is_empty() || !only2.is_empty() {
        bail!(
            "area records do not match: only in model1 {:?}, only in model2 {:?}",
            only1,
            only2
        );
    }
    Ok(a1
        .iter()
        .map(|(&id, &x)| {
            let y = a2[id];
            let p1 = classify_case(x, cutoffs.0);
            let p2 = classify_case(y, cutoffs.1);
            let label = labels.get(id).copied();
            ScatterRow {
                id: id.to_string(),
                label,
                model1_area: x,
                model2_area: y,
                model1_pred: p1,
                model2_pred: p2,
                disagree: p1 != p2,
                misclassified: label.is_some_and(|l| l != p1 || l != p2),
            }
        })
        .collect())
}

/// Writes `scatter.csv` and `scatter.svg` into `dir`; returns the rows.
pub fn emit_scatter(
    m1: &[AreaRecord],
    m2: &[AreaRecord],
    labels: &BTreeMap<String, Label>,
    cutoffs: (f64, f64),
    dir: &Path,
) -> Result<Vec<ScatterRow>> {
    let rows = scatter_rows(m1, m2, labels, cutoffs)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("scatter.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(SCATTER_HEADER)?;
    for r in &rows {
        w.write_record([
            r.id.clone(),
            r.label.map_or("n/a".into(), |l| l.to_string()),
            r.model1_area.to_string(),
            r.model2_area.to_string(),
            r.model1_pred.to_string(),
            r.model2_pred.to_string(),
            r.disagree.to_string(),
            r.misclassified.to_string(),
        ])?;
    }
    w.flush()?;

    let color = |l: Option<Label>| match l {
        Some(Label::Positive) => PALETTE[1],
        Some(Label::Negative) => PALETTE[0],
        None => "#7f7f7f",
    };
    let points: Vec<ScatterPoint> = rows
        .iter()
        .map(|r| ScatterPoint {
            x: r.model1_area,
            y: r.model2_area,
            color: color(r.label).to_string(),
            marked: r.misclassified,
        })
        .collect();
    let legend = vec![
        ("clinically positive".to_string(), PALETTE[1].to_string()),
        ("clinically negative".to_string(), PALETTE[0].to_string()),
    ];
    let svg = plot::scatter_plot(
        "PCO area per image (ringed: misclassified)",
        "Model 1 area (%)",
        "Model 2 area (%)",
        &points,
        &legend,
    );
    write_text(&dir.join("scatter.svg"), &svg)?;
    Ok(rows)
}
