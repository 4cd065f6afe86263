//! Experiment stages. Each stage persists its outputs under the run directory
//! and later stages read them back, so any stage can be rerun on its own.
//!
//! Layout:
//!
//! ```text
//! out/dataset/                  synthetic images, GT1 masks, manifest.json
//! out/gt2_masks/<id>.png        automated ground truth (ROI crop, network size)
//! out/<gt>/fold<i>/             checkpoint.bin, history.csv, fold.json, preds/<id>.png
//! out/report/tables/            segmentation_folds.csv, segmentation_summary.csv,
//!                               areas.csv, cutoffs.csv, classification.csv
//! out/report/curves/            curve_model{1,2}.csv, pr.svg, roc.svg
//! out/report/scatter/           scatter.csv, scatter.svg
//! out/report/report.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pco_core::augment::augment_stream;
use pco_core::classify::{
    area_percent, candidate_cutoffs, classify_all, select_cutoff, sweep_cutoffs, AreaRecord,
    ModelSource,
};
use pco_core::dataset::{
    crop_mask, crop_roi, make_stratified_folds, DatasetManifest, FoldPlan, Label, Roi,
};
use pco_core::groundtruth::{generate_gt2_stages, load_manual_mask};
use pco_core::metrics::{
    classification_metrics, confusion, fmt_metric, ConfusionCounts, SegmentationScores,
};
use pco_core::synth::{synthesize_dataset, write_dataset, DatasetSynthSpec};
use pco_core::{GrayImage, Mask, MaskSource};
use pco_unet::{build_unet, history_csv, predict_model, train_model, CheckpointRecord};
use serde::{Deserialize, Serialize};

use crate::config::{GtSource, RunConfig};
use crate::curves::{self, ModelCurve};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Paths of the run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn gt2_masks(&self) -> PathBuf {
        self.root.join("gt2_masks")
    }

    pub fn fold(&self, gt: GtSource, fold: usize) -> PathBuf {
        self.root.join(gt.dir_name()).join(format!("fold{fold}"))
    }

    pub fn checkpoint(&self, gt: GtSource, fold: usize) -> PathBuf {
        self.fold(gt, fold).join(CHECKPOINT_FILE)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn tables(&self) -> PathBuf {
        self.report().join("tables")
    }

    pub fn curves(&self) -> PathBuf {
        self.report().join("curves")
    }

    pub fn scatter(&self) -> PathBuf {
        self.report().join("scatter")
    }
}

/// One case after ROI crop and resizing to the network input size.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub label: Option<Label>,
    pub image: GrayImage,
    pub gt1: Option<Mask>,
    pub gt2: Mask,
}

impl Case {
    pub fn truth(&self, gt: GtSource) -> Result<&Mask> {
        match gt {
            GtSource::Gt1 => self
                .gt1
                .as_ref()
                .with_context(|| format!("case `{}` has no GT1 mask", self.id)),
            GtSource::Gt2 => Ok(&self.gt2),
        }
    }
}

/// Cases and fold plan shared by the stages.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub cases: Vec<Case>,
    pub plan: FoldPlan,
    index: BTreeMap<String, usize>,
}

impl Prepared {
    pub fn case(&self, id: &str) -> Result<&Case> {
        self.index
            .get(id)
            .map(|&i| &self.cases[i])
            .with_context(|| format!("unknown case `{id}`"))
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct SynthStamp {
    seed: u64,
    spec: DatasetSynthSpec,
}

/// Writes the synthetic dataset unless an identical one is already on disk.
pub fn synth(cfg: &RunConfig) -> Result<DatasetManifest> {
    let Some(spec) = &cfg.dataset.synth else {
        bail!("the config reads an existing manifest; there is nothing to synthesize");
    };
    let dir = Layout::new(&cfg.out).dataset();
    let stamp = SynthStamp {
        seed: cfg.derived_seed("synth", 0),
        spec: spec.clone(),
    };
    let stamp_path = dir.join("synth.json");
    let manifest_path = dir.join("manifest.json");
    if manifest_path.is_file() {
        if let Ok(text) = fs::read_to_string(&stamp_path) {
            if serde_json::from_str::<SynthStamp>(&text).is_ok_and(|s| s == stamp) {
                return Ok(DatasetManifest::load(&manifest_path)?);
            }
        }
    }
    log::info!("synthesizing {} eyes into {}", spec.count, dir.display());
    let cases = synthesize_dataset(spec, stamp.seed)?;
    for sub in ["images", "gt1"] {
        fs::create_dir_all(dir.join(sub))
            .with_context(|| format!("creating {}", dir.join(sub).display()))?;
    }
    let manifest = write_dataset(&dir, &cases)?;
    fs::write(&stamp_path, serde_json::to_string_pretty(&stamp)? + "\n")
        .with_context(|| format!("writing {}", stamp_path.display()))?;
    Ok(manifest)
}

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    match &cfg.dataset.manifest {
        Some(path) => Ok(DatasetManifest::load(path)?),
        None => synth(cfg),
    }
}

/// Loads every active case, crops the ROI, resizes to the input size and
/// derives the GT2 mask. Also draws the fold plan.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let manifest = manifest(cfg)?;
    let s = cfg.unet.input_size;
    let mut cases = Vec::new();
    for item in manifest.active() {
        let ctx = || format!("preparing case `{}`", item.id);
        let full = manifest.load_image(item).with_context(ctx)?;
        let crop = crop_roi(&full).with_context(ctx)?;
        let gt1 = match &item.gt1 {
            Some(p) => {
                let m = load_manual_mask(manifest.resolve(p), full.pixels()).with_context(ctx)?;
                Some(
                    crop_mask(&m, full.roi())
                        .with_context(ctx)?
                        .resize_nearest(s, s),
                )
            }
            None => None,
        };
        let gt2 = match &item.gt2 {
            Some(p) => {
                let m = Mask::read_png(manifest.resolve(p), MaskSource::Gt2).with_context(ctx)?;
                crop_mask(&m, full.roi()).with_context(ctx)?
            }
            None => {
                let seed = cfg.derived_seed(&format!("gt2/{}", item.id), 0);
                generate_gt2_stages(&crop, &cfg.kmeans, seed)
                    .with_context(ctx)?
                    .closed
            }
        };
        cases.push(Case {
            id: item.id.clone(),
            label: item.label,
            image: crop.pixels().resize_bilinear(s, s),
            gt1,
            gt2: gt2.resize_nearest(s, s),
        });
    }
    let labelled: Vec<(String, Option<Label>)> =
        cases.iter().map(|c| (c.id.clone(), c.label)).collect();
    let plan = make_stratified_folds(&labelled, cfg.folds.k, cfg.derived_seed("folds", 0))?;
    let index = cases
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.clone(), i))
        .collect();
    Ok(Prepared { cases, plan, index })
}

/// Writes the GT2 masks as PNG.
pub fn write_gt2(cfg: &RunConfig, prep: &Prepared) -> Result<PathBuf> {
    let dir = Layout::new(&cfg.out).gt2_masks();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for c in &prep.cases {
        c.gt2.write_png(dir.join(format!("{}.png", c.id)))?;
    }
    Ok(dir)
}

/// What one training run leaves behind in `fold.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub gt: GtSource,
    pub fold: usize,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub valid_scores: SegmentationScores,
}

fn pairs(prep: &Prepared, ids: &[String], gt: GtSource) -> Result<Vec<(GrayImage, Mask)>> {
    ids.iter()
        .map(|id| {
            let c = prep.case(id)?;
            Ok((c.image.clone(), c.truth(gt)?.clone()))
        })
        .collect()
}

/// Trains one fold, saves checkpoint and history and predicts the test fold.
pub fn train_fold(
    cfg: &RunConfig,
    prep: &Prepared,
    gt: GtSource,
    fold: usize,
) -> Result<FoldSummary> {
    ensure!(
        fold < prep.plan.k,
        "fold {fold} out of range 0..{}",
        prep.plan.k
    );
    let split = prep.plan.iteration(fold);
    let train = pairs(prep, &split.train, gt)?;
    let valid = pairs(prep, &split.valid, gt)?;
    let tc = &cfg.train;
    let stream_seed = cfg.derived_seed(&format!("augment/{gt}/{}", tc.seed), fold as u64);
    let stream = augment_stream(
        &train,
        &cfg.augment,
        tc.epochs,
        tc.steps_per_epoch,
        tc.batch_size,
        stream_seed,
    )?;
    let model = build_unet(
        cfg.unet,
        cfg.derived_seed(&format!("init/{gt}/{}", tc.seed), fold as u64),
    )?;
    log::info!(
        "training {gt} fold {fold}: {} train, {} valid, {} test",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    let ckpt = train_model(model, stream, &valid, tc)?;

    let dir = Layout::new(&cfg.out).fold(gt, fold);
    let preds_dir = dir.join("preds");
    fs::create_dir_all(&preds_dir).with_context(|| format!("creating {}", preds_dir.display()))?;
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join("history.csv"), &history_csv(&ckpt.history))?;
    let test_images: Vec<GrayImage> = split
        .test
        .iter()
        .map(|id| Ok(prep.case(id)?.image.clone()))
        .collect::<Result<_>>()?;
    for (id, mask) in split
        .test
        .iter()
        .zip(predict_model(&ckpt.model, &test_images)?)
    {
        mask.write_png(preds_dir.join(format!("{id}.png")))?;
    }
    let summary = FoldSummary {
        gt,
        fold,
        train: split.train.clone(),
        valid: split.valid.clone(),
        test: split.test.clone(),
        best_epoch: ckpt.epoch,
        epochs_run: ckpt.history.len(),
        valid_scores: ckpt.valid,
    };
    write_file(
        &dir.join("fold.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    Ok(summary)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_fold(cfg: &RunConfig, gt: GtSource, fold: usize) -> Result<FoldSummary> {
    let layout = Layout::new(&cfg.out);
    let path = layout.fold(gt, fold).join("fold.json");
    let text = fs::read_to_string(&path).with_context(|| {
        format!(
            "reading {} (has `train --gt {gt} --fold {fold}` run?)",
            path.display()
        )
    })?;
    let s: FoldSummary =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(
        layout.checkpoint(gt, fold).is_file(),
        "missing checkpoint {}",
        layout.checkpoint(gt, fold).display()
    );
    Ok(s)
}

/// Per-fold segmentation scores; test scores are against the ground truth
/// the model was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRow {
    pub gt: GtSource,
    pub fold: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub valid: SegmentationScores,
    pub test: SegmentationScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub gt: GtSource,
    pub folds: usize,
    pub mean_valid: SegmentationScores,
    pub mean_test: SegmentationScores,
}

/// Area of every case under each available mask source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub id: String,
    pub label: Option<Label>,
    pub fold: usize,
    pub gt1: Option<f64>,
    pub gt2: Option<f64>,
    pub model1: Option<f64>,
    pub model2: Option<f64>,
}

impl AreaRow {
    pub fn model(&self, m: ModelSource) -> Option<f64> {
        match m {
            ModelSource::Model1 => self.model1,
            ModelSource::Model2 => self.model2,
        }
    }
}

const SEG_HEADER: [&str; 13] = [
    "gt",
    "fold",
    "n_train",
    "n_valid",
    "n_test",
    "best_epoch",
    "epochs_run",
    "valid_dice",
    "valid_iou",
    "valid_accuracy",
    "test_dice",
    "test_iou",
    "test_accuracy",
];
const SUMMARY_HEADER: [&str; 8] = [
    "gt",
    "folds",
    "mean_valid_dice",
    "mean_valid_iou",
    "mean_valid_accuracy",
    "mean_test_dice",
    "mean_test_iou",
    "mean_test_accuracy",
];
const AREA_HEADER: [&str; 7] = [
    "id",
    "label",
    "fold",
    "gt1_area",
    "gt2_area",
    "model1_area",
    "model2_area",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "n/a" {
        return Ok(None);
    }
    Ok(Some(
        s.parse().with_context(|| format!("bad number `{s}`"))?,
    ))
}

fn scores_cells(s: &SegmentationScores) -> [String; 3] {
    [
        s.dice.to_string(),
        s.iou.to_string(),
        s.accuracy.to_string(),
    ]
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn csv_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let got: Vec<&str> = r.headers()?.iter().collect();
    ensure!(
        got == header,
        "{}: unexpected header {got:?}",
        path.display()
    );
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

/// Output of the evaluate stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub folds: Vec<SegmentationRow>,
    pub summary: Vec<SegmentationSummary>,
    pub areas: Vec<AreaRow>,
}

/// Scores the saved test predictions and computes per-case areas.
pub fn evaluate(cfg: &RunConfig, prep: &Prepared) -> Result<Evaluation> {
    let layout = Layout::new(&cfg.out);
    let s = cfg.unet.input_size;
    let disk = Roi::inscribed(s);
    let mut areas: Vec<AreaRow> = prep
        .cases
        .iter()
        .map(|c| {
            Ok(AreaRow {
                id: c.id.clone(),
                label: c.label,
                fold: prep.plan.assignments[&c.id],
                gt1: c.gt1.as_ref().map(|m| area_percent(m, disk)).transpose()?,
                gt2: Some(area_percent(&c.gt2, disk)?),
                model1: None,
                model2: None,
            })
        })
        .collect::<Result<_>>()?;
    let row_of: BTreeMap<String, usize> = areas
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.clone(), i))
        .collect();

    let mut folds = Vec::new();
    let mut summary = Vec::new();
    for &gt in &cfg.gt_sources {
        let mut rows = Vec::new();
        for fold in 0..prep.plan.k {
            let f = read_fold(cfg, gt, fold)?;
            ensure!(
                f.test == prep.plan.iteration(fold).test,
                "{gt} fold {fold} was trained on a different fold plan; rerun training"
            );
            let mut scores = Vec::new();
            for id in &f.test {
                let path = layout
                    .fold(gt, fold)
                    .join("preds")
                    .join(format!("{id}.png"));
                let pred = Mask::read_png(&path, MaskSource::Predicted)?;
                ensure!(
                    pred.shape() == (s, s),
                    "{}: prediction is not {s}x{s}",
                    path.display()
                );
                scores.push(SegmentationScores::compute(
                    &pred,
                    prep.case(id)?.truth(gt)?,
                )?);
                let a = Some(area_percent(&pred, disk)?);
                let row = &mut areas[row_of[id]];
                match gt.model() {
                    ModelSource::Model1 => row.model1 = a,
                    ModelSource::Model2 => row.model2 = a,
                }
            }
            rows.push(SegmentationRow {
                gt,
                fold,
                n_train: f.train.len(),
                n_valid: f.valid.len(),
                n_test: f.test.len(),
                best_epoch: f.best_epoch,
                epochs_run: f.epochs_run,
                valid: f.valid_scores,
                test: SegmentationScores::mean(&scores).context("empty test fold")?,
            });
        }
        summary.push(summarize(gt, &rows));
        folds.extend(rows);
    }

    let tables = layout.tables();
    let mut w = csv_writer(&tables.join("segmentation_folds.csv"))?;
    w.write_record(SEG_HEADER)?;
    for r in &folds {
        let mut rec = vec![
            r.gt.to_string(),
            r.fold.to_string(),
            r.n_train.to_string(),
            r.n_valid.to_string(),
            r.n_test.to_string(),
            r.best_epoch.to_string(),
            r.epochs_run.to_string(),
        ];
        rec.extend(scores_cells(&r.valid));
        rec.extend(scores_cells(&r.test));
        w.write_record(rec)?;
    }
    w.flush()?;

    let mut w = csv_writer(&tables.join("segmentation_summary.csv"))?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &summary {
        let mut rec = vec![r.gt.to_string(), r.folds.to_string()];
        rec.extend(scores_cells(&r.mean_valid));
        rec.extend(scores_cells(&r.mean_test));
        w.write_record(rec)?;
    }
    w.flush()?;

    let mut w = csv_writer(&tables.join("areas.csv"))?;
    w.write_record(AREA_HEADER)?;
    for a in &areas {
        w.write_record([
            a.id.clone(),
            a.label.map_or("n/a".into(), |l| l.to_string()),
            a.fold.to_string(),
            opt(a.gt1),
            opt(a.gt2),
            opt(a.model1),
            opt(a.model2),
        ])?;
    }
    w.flush()?;
    Ok(Evaluation {
        folds,
        summary,
        areas,
    })
}

/// Per-source means of the per-fold rows.
pub fn summarize(gt: GtSource, rows: &[SegmentationRow]) -> SegmentationSummary {
    let valid: Vec<SegmentationScores> = rows
        .iter()
        .filter(|r| r.gt == gt)
        .map(|r| r.valid)
        .collect();
    let test: Vec<SegmentationScores> =
        rows.iter().filter(|r| r.gt == gt).map(|r| r.test).collect();
    let zero = SegmentationScores {
        dice: 0.0,
        iou: 0.0,
        accuracy: 0.0,
    };
    SegmentationSummary {
        gt,
        folds: valid.len(),
        mean_valid: SegmentationScores::mean(&valid).unwrap_or(zero),
        mean_test: SegmentationScores::mean(&test).unwrap_or(zero),
    }
}

/// Reads `segmentation_folds.csv` back.
pub fn read_segmentation_folds(cfg: &RunConfig) -> Result<Vec<SegmentationRow>> {
    let path = Layout::new(&cfg.out)
        .tables()
        .join("segmentation_folds.csv");
    let mut out = Vec::new();
    for r in csv_rows(&path, &SEG_HEADER)? {
        let n = |i: usize| -> Result<usize> {
            r[i]
                .parse()
                .with_context(|| format!("bad integer `{}`", &r[i]))
        };
        let f = |i: usize| -> Result<f64> {
            r[i]
                .parse()
                .with_context(|| format!("bad number `{}`", &r[i]))
        };
        let gt = match &r[0] {
            "gt1" => GtSource::Gt1,
            "gt2" => GtSource::Gt2,
            other => bail!("{}: unknown gt `{other}`", path.display()),
        };
        out.push(SegmentationRow {
            gt,
            fold: n(1)?,
            n_train: n(2)?,
            n_valid: n(3)?,
            n_test: n(4)?,
            best_epoch: n(5)?,
            epochs_run: n(6)?,
            valid: SegmentationScores {
                dice: f(7)?,
                iou: f(8)?,
                accuracy: f(9)?,
            },
            test: SegmentationScores {
                dice: f(10)?,
                iou: f(11)?,
                accuracy: f(12)?,
            },
        });
    }
    Ok(out)
}

/// Reads `areas.csv` back.
pub fn read_areas(cfg: &RunConfig) -> Result<Vec<AreaRow>> {
    let path = Layout::new(&cfg.out).tables().join("areas.csv");
    csv_rows(&path, &AREA_HEADER)
        .with_context(|| "run the evaluate stage first".to_string())?
        .iter()
        .map(|r| {
            Ok(AreaRow {
                id: r[0].to_string(),
                label: match &r[1] {
                    "n/a" => None,
                    l => Some(l.parse()?),
                },
                fold: r[2].parse()?,
                gt1: parse_opt(&r[3])?,
                gt2: parse_opt(&r[4])?,
                model1: parse_opt(&r[5])?,
                model2: parse_opt(&r[6])?,
            })
        })
        .collect()
}

fn area_records(areas: &[AreaRow], model: ModelSource) -> Result<Vec<AreaRecord>> {
    areas
        .iter()
        .map(|a| {
            Ok(AreaRecord {
                id: a.id.clone(),
                area_percent: a
                    .model(model)
                    .with_context(|| format!("case `{}` has no {model} area", a.id))?,
                source: model,
            })
        })
        .collect()
}

fn clinical_labels(areas: &[AreaRow]) -> BTreeMap<String, Label> {
    areas
        .iter()
        .filter_map(|a| Some((a.id.clone(), a.label?)))
        .collect()
}

/// Selected operating point of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub model: ModelSource,
    pub cutoff: f64,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
}

const CUTOFF_HEADER: [&str; 9] = [
    "model",
    "cutoff",
    "tp",
    "fp",
    "fn",
    "tn",
    "precision",
    "recall",
    "fpr",
];

fn models(cfg: &RunConfig) -> Vec<ModelSource> {
    cfg.gt_sources.iter().map(|g| g.model()).collect()
}

/// Sweeps GT1-negative area cutoffs for every model, selects the operating
/// point and writes the curves and `cutoffs.csv`.
pub fn select_cutoffs(cfg: &RunConfig) -> Result<Vec<CutoffRow>> {
    let layout = Layout::new(&cfg.out);
    let areas = read_areas(cfg)?;
    let negatives: Vec<f64> = areas
        .iter()
        .filter(|a| a.label == Some(Label::Negative))
        .map(|a| {
            a.gt1
                .with_context(|| format!("negative case `{}` has no GT1 area", a.id))
        })
        .collect::<Result<_>>()?;
    let candidates = candidate_cutoffs(&negatives)?;
    let labels = clinical_labels(&areas);
    let labelled: Vec<AreaRow> = areas
        .iter()
        .filter(|a| a.label.is_some())
        .cloned()
        .collect();

    let mut model_curves = Vec::new();
    let mut rows = Vec::new();
    for model in models(cfg) {
        let curve = sweep_cutoffs(&area_records(&labelled, model)?, &labels, &candidates)?;
        let p = select_cutoff(&curve).context("empty cutoff curve")?;
        rows.push(CutoffRow {
            model,
            cutoff: p.cutoff,
            counts: p.counts,
            precision: p.precision,
            recall: p.recall,
            fpr: p.fpr,
        });
        model_curves.push(ModelCurve {
            model,
            curve,
            selected: Some(p.cutoff),
        });
    }
    curves::emit_curves(&model_curves, &layout.curves())?;

    let mut w = csv_writer(&layout.tables().join("cutoffs.csv"))?;
    w.write_record(CUTOFF_HEADER)?;
    for r in &rows {
        w.write_record([
            r.model.to_string(),
            r.cutoff.to_string(),
            r.counts.tp.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            r.counts.tn.to_string(),
            fmt_metric(r.precision),
            fmt_metric(r.recall),
            fmt_metric(r.fpr),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

fn parse_model(s: &str) -> Result<ModelSource> {
    match s {
        "model1" => Ok(ModelSource::Model1),
        "model2" => Ok(ModelSource::Model2),
        other => bail!("unknown model `{other}`"),
    }
}

/// Reads `cutoffs.csv`: model to selected cutoff.
pub fn read_cutoffs(cfg: &RunConfig) -> Result<BTreeMap<ModelSource, f64>> {
    let path = Layout::new(&cfg.out).tables().join("cutoffs.csv");
    csv_rows(&path, &CUTOFF_HEADER)
        .context("run the select-cutoff stage first")?
        .iter()
        .map(|r| Ok((parse_model(&r[0])?, r[1].parse()?)))
        .collect()
}

/// Pooled out-of-fold classification of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub model: ModelSource,
    pub cutoff: f64,
    pub counts: ConfusionCounts,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
    pub f_beta: Option<f64>,
    pub beta: f64,
}

/// Classifies every labelled case at the selected cutoff and scores the
/// result against the clinical labels.
pub fn classify(cfg: &RunConfig) -> Result<Vec<ClassificationRow>> {
    let areas = read_areas(cfg)?;
    let cutoffs = read_cutoffs(cfg)?;
    let labels = clinical_labels(&areas);
    let labelled: Vec<AreaRow> = areas
        .iter()
        .filter(|a| a.label.is_some())
        .cloned()
        .collect();
    ensure!(
        !labelled.is_empty(),
        "no clinically labelled cases to classify"
    );
    let beta = cfg.classify.beta;
    let mut rows = Vec::new();
    for model in models(cfg) {
        let cutoff = *cutoffs
            .get(&model)
            .with_context(|| format!("no cutoff selected for {model}"))?;
        let (predicted, actual): (Vec<Label>, Vec<Label>) =
            classify_all(&area_records(&labelled, model)?, cutoff)
                .into_iter()
                .map(|(id, p)| (p, labels[&id]))
                .unzip();
        let counts = confusion(&predicted, &actual)?;
        let m = classification_metrics(&counts, beta);
        rows.push(ClassificationRow {
            model,
            cutoff,
            counts,
            recall: m.recall,
            precision: m.precision,
            fpr: m.fpr,
            f1: m.f1,
            f_beta: m.f_beta,
            beta,
        });
    }
    let fb = format!("f{beta}");
    let mut w = csv_writer(&Layout::new(&cfg.out).tables().join("classification.csv"))?;
    w.write_record([
        "model",
        "cutoff",
        "tp",
        "fp",
        "fn",
        "tn",
        "total",
        "recall",
        "precision",
        "fpr",
        "f1",
        &fb,
    ])?;
    for r in &rows {
        w.write_record([
            r.model.to_string(),
            r.cutoff.to_string(),
            r.counts.tp.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            r.counts.tn.to_string(),
            r.counts.total().to_string(),
            fmt_metric(r.recall),
            fmt_metric(r.precision),
            fmt_metric(r.fpr),
            fmt_metric(r.f1),
            fmt_metric(r.f_beta),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Everything the run produced, as serialized to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub cases: usize,
    pub segmentation_folds: Vec<SegmentationRow>,
    pub segmentation_summary: Vec<SegmentationSummary>,
    pub cutoffs: Vec<CutoffRow>,
    pub classification: Vec<ClassificationRow>,
    /// Cases where the two models disagree at their cutoffs.
    pub disagreements: Option<usize>,
}

/// Assembles the report from the persisted tables, reruns classification,
/// draws the scatterplot and writes `report.json`.
pub fn report(cfg: &RunConfig) -> Result<RunReport> {
    let layout = Layout::new(&cfg.out);
    let folds = read_segmentation_folds(cfg)?;
    let summary: Vec<SegmentationSummary> = cfg
        .gt_sources
        .iter()
        .map(|&gt| summarize(gt, &folds))
        .collect();
    let areas = read_areas(cfg)?;
    let cutoffs_map = read_cutoffs(cfg)?;
    let cutoffs = select_cutoffs_rows(cfg, &cutoffs_map)?;
    let classification = classify(cfg)?;

    let mut disagreements = None;
    if let (Some(&c1), Some(&c2)) = (
        cutoffs_map.get(&ModelSource::Model1),
        cutoffs_map.get(&ModelSource::Model2),
    ) {
        let scatter = curves::emit_scatter(
            &area_records(&areas, ModelSource::Model1)?,
            &area_records(&areas, ModelSource::Model2)?,
            &clinical_labels(&areas),
            (c1, c2),
            &layout.scatter(),
        )?;
        disagreements = Some(scatter.iter().filter(|r| r.disagree).count());
    }
    let report = RunReport {
        config: cfg.clone(),
        cases: areas.len(),
        segmentation_folds: folds,
        segmentation_summary: summary,
        cutoffs,
        classification,
        disagreements,
    };
    write_file(
        &layout.report().join("report.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    Ok(report)
}

/// Selected points read back from the curve CSVs.
fn select_cutoffs_rows(
    cfg: &RunConfig,
    cutoffs: &BTreeMap<ModelSource, f64>,
) -> Result<Vec<CutoffRow>> {
    let dir = Layout::new(&cfg.out).curves();
    let mut rows = Vec::new();
    for model in models(cfg) {
        let c = curves::read_curve_csv(&curves::curve_csv_path(&dir, model), model)?;
        let cutoff = *cutoffs
            .get(&model)
            .with_context(|| format!("no cutoff selected for {model}"))?;
        ensure!(
            c.selected == Some(cutoff),
            "curve for {model} marks {:?} but cutoffs.csv says {cutoff}",
            c.selected
        );
        let p = c
            .curve
            .points
            .iter()
            .find(|p| p.cutoff == cutoff)
            .context("selected cutoff missing from curve")?;
        rows.push(CutoffRow {
            model,
            cutoff,
            counts: p.counts,
            precision: p.precision,
            recall: p.recall,
            fpr: p.fpr,
        });
    }
    Ok(rows)
}

/// All stages in order: data, GT2, every fold of every source, evaluation,
/// cutoff selection, classification and report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let prep = prepare(cfg).context("stage prepare")?;
    write_gt2(cfg, &prep).context("stage gt2")?;
    for &gt in &cfg.gt_sources {
        for fold in 0..prep.plan.k {
            train_fold(cfg, &prep, gt, fold)
                .with_context(|| format!("stage train ({gt}, fold {fold})"))?;
        }
    }
    evaluate(cfg, &prep).context("stage evaluate")?;
    select_cutoffs(cfg).context("stage select-cutoff")?;
    classify(cfg).context("stage classify")?;
    report(cfg).context("stage report")
}

/// Checkpoints present under the run directory.
pub fn checkpoint_paths(out: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for gt in [GtSource::Gt1, GtSource::Gt2] {
        let Ok(entries) = fs::read_dir(out.join(gt.dir_name())) else {
            continue;
        };
        for e in entries.flatten() {
            let p = e.path().join(CHECKPOINT_FILE);
            if p.is_file() {
                found.push(p);
            }
        }
    }
    found.sort();
    found
}

/// Loads a fold checkpoint, checking it against the configured architecture.
pub fn load_fold_checkpoint(
    cfg: &RunConfig,
    gt: GtSource,
    fold: usize,
) -> Result<CheckpointRecord> {
    let path = Layout::new(&cfg.out).checkpoint(gt, fold);
    Ok(CheckpointRecord::load(&path, Some(&cfg.unet))?)
}
