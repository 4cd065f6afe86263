//! Eye images with their region of interest, ROI cropping, dataset manifests
//! and cross-validation splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{GrayImage, Mask};
use crate::{Error, Result};

/// Smallest image side accepted for a [`RetroImage`].
pub const MIN_IMAGE_SIDE: usize = 32;
/// Smallest ROI radius accepted.
pub const MIN_ROI_RADIUS: usize = 8;

/// Clinical classification of an eye. Positive means treatment is required.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "pos" | "1" => Ok(Label::Positive),
            "negative" | "neg" | "0" => Ok(Label::Negative),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

/// Circular region of interest (the central 3 mm zone of the eye).
///
/// The centre is a continuous coordinate on the pixel-corner lattice, so a
/// pixel `(r, c)` belongs to the disk when its centre `(r + 0.5, c + 0.5)` lies
/// within `radius` of `(center_row, center_col)`. The bounding box is then
/// exactly `2 * radius` pixels wide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub center_row: usize,
    pub center_col: usize,
    pub radius: usize,
}

impl Roi {
    pub fn new(center_row: usize, center_col: usize, radius: usize) -> Self {
        Self {
            center_row,
            center_col,
            radius,
        }
    }

    /// The disk inscribed in a `side` x `side` frame.
    pub fn inscribed(side: usize) -> Self {
        Self::new(side / 2, side / 2, side / 2)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dy = row as f64 + 0.5 - self.center_row as f64;
        let dx = col as f64 + 0.5 - self.center_col as f64;
        let r = self.radius as f64;
        dy * dy + dx * dx <= r * r
    }

    /// Checks the radius bound and that the disk fits inside a `height` x `width` grid.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.radius < MIN_ROI_RADIUS {
            return Err(Error::InvalidRoi(format!(
                "radius {} below minimum {MIN_ROI_RADIUS}",
                self.radius
            )));
        }
        let fits = self.center_row >= self.radius
            && self.center_col >= self.radius
            && self.center_row + self.radius <= height
            && self.center_col + self.radius <= width;
        if !fits {
            return Err(Error::InvalidRoi(format!(
                "circle at ({}, {}) radius {} leaves the {height}x{width} grid",
                self.center_row, self.center_col, self.radius
            )));
        }
        Ok(())
    }

    /// Number of pixels inside the disk.
    pub fn pixel_count(&self) -> usize {
        let (r0, c0) = (self.center_row - self.radius, self.center_col - self.radius);
        let side = 2 * self.radius;
        (r0..r0 + side)
            .flat_map(|r| (c0..c0 + side).map(move |c| (r, c)))
            .filter(|&(r, c)| self.contains(r, c))
            .count()
    }

    /// Disk membership as a mask over a `height` x `width` grid.
    pub fn to_mask(&self, height: usize, width: usize) -> Mask {
        Mask::from_fn(height, width, crate::MaskSource::Gt1, |r, c| {
            self.contains(r, c)
        })
    }
}

/// A retroillumination eye image with its ROI and optional clinical label.
#[derive(Clone, Debug, PartialEq)]
pub struct RetroImage {
    pub id: String,
    pixels: GrayImage,
    roi: Roi,
    pub clinical_label: Option<Label>,
}

impl RetroImage {
    pub fn new(
        id: impl Into<String>,
        pixels: GrayImage,
        roi: Roi,
        clinical_label: Option<Label>,
    ) -> Result<Self> {
        let (h, w) = pixels.shape();
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::InvalidImage(format!(
                "{h}x{w} image is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        roi.validate(h, w)?;
        Ok(Self {
            id: id.into(),
            pixels,
            roi,
            clinical_label,
        })
    }

    pub fn pixels(&self) -> &GrayImage {
        &self.pixels
    }

    pub fn roi(&self) -> Roi {
        self.roi
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pixels.shape()
    }

    /// Replaces the pixel grid, keeping id, ROI and label. The ROI must still fit.
    pub fn with_pixels(&self, pixels: GrayImage) -> Result<Self> {
        Self::new(self.id.clone(), pixels, self.roi, self.clinical_label)
    }
}

/// Crops the square bounding box of the ROI and zeroes everything outside the
/// inscribed disk. The returned image carries the recentred ROI.
pub fn crop_roi(image: &RetroImage) -> Result<RetroImage> {
    let roi = image.roi;
    let (h, w) = image.shape();
    roi.validate(h, w)?;
    let side = 2 * roi.radius;
    let (r0, c0) = (roi.center_row - roi.radius, roi.center_col - roi.radius);
    let local = Roi::inscribed(side);
    let mut out = GrayImage::new(side, side);
    for r in 0..side {
        for c in 0..side {
            if local.contains(r, c) {
                out.set(r, c, image.pixels.get(r0 + r, c0 + c));
            }
        }
    }
    RetroImage::new(image.id.clone(), out, local, image.clinical_label)
}

/// Applies the same crop as [`crop_roi`] to a mask aligned with the original image.
pub fn crop_mask(mask: &Mask, roi: Roi) -> Result<Mask> {
    let (h, w) = mask.shape();
    roi.validate(h, w)?;
    let side = 2 * roi.radius;
    let (r0, c0) = (roi.center_row - roi.radius, roi.center_col - roi.radius);
    let local = Roi::inscribed(side);
    Ok(Mask::from_fn(side, side, mask.source(), |r, c| {
        local.contains(r, c) && mask.get(r0 + r, c0 + c)
    }))
}

/// Which part of an iteration a case belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Valid,
    Test,
}

/// Train/valid/test ids for one cross-validation iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl IterationSplit {
    pub fn role(&self, id: &str) -> Option<SplitRole> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.test) {
            Some(SplitRole::Test)
        } else if has(&self.valid) {
            Some(SplitRole::Valid)
        } else if has(&self.train) {
            Some(SplitRole::Train)
        } else {
            None
        }
    }
}

/// k-fold assignment of every case plus the 9:1 train/valid subsplit of each iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
    pub iterations: Vec<IterationSplit>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn fold_members(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn iteration(&self, fold: usize) -> &IterationSplit {
        &self.iterations[fold]
    }
}

fn check_fold_args(ids: &[String], k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if ids.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} ids cannot fill {k} folds",
            ids.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

fn plan_from_order(order: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    // Round-robin dealing keeps fold sizes within one of each other.
    let assignments: BTreeMap<String, usize> = order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i % k))
        .collect();
    let mut iterations = Vec::with_capacity(k);
    for fold in 0..k {
        let test: Vec<String> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k == fold)
            .map(|(_, id)| id.clone())
            .collect();
        let pool: Vec<String> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k != fold)
            .map(|(_, id)| id.clone())
            .collect();
        let (train, valid) = split_pool(&pool, seed.wrapping_add(1 + fold as u64))?;
        let mut test = test;
        test.sort();
        iterations.push(IterationSplit {
            fold,
            train,
            valid,
            test,
        });
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
        iterations,
    })
}

/// Shuffles `ids` with `seed` and deals them into `k` folds.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    check_fold_args(ids, k)?;
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    plan_from_order(&order, k, seed)
}

/// Like [`make_folds`] but spreads each clinical label evenly over the folds,
/// so every test fold receives its share of negatives.
pub fn make_stratified_folds(
    cases: &[(String, Option<Label>)],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    let ids: Vec<String> = cases.iter().map(|(id, _)| id.clone()).collect();
    check_fold_args(&ids, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(cases.len());
    for group in [Some(Label::Negative), Some(Label::Positive), None] {
        let mut members: Vec<String> = cases
            .iter()
            .filter(|(_, l)| *l == group)
            .map(|(id, _)| id.clone())
            .collect();
        members.sort();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    plan_from_order(&order, k, seed)
}

/// Splits a training pool 9:1 into train and validation ids.
///
/// The validation share is `ceil(n / 10)`, so a 95-case pool yields 85/10.
pub fn split_train_valid(pool: &[String], seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if pool.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "train/valid split needs at least 10 cases, got {}",
            pool.len()
        )));
    }
    split_pool(pool, seed)
}

/// The 9:1 rule without the minimum pool size, for the small training pools
/// of tiny cross-validation runs. Needs at least two cases.
fn split_pool(pool: &[String], seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if pool.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a training pool of {} case(s)",
            pool.len()
        )));
    }
    let n_valid = pool.len().div_ceil(10);
    let mut order = pool.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut valid = order[..n_valid].to_vec();
    let mut train = order[n_valid..].to_vec();
    valid.sort();
    train.sort();
    Ok((train, valid))
}

/// One case of a dataset manifest. Paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt2: Option<PathBuf>,
    #[serde(default)]
    pub label: Option<Label>,
    /// Set by whoever curates the data, e.g. for images missing the central
    /// zone or dominated by glare. Excluded items are skipped by every stage.
    #[serde(default)]
    pub excluded: bool,
    pub roi: Roi,
}

/// JSON list of dataset cases.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub items: Vec<ManifestItem>,
    #[serde(skip)]
    root: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub excluded: usize,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, items: Vec<ManifestItem>) -> Result<Self> {
        let m = Self {
            items,
            root: root.into(),
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    /// Loads a manifest and checks that ids are unique and every referenced
    /// file of a non-excluded item exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_unique_ids()?;
        for item in m.active() {
            let mut files = vec![&item.image];
            files.extend(item.gt1.iter());
            files.extend(item.gt2.iter());
            for f in files {
                let full = m.resolve(f);
                if !full.is_file() {
                    return Err(Error::Manifest(format!(
                        "item `{}` references missing file {}",
                        item.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Items that are not excluded, in manifest order.
    pub fn active(&self) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(|i| !i.excluded)
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for item in &self.items {
            if item.excluded {
                c.excluded += 1;
                continue;
            }
            match item.label {
                Some(Label::Positive) => c.positive += 1,
                Some(Label::Negative) => c.negative += 1,
                None => c.unlabeled += 1,
            }
        }
        c
    }

    /// Loads the image of `item` as a [`RetroImage`].
    pub fn load_image(&self, item: &ManifestItem) -> Result<RetroImage> {
        let pixels = GrayImage::read_png(self.resolve(&item.image))?;
        RetroImage::new(item.id.clone(), pixels, item.roi, item.label)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id `{}`", item.id)));
            }
        }
        Ok(())
    }
}
