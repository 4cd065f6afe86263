//! Ground-truth masks.
//!
//! GT1 masks are drawn by hand and only ingested here. GT2 masks are produced
//! automatically: 1-D k-means on the in-ROI intensities picks the bright
//! (opacified) clusters, then a 3x3 dilation and a 3x3 closing fill the gaps
//! the clustering leaves behind.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RetroImage;
use crate::image::{non_binary, GrayImage, Mask, MaskSource};
use crate::{Error, Result};

/// Loads a manually drawn mask and checks it against its image.
///
/// The file may use any single nonzero gray level for foreground (0/255 and
/// 0/1 are both accepted). Files with more than one nonzero level, e.g.
/// anti-aliased brush strokes, are rejected with a histogram of the levels.
pub fn load_manual_mask(path: impl AsRef<Path>, paired_image: &GrayImage) -> Result<Mask> {
    let (h, w, raw) = GrayImage::read_raw_luma(path.as_ref())?;
    if (h, w) != paired_image.shape() {
        return Err(Error::shape(paired_image.shape(), (h, w)));
    }
    let mut levels = raw.iter().filter(|&&v| v != 0);
    if let Some(&first) = levels.next() {
        if levels.any(|&v| v != first) {
            return Err(non_binary(&raw));
        }
    }
    Mask::from_vec(
        h,
        w,
        raw.into_iter().map(|v| (v != 0) as u8).collect(),
        MaskSource::Gt1,
    )
}

/// Binary structuring element anchored at its centre.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl StructuringElement {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "structuring element sides must be odd, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(
                "structuring element data does not match its shape".into(),
            ));
        }
        if !data[(height / 2) * width + width / 2] {
            return Err(Error::InvalidArgument(
                "structuring element anchor must be set".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Full square of ones.
    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side, vec![true; side * side])
    }

    pub fn square3() -> Self {
        Self::square(3).expect("3x3 square is valid")
    }

    /// Offsets `(dr, dc)` of the set elements relative to the anchor.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (ar, ac) = ((self.height / 2) as isize, (self.width / 2) as isize);
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.data[r * self.width + c])
            .map(|(r, c)| (r as isize - ar, c as isize - ac))
            .collect()
    }

    fn half(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

/// Row-major boolean canvas with a signed origin, so morphology can run past
/// the frame of the mask it started from.
struct Canvas {
    h: usize,
    w: usize,
    pad_r: usize,
    pad_c: usize,
    data: Vec<bool>,
}

impl Canvas {
    fn from_mask(mask: &Mask, pad_r: usize, pad_c: usize) -> Self {
        let (h, w) = (mask.height() + 2 * pad_r, mask.width() + 2 * pad_c);
        let mut data = vec![false; h * w];
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                data[(r + pad_r) * w + c + pad_c] = mask.get(r, c);
            }
        }
        Self {
            h,
            w,
            pad_r,
            pad_c,
            data,
        }
    }

    fn at(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.h
            && (c as usize) < self.w
            && self.data[r as usize * self.w + c as usize]
    }

    fn map(&self, offsets: &[(isize, isize)], any: bool) -> Canvas {
        let mut data = vec![false; self.h * self.w];
        for r in 0..self.h {
            for c in 0..self.w {
                let (r, c) = (r as isize, c as isize);
                let hit = |&(dr, dc): &(isize, isize)| self.at(r + dr, c + dc);
                data[r as usize * self.w + c as usize] = if any {
                    offsets.iter().any(hit)
                } else {
                    offsets.iter().all(hit)
                };
            }
        }
        Canvas { data, ..*self }
    }

    fn into_mask(self, height: usize, width: usize, source: MaskSource) -> Mask {
        Mask::from_fn(height, width, source, |r, c| {
            self.data[(r + self.pad_r) * self.w + c + self.pad_c]
        })
    }
}

/// Binary dilation: a pixel is set when the element placed there overlaps any
/// foreground pixel. Pixels outside the mask count as background.
pub fn dilate(mask: &Mask, se: &StructuringElement) -> Mask {
    Canvas::from_mask(mask, 0, 0)
        .map(&se.offsets(), true)
        .into_mask(mask.height(), mask.width(), mask.source())
}

/// Binary erosion: a pixel survives when the element placed there fits inside
/// the foreground. Pixels outside the mask count as background.
pub fn erode(mask: &Mask, se: &StructuringElement) -> Mask {
    Canvas::from_mask(mask, 0, 0)
        .map(&se.offsets(), false)
        .into_mask(mask.height(), mask.width(), mask.source())
}

/// Closing (dilation then erosion with the same element).
///
/// The intermediate dilation is kept on a canvas padded by the element
/// radius, so foreground touching the frame is not eaten by the erosion and
/// the result always contains the input.
pub fn morph_close(mask: &Mask, se: &StructuringElement) -> Mask {
    let (pr, pc) = se.half();
    let offsets = se.offsets();
    Canvas::from_mask(mask, pr, pc)
        .map(&offsets, true)
        .map(&offsets, false)
        .into_mask(mask.height(), mask.width(), mask.source())
}

/// Result of a 1-D k-means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans1d {
    /// Ascending centroids.
    pub centroids: Vec<f64>,
    pub iterations: usize,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

impl KMeans1d {
    /// Index of the nearest centroid (lowest index on ties).
    pub fn assign(&self, v: f64) -> usize {
        let mut best = 0;
        for (j, c) in self.centroids.iter().enumerate().skip(1) {
            if (v - c).abs() < (v - self.centroids[best]).abs() {
                best = j;
            }
        }
        best
    }
}

/// Options for [`kmeans_1d`] and the GT2 cluster selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub clusters: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Independent k-means++ initialisations; the lowest-inertia run wins.
    pub restarts: usize,
    /// Minimum gap between a cluster centroid and the darkest (background)
    /// centroid for the cluster to count as opacity.
    pub min_contrast: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            clusters: 3,
            max_iterations: 300,
            tolerance: 1e-6,
            restarts: 8,
            min_contrast: 0.1,
        }
    }
}

fn kmeans_pp_init(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = vec![values[rng.random_range(0..values.len())]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            values[rng.random_range(0..values.len())]
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = values.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            values[pick]
        };
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
        centroids.push(next);
    }
    centroids
}

fn lloyd(values: &[f64], mut centroids: Vec<f64>, params: &KMeansParams) -> Result<KMeans1d> {
    let k = centroids.len();
    for iteration in 1..=params.max_iterations {
        centroids.sort_by(f64::total_cmp);
        let model = KMeans1d {
            centroids: centroids.clone(),
            iterations: iteration,
            inertia: 0.0,
        };
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for &v in values {
            let j = model.assign(v);
            sums[j] += v;
            counts[j] += 1;
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[j] > 0 {
                let c = sums[j] / counts[j] as f64;
                shift = shift.max((c - centroids[j]).abs());
                centroids[j] = c;
            }
        }
        if shift < params.tolerance {
            centroids.sort_by(f64::total_cmp);
            let mut model = KMeans1d {
                centroids,
                iterations: iteration,
                inertia: 0.0,
            };
            model.inertia = values
                .iter()
                .map(|&v| (v - model.centroids[model.assign(v)]).powi(2))
                .sum();
            return Ok(model);
        }
    }
    Err(Error::NoConvergence {
        iterations: params.max_iterations,
    })
}

/// Prefix sums for the squared error of contiguous runs of sorted values.
struct RunCost {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl RunCost {
    fn new(sorted: &[f64]) -> Self {
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let (mut s1, mut s2) = (vec![0.0], vec![0.0]);
        for &x in sorted {
            let d = x - mean;
            s1.push(s1.last().unwrap() + d);
            s2.push(s2.last().unwrap() + d * d);
        }
        Self { s1, s2 }
    }

    /// Squared error of `sorted[i..j]` about its mean.
    fn cost(&self, i: usize, j: usize) -> f64 {
        let a = self.s1[j] - self.s1[i];
        (self.s2[j] - self.s2[i] - a * a / (j - i) as f64).max(0.0)
    }
}

fn fill_row(
    rc: &RunCost,
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [usize],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let (mut best, mut at) = (f64::INFINITY, opt_lo);
    for i in opt_lo..=opt_hi.min(mid - 1) {
        let v = prev[i] + rc.cost(i, mid);
        if v < best {
            best = v;
            at = i;
        }
    }
    cur[mid] = best;
    arg[mid] = at;
    if mid > lo {
        fill_row(rc, prev, cur, arg, lo, mid - 1, opt_lo, at);
    }
    fill_row(rc, prev, cur, arg, mid + 1, hi, at, opt_hi);
}

/// Centroids of the minimum-squared-error split of sorted values into `k`
/// contiguous groups. Optimal split points are monotone in the prefix
/// length, so each layer is filled by divide and conquer.
fn optimal_centroids(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    let rc = RunCost::new(sorted);
    let mut prev: Vec<f64> = (0..=n)
        .map(|j| if j == 0 { f64::INFINITY } else { rc.cost(0, j) })
        .collect();
    let mut splits = Vec::with_capacity(k - 1);
    for m in 2..=k {
        let mut cur = vec![f64::INFINITY; n + 1];
        let mut arg = vec![0; n + 1];
        fill_row(&rc, &prev, &mut cur, &mut arg, m, n, m - 1, n - 1);
        splits.push(arg);
        prev = cur;
    }
    let mut bounds = vec![n];
    let mut j = n;
    for arg in splits.iter().rev() {
        j = arg[j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    bounds
        .windows(2)
        .map(|w| sorted[w[0]..w[1]].iter().sum::<f64>() / (w[1] - w[0]) as f64)
        .collect()
}

/// 1-D k-means with k-means++ seeding. Deterministic for a given `seed`.
///
/// Besides the `restarts` random initialisations, Lloyd iterations also start
/// from the exact optimal contiguous split, so the returned inertia is the
/// global minimum even when every random start stalls in a local one.
pub fn kmeans_1d(values: &[f64], params: &KMeansParams, seed: u64) -> Result<KMeans1d> {
    let k = params.clusters;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clusters, got {k}"
        )));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Degenerate(format!(
            "{} distinct intensities cannot form {k} clusters",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = Some(lloyd(values, optimal_centroids(&sorted, k), params)?);
    for _ in 0..params.restarts {
        let init = kmeans_pp_init(values, k, &mut rng);
        let run = lloyd(values, init, params)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Clusters that count as opacity: centroid above the median centroid and at
/// least `min_contrast` brighter than the darkest centroid.
pub fn bright_clusters(model: &KMeans1d, min_contrast: f64) -> Vec<bool> {
    let c = &model.centroids;
    let k = c.len();
    let median = if k % 2 == 1 {
        c[k / 2]
    } else {
        0.5 * (c[k / 2 - 1] + c[k / 2])
    };
    c.iter()
        .map(|&v| v > median && v - c[0] >= min_contrast)
        .collect()
}

/// Clusters the in-ROI intensities of `image` and marks the bright clusters.
pub fn kmeans_segment(image: &RetroImage, clusters: usize, seed: u64) -> Result<Mask> {
    let params = KMeansParams {
        clusters,
        ..KMeansParams::default()
    };
    kmeans_segment_with(image, &params, seed)
}

pub fn kmeans_segment_with(image: &RetroImage, params: &KMeansParams, seed: u64) -> Result<Mask> {
    let (h, w) = image.shape();
    let roi = image.roi();
    let px = image.pixels();
    let values: Vec<f64> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| roi.contains(r, c))
        .map(|(r, c)| px.get(r, c) as f64)
        .collect();
    let model = kmeans_1d(&values, params, seed)?;
    let keep = bright_clusters(&model, params.min_contrast);
    Ok(Mask::from_fn(h, w, MaskSource::Gt2, |r, c| {
        roi.contains(r, c) && keep[model.assign(px.get(r, c) as f64)]
    }))
}

/// Intermediate masks of the automated ground-truth pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Gt2Stages {
    pub clustered: Mask,
    pub dilated: Mask,
    pub closed: Mask,
}

/// k-means clustering, then 3x3 dilation, then 3x3 closing.
pub fn generate_gt2(image: &RetroImage, seed: u64) -> Result<Mask> {
    Ok(generate_gt2_stages(image, &KMeansParams::default(), seed)?.closed)
}

pub fn generate_gt2_stages(
    image: &RetroImage,
    params: &KMeansParams,
    seed: u64,
) -> Result<Gt2Stages> {
    let se = StructuringElement::square3();
    let clustered = kmeans_segment_with(image, params, seed)?;
    let dilated = dilate(&clustered, &se);
    let closed = morph_close(&dilated, &se).with_source(MaskSource::Gt2);
    Ok(Gt2Stages {
        clustered,
        dilated,
        closed,
    })
}
