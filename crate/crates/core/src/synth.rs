//! Synthetic retroillumination eyes with exactly known PCO masks.
//!
//! Each sample is a dark, slightly shaded pupil disk inside a textured iris
//! ring. Opacity is painted as smooth pearl clusters and streaked fibrosis
//! bands until the painted area matches the requested fraction of the ROI.
//! The returned mask is the painted region itself; the clinical label is
//! derived from that mask and never stored separately.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classify::area_percent;
use crate::dataset::{DatasetManifest, Label, ManifestItem, RetroImage, Roi};
use crate::image::{GrayImage, Mask, MaskSource};
use crate::{Error, Result};

/// Parameters of one synthetic eye.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Side of the full (uncropped) square image.
    pub image_size: usize,
    pub roi_radius: usize,
    /// Target PCO area as a fraction of the ROI disk, in `[0, 0.9]`.
    pub area_fraction: f64,
    /// Area percent above which the eye needs treatment.
    pub label_threshold: f64,
    /// Mean pupil intensity.
    pub background: f32,
    /// Opacity brightness over the background.
    pub contrast: f32,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 160,
            roi_radius: 64,
            area_fraction: 0.2,
            label_threshold: 4.0,
            background: 0.2,
            contrast: 0.4,
            noise: 0.015,
        }
    }
}

/// A generated eye, its exact PCO mask (full-image frame) and clinical label.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: RetroImage,
    pub mask: Mask,
    pub label: Label,
}

/// Allowed gap between requested and painted area fraction.
pub const AREA_TOLERANCE: f64 = 0.01;
const MAX_SHAPES: usize = 400;

#[derive(Clone, Copy, Debug)]
enum Texture {
    Pearl,
    Fibrosis { frequency: f64, phase: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    texture: Texture,
}

impl Ellipse {
    /// Normalised squared radius and the coordinate along the long axis.
    fn local(&self, r: usize, c: usize, scale: f64) -> (f64, f64) {
        let y = r as f64 + 0.5 - self.cy;
        let x = c as f64 + 0.5 - self.cx;
        let u = x * self.cos + y * self.sin;
        let v = -x * self.sin + y * self.cos;
        let (a, b) = (self.a * scale, self.b * scale);
        ((u / a).powi(2) + (v / b).powi(2), u)
    }

    fn contains(&self, r: usize, c: usize, scale: f64) -> bool {
        scale > 0.0 && self.local(r, c, scale).0 <= 1.0
    }

    fn bbox(&self, scale: f64, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let ext = self.a.max(self.b) * scale + 1.0;
        let r0 = (self.cy - ext).floor().max(0.0) as usize;
        let c0 = (self.cx - ext).floor().max(0.0) as usize;
        let r1 = ((self.cy + ext).ceil() as usize).min(h);
        let c1 = ((self.cx + ext).ceil() as usize).min(w);
        (r0, r1, c0, c1)
    }

    /// Opacity brightness in `[0.7, 1]` before border smoothing.
    fn shade(&self, r: usize, c: usize, scale: f64) -> f64 {
        let (rho, u) = self.local(r, c, scale);
        match self.texture {
            Texture::Pearl => 0.7 + 0.3 * (1.0 - rho).max(0.0).sqrt(),
            Texture::Fibrosis { frequency, phase } => {
                0.8 + 0.2 * (u * frequency + phase).sin().abs()
            }
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, roi: Roi, disk_px: usize, remaining_px: usize) -> Ellipse {
    let r = roi.radius as f64;
    // Centre uniformly inside 90% of the disk.
    let (cy, cx) = loop {
        let dy = rng.random_range(-0.9..0.9) * r;
        let dx = rng.random_range(-0.9..0.9) * r;
        if dy * dy + dx * dx <= (0.9 * r).powi(2) {
            break (roi.center_row as f64 + dy, roi.center_col as f64 + dx);
        }
    };
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let fibrosis = rng.random_bool(0.35);
    let aspect: f64 = if fibrosis {
        rng.random_range(3.0..6.0)
    } else {
        rng.random_range(1.0..1.8)
    };
    // Nominal area: a share of what is left, capped at a quarter of the disk.
    let cap = (disk_px as f64 * 0.25).min(remaining_px as f64 * 1.5);
    let nominal = rng.random_range(0.4..1.0) * cap.max(12.0);
    let b = (nominal / (std::f64::consts::PI * aspect)).sqrt();
    let texture = if fibrosis {
        Texture::Fibrosis {
            frequency: rng.random_range(0.5..1.2),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    } else {
        Texture::Pearl
    };
    Ellipse {
        cy,
        cx,
        a: b * aspect,
        b,
        cos: theta.cos(),
        sin: theta.sin(),
        texture,
    }
}

fn added_pixels(shape: &Ellipse, scale: f64, painted: &Mask, roi: Roi) -> usize {
    let (h, w) = painted.shape();
    let (r0, r1, c0, c1) = shape.bbox(scale, h, w);
    let mut n = 0;
    for r in r0..r1 {
        for c in c0..c1 {
            if roi.contains(r, c) && !painted.get(r, c) && shape.contains(r, c, scale) {
                n += 1;
            }
        }
    }
    n
}

/// Generates one eye. Deterministic for a given `(spec, seed)`.
pub fn synthesize_sample(spec: &SynthSpec, seed: u64) -> Result<SynthSample> {
    if !(0.0..=0.9).contains(&spec.area_fraction) {
        return Err(Error::InvalidArgument(format!(
            "area fraction {} outside [0, 0.9]",
            spec.area_fraction
        )));
    }
    if spec.image_size < 2 * spec.roi_radius {
        return Err(Error::InvalidArgument(format!(
            "ROI radius {} does not fit a {} px image",
            spec.roi_radius, spec.image_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.image_size;
    let rad = spec.roi_radius;
    let roi = Roi::new(
        rng.random_range(rad..=n - rad),
        rng.random_range(rad..=n - rad),
        rad,
    );
    roi.validate(n, n)?;
    let disk_px = roi.pixel_count();
    let target_px = (spec.area_fraction * disk_px as f64).round() as usize;
    let slack = ((0.5 * AREA_TOLERANCE * disk_px as f64).floor() as usize)
        .min(target_px / 10)
        .max(1);

    // Paint shapes, shrinking each so the running area never overshoots.
    let mut painted = Mask::empty(n, n, MaskSource::Gt1);
    let mut shapes: Vec<(Ellipse, f64)> = Vec::new();
    let mut area = 0usize;
    let mut attempts = 0;
    while target_px > 0 && area + slack < target_px {
        attempts += 1;
        if attempts > MAX_SHAPES {
            return Err(Error::InvalidArgument(format!(
                "could not reach area fraction {} after {MAX_SHAPES} attempts (got {:.4})",
                spec.area_fraction,
                area as f64 / disk_px as f64
            )));
        }
        let remaining = target_px - area;
        let shape = random_shape(&mut rng, roi, disk_px, remaining);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if added_pixels(&shape, hi, &painted, roi) > remaining {
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if added_pixels(&shape, mid, &painted, roi) > remaining {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        } else {
            lo = hi;
        }
        let scale = lo;
        if added_pixels(&shape, scale, &painted, roi) == 0 {
            continue;
        }
        let (r0, r1, c0, c1) = shape.bbox(scale, n, n);
        for r in r0..r1 {
            for c in c0..c1 {
                if roi.contains(r, c) && !painted.get(r, c) && shape.contains(r, c, scale) {
                    painted.set(r, c, true);
                    area += 1;
                }
            }
        }
        shapes.push((shape, scale));
    }

    let image = render(spec, roi, &painted, &shapes, &mut rng);
    let image = RetroImage::new(format!("synth{seed}"), image, roi, None)?;
    let percent = area_percent(&painted, roi)?;
    let label = if percent > spec.label_threshold {
        Label::Positive
    } else {
        Label::Negative
    };
    let image = RetroImage::new(image.id.clone(), image.pixels().clone(), roi, Some(label))?;
    Ok(SynthSample {
        image,
        mask: painted,
        label,
    })
}

fn render(
    spec: &SynthSpec,
    roi: Roi,
    painted: &Mask,
    shapes: &[(Ellipse, f64)],
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let (h, w) = painted.shape();
    let rad = roi.radius as f64;

    // Opacity layer: brightest covering shape per painted pixel, then a 3x3
    // box blur so the borders are soft.
    let mut layer = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            if !painted.get(r, c) {
                continue;
            }
            layer[r * w + c] = shapes
                .iter()
                .filter(|(s, k)| s.contains(r, c, *k))
                .map(|(s, k)| s.shade(r, c, *k))
                .fold(0.0, f64::max);
        }
    }
    let mut soft = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        acc += layer[rr as usize * w + cc as usize];
                    }
                }
            }
            // Keep painted pixels at least 60% bright so the mask edge stays visible.
            let v = acc / 9.0;
            soft[r * w + c] = if painted.get(r, c) {
                v.max(0.6 * layer[r * w + c])
            } else {
                v
            };
        }
    }

    let noise = Normal::new(0.0, spec.noise.max(0.0) as f64).expect("finite sigma");
    let shading_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let iris_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut img = GrayImage::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 + 0.5 - roi.center_row as f64;
            let dx = c as f64 + 0.5 - roi.center_col as f64;
            let d = (dy * dy + dx * dx).sqrt() / rad;
            let base = if roi.contains(r, c) {
                // Red reflex: brighter centre, gentle low-frequency shading.
                spec.background as f64
                    + 0.04 * (1.0 - d * d)
                    + 0.015 * (dy.atan2(dx) * 2.0 + shading_phase).sin() * d
            } else {
                let angle = dy.atan2(dx);
                0.08 + 0.03 * (angle * 24.0 + iris_phase).sin().abs() + 0.02 * (d - 1.0).min(1.0)
            };
            let v = base + spec.contrast as f64 * soft[r * w + c] + noise.sample(rng);
            img.set(r, c, v.clamp(0.0, 1.0) as f32);
        }
    }
    img
}

/// Parameters for a whole synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSynthSpec {
    pub count: usize,
    /// Share of negative (treatment not yet required) eyes.
    pub negative_share: f64,
    /// Area fraction range for negatives; must stay below the label threshold.
    pub negative_area: (f64, f64),
    /// Share of negatives with a completely clear capsule.
    pub clear_share: f64,
    pub positive_area: (f64, f64),
    pub sample: SynthSpec,
}

impl Default for DatasetSynthSpec {
    fn default() -> Self {
        Self {
            count: 118,
            negative_share: 18.0 / 118.0,
            negative_area: (0.003, 0.03),
            clear_share: 0.3,
            positive_area: (0.06, 0.6),
            sample: SynthSpec::default(),
        }
    }
}

/// One case of a synthetic dataset.
#[derive(Clone, Debug)]
pub struct SynthCase {
    pub id: String,
    pub sample: SynthSample,
}

/// Generates `spec.count` eyes; case `i` gets id `eye{i:03}`.
pub fn synthesize_dataset(spec: &DatasetSynthSpec, seed: u64) -> Result<Vec<SynthCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_neg = (spec.count as f64 * spec.negative_share).round() as usize;
    let mut negative = vec![true; n_neg];
    negative.resize(spec.count, false);
    // Deterministic interleaving of negatives among positives.
    for i in (1..negative.len()).rev() {
        let j = rng.random_range(0..=i);
        negative.swap(i, j);
    }
    let mut cases = Vec::with_capacity(spec.count);
    for (i, &neg) in negative.iter().enumerate() {
        let area_fraction = if neg {
            if rng.random_bool(spec.clear_share) {
                0.0
            } else {
                rng.random_range(spec.negative_area.0..=spec.negative_area.1)
            }
        } else {
            rng.random_range(spec.positive_area.0..=spec.positive_area.1)
        };
        let sample_spec = SynthSpec {
            area_fraction,
            ..spec.sample.clone()
        };
        let sample_seed = rng.random::<u64>();
        let mut sample = synthesize_sample(&sample_spec, sample_seed)?;
        let id = format!("eye{i:03}");
        sample.image = RetroImage::new(
            id.clone(),
            sample.image.pixels().clone(),
            sample.image.roi(),
            Some(sample.label),
        )?;
        cases.push(SynthCase { id, sample });
    }
    Ok(cases)
}

/// Writes images and GT1 masks as PNG under `dir` and returns the manifest
/// (also saved as `dir/manifest.json`).
pub fn write_dataset(dir: impl AsRef<Path>, cases: &[SynthCase]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut items = Vec::with_capacity(cases.len());
    for case in cases {
        let image = Path::new("images").join(format!("{}.png", case.id));
        let gt1 = Path::new("gt1").join(format!("{}.png", case.id));
        case.sample.image.pixels().write_png(dir.join(&image))?;
        case.sample.mask.write_png(dir.join(&gt1))?;
        items.push(ManifestItem {
            id: case.id.clone(),
            image,
            gt1: Some(gt1),
            gt2: None,
            label: Some(case.sample.label),
            excluded: false,
            roi: case.sample.image.roi(),
        });
    }
    let manifest = DatasetManifest::new(dir, items)?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
