//! Paired affine augmentation of images and masks.
//!
//! One transform (rotation, shift, shear, horizontal flip about the image
//! centre) is drawn per pair and applied to both the image (bilinear) and its
//! mask (nearest neighbour). Pixels mapped from outside the frame are 0.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RetroImage;
use crate::image::{GrayImage, Mask};
use crate::{Error, Result};

/// Magnitudes of the random transforms. Each value is drawn uniformly from
/// `[-magnitude, +magnitude]`; the flip is a fair coin when enabled.
///
/// Rotation and shear are in degrees. The defaults are deliberately tiny
/// (0.2° rotation, 0.05° shear); override them in the run config if the
/// intended reading is a fraction rather than degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub rotation_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub shear_deg: f64,
    pub horizontal_flip: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_deg: 0.2,
            width_shift_frac: 0.05,
            height_shift_frac: 0.05,
            shear_deg: 0.05,
            horizontal_flip: true,
        }
    }
}

impl AugmentSpec {
    /// No transform at all.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            shear_deg: 0.0,
            horizontal_flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [
            self.rotation_deg,
            self.width_shift_frac,
            self.height_shift_frac,
            self.shear_deg,
        ];
        if mags.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "augmentation magnitudes must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One concrete transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub shift_x_frac: f64,
    pub shift_y_frac: f64,
    pub shear_deg: f64,
    pub flip: bool,
}

fn symmetric(rng: &mut impl Rng, magnitude: f64) -> f64 {
    if magnitude == 0.0 {
        0.0
    } else {
        rng.random_range(-magnitude..=magnitude)
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_deg: 0.0,
        shift_x_frac: 0.0,
        shift_y_frac: 0.0,
        shear_deg: 0.0,
        flip: false,
    };

    pub fn sample(spec: &AugmentSpec, rng: &mut impl Rng) -> Self {
        Self {
            rotation_deg: symmetric(rng, spec.rotation_deg),
            shift_x_frac: symmetric(rng, spec.width_shift_frac),
            shift_y_frac: symmetric(rng, spec.height_shift_frac),
            shear_deg: symmetric(rng, spec.shear_deg),
            flip: spec.horizontal_flip && rng.random_bool(0.5),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub const CSV_HEADER: &'static str = "rotation_deg,shift_x_frac,shift_y_frac,shear_deg,flip";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{}",
            self.rotation_deg,
            self.shift_x_frac,
            self.shift_y_frac,
            self.shear_deg,
            self.flip as u8
        )
    }

    pub fn parse_csv_row(row: &str) -> Result<Self> {
        let f: Vec<&str> = row.trim().split(',').collect();
        let bad = || Error::InvalidArgument(format!("bad transform row `{row}`"));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            rotation_deg: num(f[0])?,
            shift_x_frac: num(f[1])?,
            shift_y_frac: num(f[2])?,
            shear_deg: num(f[3])?,
            flip: match f[4] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
        })
    }

    /// Maps an output pixel coordinate to the input coordinate it samples.
    fn inverse_mapper(&self, height: usize, width: usize) -> impl Fn(f64, f64) -> (f64, f64) {
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let ty = self.shift_y_frac * height as f64;
        let tx = self.shift_x_frac * width as f64;
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let f = if self.flip { -1.0 } else { 1.0 };
        // Forward linear part M = R · Shear · Flip acting on (x, y):
        //   R = [[c, -s], [s, c]], Shear = [[1, k], [0, 1]], Flip = diag(f, 1).
        let m00 = c * f;
        let m01 = c * k - s;
        let m10 = s * f;
        let m11 = s * k + c;
        let det = m00 * m11 - m01 * m10;
        let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);
        move |y: f64, x: f64| {
            let (dx, dy) = (x - cx - tx, y - cy - ty);
            (cy + i10 * dx + i11 * dy, cx + i00 * dx + i01 * dy)
        }
    }
}

/// Bilinear warp with zero fill.
pub fn warp_image(image: &GrayImage, params: &AffineParams) -> GrayImage {
    if params.is_identity() {
        return image.clone();
    }
    let (h, w) = image.shape();
    let map = params.inverse_mapper(h, w);
    let tap = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            0.0
        } else {
            image.get(r as usize, c as usize) as f64
        }
    };
    let mut out = GrayImage::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = map(r as f64, c as f64);
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = tap(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + tap(y0, x0 + 1) * fx * (1.0 - fy)
                + tap(y0 + 1, x0) * (1.0 - fx) * fy
                + tap(y0 + 1, x0 + 1) * fx * fy;
            out.set(r, c, v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Nearest-neighbour warp with zero fill; the result stays binary.
pub fn warp_mask(mask: &Mask, params: &AffineParams) -> Mask {
    if params.is_identity() {
        return mask.clone();
    }
    let (h, w) = mask.shape();
    let map = params.inverse_mapper(h, w);
    Mask::from_fn(h, w, mask.source(), |r, c| {
        let (y, x) = map(r as f64, c as f64);
        let (y, x) = ((y + 0.5).floor(), (x + 0.5).floor());
        y >= 0.0
            && x >= 0.0
            && (y as usize) < h
            && (x as usize) < w
            && mask.get(y as usize, x as usize)
    })
}

/// Draws one transform from `seed` and applies it to both inputs.
pub fn augment_pair(
    image: &RetroImage,
    mask: &Mask,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<(RetroImage, Mask)> {
    let (img, m, _) = augment_pair_traced(image, mask, spec, seed)?;
    Ok((img, m))
}

/// Like [`augment_pair`], also returning the transform that was applied.
pub fn augment_pair_traced(
    image: &RetroImage,
    mask: &Mask,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<(RetroImage, Mask, AffineParams)> {
    if image.shape() != mask.shape() {
        return Err(Error::shape(image.shape(), mask.shape()));
    }
    spec.validate()?;
    let params = AffineParams::sample(spec, &mut ChaCha8Rng::seed_from_u64(seed));
    let out = image.with_pixels(warp_image(image.pixels(), &params))?;
    Ok((out, warp_mask(mask, &params), params))
}

/// One augmented training example.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    /// Index into the source pairs.
    pub source: usize,
    pub params: AffineParams,
    pub image: GrayImage,
    pub mask: Mask,
}

/// A batch of augmented pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub epoch: usize,
    pub step: usize,
    pub pairs: Vec<AugmentedPair>,
}

/// Lazily generated augmentation stream: exactly `epochs * steps_per_epoch`
/// batches of `batch_size` pairs. Sources are visited in reshuffled passes;
/// each draw has its own seed taken from the stream RNG, so the content is
/// fixed by the stream seed alone.
pub struct AugmentStream<'a> {
    pairs: &'a [(GrayImage, Mask)],
    spec: AugmentSpec,
    epochs: usize,
    steps_per_epoch: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    emitted: usize,
}

/// Builds an [`AugmentStream`] over `pairs`.
pub fn augment_stream<'a>(
    pairs: &'a [(GrayImage, Mask)],
    spec: &AugmentSpec,
    epochs: usize,
    steps_per_epoch: usize,
    batch_size: usize,
    seed: u64,
) -> Result<AugmentStream<'a>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "augmentation stream needs at least one pair".into(),
        ));
    }
    if epochs == 0 || steps_per_epoch == 0 || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs, steps per epoch and batch size must all be at least 1".into(),
        ));
    }
    spec.validate()?;
    for (img, m) in pairs {
        if img.shape() != m.shape() {
            return Err(Error::shape(img.shape(), m.shape()));
        }
    }
    Ok(AugmentStream {
        pairs,
        spec: spec.clone(),
        epochs,
        steps_per_epoch,
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(seed),
        order: Vec::new(),
        cursor: 0,
        emitted: 0,
    })
}

impl AugmentStream<'_> {
    pub fn total_batches(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    fn next_source(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.pairs.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

impl Iterator for AugmentStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.emitted == self.total_batches() {
            return None;
        }
        let epoch = self.emitted / self.steps_per_epoch;
        let step = self.emitted % self.steps_per_epoch;
        let mut pairs = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let source = self.next_source();
            let draw_seed = self.rng.next_u64();
            let params =
                AffineParams::sample(&self.spec, &mut ChaCha8Rng::seed_from_u64(draw_seed));
            let (img, mask) = &self.pairs[source];
            pairs.push(AugmentedPair {
                source,
                params,
                image: warp_image(img, &params),
                mask: warp_mask(mask, &params),
            });
        }
        self.emitted += 1;
        Some(Batch { epoch, step, pairs })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total_batches() - self.emitted;
        (left, Some(left))
    }
}

impl ExactSizeIterator for AugmentStream<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Roi;
    use crate::MaskSource;

    fn pattern(h: usize, w: usize) -> (RetroImage, Mask) {
        let mut px = GrayImage::new(h, w);
        for r in 0..h {
            for c in 0..w {
                px.set(r, c, ((r * 31 + c * 17) % 97) as f32 / 96.0);
            }
        }
        let img = RetroImage::new("p", px, Roi::inscribed(h.min(w)), None).unwrap();
        let mask = Mask::from_fn(h, w, MaskSource::Gt1, |r, c| (r * 3 + c) % 7 < 3);
        (img, mask)
    }

    #[test]
    fn identity_spec_is_exact() {
        let (img, mask) = pattern(40, 48);
        for seed in 0..20 {
            let (i2, m2) = augment_pair(&img, &mask, &AugmentSpec::identity(), seed).unwrap();
            assert_eq!(i2, img);
            assert_eq!(m2, mask);
        }
    }

    #[test]
    fn forced_flip_mirrors_columns() {
        let (img, mask) = pattern(36, 40);
        let params = AffineParams {
            flip: true,
            ..AffineParams::IDENTITY
        };
        let fi = warp_image(img.pixels(), &params);
        let fm = warp_mask(&mask, &params);
        for r in 0..36 {
            for c in 0..40 {
                assert_eq!(fi.get(r, c), img.pixels().get(r, 39 - c));
                assert_eq!(fm.get(r, c), mask.get(r, 39 - c));
            }
        }
    }

    #[test]
    fn flip_only_spec_flips_half_the_time() {
        let (img, mask) = pattern(32, 32);
        let spec = AugmentSpec {
            horizontal_flip: true,
            ..AugmentSpec::identity()
        };
        let flips = (0..200)
            .filter(|&s| augment_pair_traced(&img, &mask, &spec, s).unwrap().2.flip)
            .count();
        assert!((70..=130).contains(&flips), "{flips}");
    }

    #[test]
    fn whole_pixel_shift_moves_content() {
        let (img, _) = pattern(40, 40);
        let params = AffineParams {
            shift_x_frac: 0.1,
            ..AffineParams::IDENTITY
        };
        let out = warp_image(img.pixels(), &params);
        for r in 0..40 {
            for c in 0..4 {
                assert_eq!(out.get(r, c), 0.0);
            }
            for c in 4..40 {
                assert!((out.get(r, c) - img.pixels().get(r, c - 4)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (img, _) = pattern(32, 32);
        let m = Mask::empty(33, 32, MaskSource::Gt1);
        assert!(augment_pair(&img, &m, &AugmentSpec::default(), 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AffineParams::sample(&AugmentSpec::default(), &mut rng);
        assert_eq!(AffineParams::parse_csv_row(&p.csv_row()).unwrap(), p);
        assert!(AffineParams::parse_csv_row("1,2").is_err());
    }

    #[test]
    fn stream_cardinality_and_determinism() {
        let (img, mask) = pattern(32, 32);
        let pairs = vec![(img.pixels().clone(), mask.clone()); 3];
        let spec = AugmentSpec::default();
        let s = augment_stream(&pairs, &spec, 2, 3, 4, 9).unwrap();
        assert_eq!(s.len(), 6);
        let batches: Vec<Batch> = s.collect();
        assert_eq!(batches.iter().map(|b| b.pairs.len()).sum::<usize>(), 24);
        assert_eq!(batches.last().unwrap().epoch, 1);
        assert_eq!(batches.last().unwrap().step, 2);
        let again: Vec<Batch> = augment_stream(&pairs, &spec, 2, 3, 4, 9).unwrap().collect();
        assert_eq!(batches, again);

        let one: Vec<Batch> = augment_stream(&pairs, &spec, 1, 1, 1, 0).unwrap().collect();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].pairs.len(), 1);
    }

    #[test]
    fn stream_visits_every_source_each_pass() {
        let pairs: Vec<(GrayImage, Mask)> = (0..5)
            .map(|_| (GrayImage::new(8, 8), Mask::empty(8, 8, MaskSource::Gt1)))
            .collect();
        let batches: Vec<Batch> = augment_stream(&pairs, &AugmentSpec::identity(), 1, 1, 10, 1)
            .unwrap()
            .collect();
        let mut first: Vec<usize> = batches[0].pairs[..5].iter().map(|p| p.source).collect();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn stream_rejects_empty_input() {
        let pairs: Vec<(GrayImage, Mask)> = Vec::new();
        assert!(augment_stream(&pairs, &AugmentSpec::default(), 1, 1, 1, 0).is_err());
        let pairs = vec![(GrayImage::new(8, 8), Mask::empty(8, 8, MaskSource::Gt1))];
        assert!(augment_stream(&pairs, &AugmentSpec::default(), 0, 1, 1, 0).is_err());
    }
}
