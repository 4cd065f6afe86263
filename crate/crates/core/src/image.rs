//! Grayscale images, binary masks and their PNG encoding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Wraps raw row-major pixels. Every value must be finite and in `[0, 1]`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{} pixels supplied for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Bilinear resampling onto a `height` x `width` grid (pixel-centre aligned).
    pub fn resize_bilinear(&self, height: usize, width: usize) -> GrayImage {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = GrayImage::new(height, width);
        for r in 0..height {
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = y.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = (y - y0 as f64) as f32;
            for c in 0..width {
                let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = (x - x0 as f64) as f32;
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                out.set(r, c, (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
        out
    }

    /// Reads an 8-bit grayscale PNG (colour inputs are converted to luma).
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let (height, width, raw) = Self::read_raw_luma(path.as_ref())?;
        Ok(Self {
            height,
            width,
            data: raw.into_iter().map(|v| v as f32 / 255.0).collect(),
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_luma8(path.as_ref(), self.height, self.width, self.to_u8())
    }
}

/// Where a mask came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskSource {
    /// Manually drawn, expert-supervised masks (the gold standard).
    Gt1,
    /// Automated k-means + morphology masks.
    Gt2,
    /// Network output.
    Predicted,
}

/// Binary mask (`1` = PCO), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
    source: MaskSource,
}

impl Mask {
    pub fn empty(height: usize, width: usize, source: MaskSource) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
            source,
        }
    }

    pub fn full(height: usize, width: usize, source: MaskSource) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
            source,
        }
    }

    /// Builds a mask from values that must all be 0 or 1.
    pub fn from_vec(
        height: usize,
        width: usize,
        data: Vec<u8>,
        source: MaskSource,
    ) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{} mask values supplied for a {height}x{width} mask",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(non_binary(&data));
        }
        Ok(Self {
            height,
            width,
            data,
            source,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        source: MaskSource,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self {
            height,
            width,
            data,
            source,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    pub fn with_source(mut self, source: MaskSource) -> Self {
        self.source = source;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// `true` when every foreground pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn ensure_same_shape(&self, other: &Mask) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Nearest-neighbour resampling (pixel-centre aligned).
    pub fn resize_nearest(&self, height: usize, width: usize) -> Mask {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Mask::from_fn(height, width, self.source, |r, c| {
            let y = (((r as f64 + 0.5) * sy) as usize).min(self.height - 1);
            let x = (((c as f64 + 0.5) * sx) as usize).min(self.width - 1);
            self.get(y, x)
        })
    }

    /// Reads a PNG where every pixel must be exactly 0 or 255.
    pub fn read_png(path: impl AsRef<Path>, source: MaskSource) -> Result<Self> {
        let (h, w, raw) = GrayImage::read_raw_luma(path.as_ref())?;
        if raw.iter().any(|&v| v != 0 && v != 255) {
            return Err(non_binary(&raw));
        }
        Ok(Self {
            height: h,
            width: w,
            data: raw.into_iter().map(|v| (v != 0) as u8).collect(),
            source,
        })
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw = self
            .data
            .iter()
            .map(|&v| if v != 0 { 255 } else { 0 })
            .collect();
        write_luma8(path.as_ref(), self.height, self.width, raw)
    }
}

impl GrayImage {
    pub(crate) fn read_raw_luma(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
        let img = ::image::open(path)
            .map_err(|source| Error::Codec {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        Ok((h as usize, w as usize, img.into_raw()))
    }
}

/// Builds the histogram diagnostic for a mask that is not strictly binary.
pub(crate) fn non_binary(values: &[u8]) -> Error {
    let mut counts = [0usize; 256];
    for &v in values {
        counts[v as usize] += 1;
    }
    let present: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(v, &n)| (v, n))
        .collect();
    let mut histogram = present
        .iter()
        .take(8)
        .map(|(v, n)| format!("{v}:{n}"))
        .collect::<Vec<_>>()
        .join(", ");
    if present.len() > 8 {
        histogram.push_str(", ...");
    }
    Error::NonBinaryMask {
        distinct: present.len(),
        histogram,
    }
}

fn write_luma8(path: &Path, height: usize, width: usize, raw: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let buf = ::image::GrayImage::from_raw(width as u32, height as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(GrayImage::from_vec(1, 2, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::from_vec(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = Mask::from_fn(7, 5, MaskSource::Gt1, |r, c| (r + c) % 3 == 0);
        m.write_png(&path).unwrap();
        assert_eq!(Mask::read_png(&path, MaskSource::Gt1).unwrap(), m);
    }

    #[test]
    fn non_binary_png_reports_histogram() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = GrayImage::from_vec(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        img.write_png(&path).unwrap();
        match Mask::read_png(&path, MaskSource::Gt1) {
            Err(Error::NonBinaryMask {
                distinct,
                histogram,
            }) => {
                assert_eq!(distinct, 3);
                assert!(histogram.contains("128:1"), "{histogram}");
            }
            other => panic!("expected non-binary error, got {other:?}"),
        }
    }

    #[test]
    fn resize_same_shape_is_identity() {
        let img = GrayImage::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(img.resize_bilinear(2, 2), img);
        let up = img.resize_bilinear(4, 4);
        assert_eq!(up.shape(), (4, 4));
        assert!((up.get(0, 0) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn nearest_resize_keeps_mask_binary() {
        let m = Mask::from_fn(8, 8, MaskSource::Gt1, |r, _| r < 4);
        let down = m.resize_nearest(4, 4);
        assert_eq!(down.area(), 8);
        let up = m.resize_nearest(16, 16);
        assert_eq!(up.area(), 128);
    }
}
