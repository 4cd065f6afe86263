//! Dense `N×C×H×W` batches.

use pco_core::{GrayImage, Mask, MaskSource};

use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::shape(
                format!("{want} elements for {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Stacks single-channel images; all must share one shape.
    pub fn from_images(images: &[GrayImage]) -> Result<Self> {
        stack(
            images
                .iter()
                .map(|im| (im.shape(), im.as_slice().iter().map(|&v| T::lit(v as f64)))),
        )
    }

    /// Stacks masks as 0/1 targets.
    pub fn from_masks(masks: &[Mask]) -> Result<Self> {
        stack(
            masks
                .iter()
                .map(|m| (m.shape(), m.as_slice().iter().map(|&v| T::lit(v as f64)))),
        )
    }

    /// `[n, c, h, w]`.
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[i * per..(i + 1) * per]
    }

    pub(crate) fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[i * per..(i + 1) * per]
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Thresholds each single-channel sample into a predicted mask.
    pub fn to_masks(&self, threshold: f64) -> Result<Vec<Mask>> {
        let [n, c, h, w] = self.shape;
        if c != 1 {
            return Err(Error::shape("1 channel", c));
        }
        (0..n)
            .map(|i| binarize(self.sample(i), h, w, threshold))
            .collect()
    }
}

fn stack<T: Real, I: Iterator<Item = T>>(
    items: impl Iterator<Item = ((usize, usize), I)>,
) -> Result<Tensor<T>> {
    let mut shape: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    let mut n = 0;
    for (s, values) in items {
        match shape {
            None => shape = Some(s),
            Some(first) if first != s => {
                return Err(Error::shape(format!("{first:?}"), format!("{s:?}")))
            }
            _ => {}
        }
        data.extend(values);
        n += 1;
    }
    let (h, w) = shape.unwrap_or((0, 0));
    Tensor::from_vec([n, 1, h, w], data)
}

/// Pixel is 1 iff `prob >= threshold`.
pub fn binarize<T: Real>(probs: &[T], h: usize, w: usize, threshold: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    if probs.len() != h * w {
        return Err(Error::shape(h * w, probs.len()));
    }
    let data = probs
        .iter()
        .map(|p| u8::from(p.as_f64() >= threshold))
        .collect();
    Ok(Mask::from_vec(h, w, data, MaskSource::Predicted)?)
}
