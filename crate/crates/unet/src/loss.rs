//! Binary cross-entropy.

use pco_core::Mask;

use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probability clamp for the loss and the network output.
pub const EPS: f64 = 1e-7;

pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean over pixels of `−[y·ln p + (1−y)·ln(1−p)]`, `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    bce_slices(pred.as_slice(), target.as_slice())
}

/// [`bce_loss`] for one probability map against a mask.
pub fn bce_mask<T: Real>(pred: &[T], target: &Mask) -> Result<f64> {
    let (h, w) = target.shape();
    if pred.len() != h * w {
        return Err(Error::shape(h * w, pred.len()));
    }
    let y: Vec<T> = target
        .as_slice()
        .iter()
        .map(|&v| T::lit(v as f64))
        .collect();
    bce_slices(pred, &y)
}

fn bce_slices<T: Real>(pred: &[T], target: &[T]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for &p in pred {
        let p = p.as_f64();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, y)| bce_term(p.as_f64(), y.as_f64()))
        .sum();
    Ok(sum / pred.len() as f64)
}
