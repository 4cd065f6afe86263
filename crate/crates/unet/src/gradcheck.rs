//! Central finite-difference check of the backward pass.

use crate::loss::bce_loss;
use crate::model::UNet;
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a − n| / max(|a|, |n|)`, with the denominator floored at 1e-12.
    pub rel_error: f64,
    /// Units whose ReLU state or pooling winner differs between `θ−h` and
    /// `θ+h`. When nonzero the difference quotient straddles a kink and is
    /// not an estimate of the derivative at `θ`.
    pub kinks_crossed: usize,
}

/// Compares the backpropagated gradient of parameter `index` with
/// `(L(θ+h) − L(θ−h)) / 2h`.
pub fn check_param(
    model: &UNet<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    index: usize,
    step: f64,
) -> Result<GradCheck> {
    let mut grad = Vec::new();
    model.loss_and_grad(x, y, &mut grad)?;
    let analytic = grad[index];

    let mut probe = model.clone();
    let orig = probe.params()[index];
    probe.params_mut()[index] = orig + step;
    let plus = bce_loss(&probe.forward(x)?, y)?;
    probe.params_mut()[index] = orig - step;
    let minus = bce_loss(&probe.forward(x)?, y)?;
    let mut kinks_crossed = 0;
    for i in 0..x.len() {
        let lo = probe.activation_pattern(x.sample(i));
        probe.params_mut()[index] = orig + step;
        let hi = probe.activation_pattern(x.sample(i));
        probe.params_mut()[index] = orig - step;
        kinks_crossed += lo.iter().zip(&hi).filter(|(a, b)| a != b).count();
    }
    let numeric = (plus - minus) / (2.0 * step);

    let name = model
        .param_specs()
        .iter()
        .find(|s| s.range().contains(&index))
        .map(|s| s.name.clone())
        .unwrap_or_default();
    let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
    Ok(GradCheck {
        index,
        name,
        analytic,
        numeric,
        rel_error,
        kinks_crossed,
    })
}
