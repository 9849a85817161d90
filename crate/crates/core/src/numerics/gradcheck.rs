//! Central finite differences as an oracle for the autodiff engine.

use super::scalar::{lit, Scalar};
use super::tensor::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_difference_gradient<T: Scalar>(
    f: impl Fn(&Tensor<T>) -> Result<T>,
    x: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let two_eps = eps + eps;
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = f(&Tensor::from_vec(probe.clone(), x.shape())?)?;
        probe[i] = orig - eps;
        let lo = f(&Tensor::from_vec(probe.clone(), x.shape())?)?;
        probe[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::numeric(format!("non-finite function value at coordinate {i}")));
        }
        grad.push((hi - lo) / two_eps);
    }
    Tensor::from_vec(grad, x.shape())
}

/// Outcome of one autodiff-vs-finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    /// Max over inputs of `max|autodiff - fd| / max|fd|`.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the autodiff gradient of `f` against central differences for
/// every input. `f` must map its inputs to a one-element tensor.
pub fn check_gradients<T: Scalar>(
    name: &str,
    inputs: &[Tensor<T>],
    f: impl Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    eps: T,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let leaves: Vec<Tensor<T>> = inputs
        .iter()
        .map(|t| Tensor::parameter(t.data().to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    out.backward()?;

    let mut worst = 0.0f64;
    for (slot, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![T::zero(); leaf.len()]);
        let numeric = no_grad(|| {
            finite_difference_gradient(
                |x| {
                    let mut args: Vec<Tensor<T>> = inputs.to_vec();
                    args[slot] = x.clone();
                    Ok(f(&args)?.item())
                },
                &inputs[slot],
                eps,
            )
        })?;
        let scale = numeric
            .data()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.to_f64c().abs()))
            .max(lit::<f64>(1e-12));
        let diff = analytic
            .iter()
            .zip(numeric.data())
            .fold(0.0f64, |m, (a, n)| m.max((a.to_f64c() - n.to_f64c()).abs()));
        worst = worst.max(diff / scale);
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}
