use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamKind, Parameterized};
use crate::numerics::{lit, Scalar};

/// Momentum buffers, one per trainable parameter in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity<T: Scalar> {
    pub buffers: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> Velocity<T> {
    pub fn zeros(model: &dyn Parameterized<T>) -> Self {
        let mut buffers = Vec::new();
        model.visit_params(&mut |p| {
            if p.kind != ParamKind::Buffer {
                buffers.push((p.name.clone(), vec![T::zero(); p.value.len()]));
            }
        });
        Self { buffers }
    }
}

/// One SGD step from the gradients accumulated on `model`:
/// `g = grad + wd * p` (no decay for [`ParamKind::NoDecay`]),
/// `v = momentum * v + g`, `p = p - lr * v`. Missing gradients count as
/// zero. A non-finite gradient aborts before anything is updated.
pub fn sgd_step<T: Scalar>(
    model: &mut dyn Parameterized<T>,
    velocity: &mut Velocity<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut bad = None;
    model.visit_params(&mut |p| {
        if bad.is_none() && p.kind != ParamKind::Buffer {
            if let Some(g) = p.value.grad() {
                if g.iter().any(|v| !v.to_f64c().is_finite()) {
                    bad = Some(p.name.clone());
                }
            }
        }
    });
    if let Some(name) = bad {
        return Err(Error::numeric(format!("non-finite gradient for {name}")));
    }

    let (lr, mom, wd) = (lit::<T>(lr), lit::<T>(cfg.momentum), lit::<T>(cfg.weight_decay));
    let mut slots = velocity.buffers.iter_mut();
    let mut err = None;
    model.visit_params_mut(&mut |p| {
        if p.kind == ParamKind::Buffer || err.is_some() {
            return;
        }
        let Some((_, v)) = slots.next().filter(|(n, v)| *n == p.name && v.len() == p.value.len()) else {
            err = Some(Error::invalid(format!("velocity does not match parameter {}", p.name)));
            return;
        };
        let grad = p.value.grad();
        let decay = if p.kind == ParamKind::Weight { wd } else { T::zero() };
        let data: Vec<T> = p
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]) + decay * w;
                v[i] = mom * v[i] + g;
                w - lr * v[i]
            })
            .collect();
        if let Err(e) = p.set(data) {
            err = Some(e);
        }
    });
    if err.is_none() && slots.next().is_some() {
        err = Some(Error::invalid(
            "velocity has more buffers than the model has parameters",
        ));
    }
    err.map_or(Ok(()), Err)
}
