//! Learned parameters and the small layers the model is assembled from.

use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::numerics::{batch_norm, conv2d, layer_norm, lit, ops, Rng, Scalar, Tensor};

/// How the optimizer treats a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained with weight decay.
    Weight,
    /// Trained without weight decay (biases, normalization gains and shifts).
    NoDecay,
    /// Never gradient-updated (batch-norm running statistics).
    Buffer,
}

/// Named tensor owned by a layer.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, data: Vec<T>, shape: &[usize]) -> Self {
        let value = Tensor::leaf(data, shape, kind != ParamKind::Buffer).expect("parameter shape");
        Self {
            name: name.into(),
            kind,
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, kind: ParamKind, shape: &[usize]) -> Self {
        Self::new(name, kind, vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn filled(name: impl Into<String>, kind: ParamKind, shape: &[usize], v: f64) -> Self {
        Self::new(name, kind, vec![lit(v); shape.iter().product()], shape)
    }

    /// Truncated normal, std 0.02.
    pub fn trunc_normal(name: impl Into<String>, shape: &[usize], rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(rng.truncated_normal(0.02))).collect();
        Self::new(name, ParamKind::Weight, data, shape)
    }

    pub fn normal(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(rng.normal() * std)).collect();
        Self::new(name, ParamKind::Weight, data, shape)
    }

    /// Kaiming-normal (fan-in) weights, for layers followed by a nonlinearity.
    pub fn kaiming(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        Self::normal(name, shape, (2.0 / fan_in as f64).sqrt(), rng)
    }

    /// Replaces the values, keeping shape and gradient tracking; drops any gradient.
    pub fn set(&mut self, data: Vec<T>) -> Result<()> {
        if data.len() != self.value.len() {
            return Err(Error::invalid(format!(
                "{}: {} values for shape {:?}",
                self.name,
                data.len(),
                self.value.shape()
            )));
        }
        self.value = Tensor::leaf(data, self.value.shape(), self.kind != ParamKind::Buffer)?;
        Ok(())
    }

    pub fn t(&self) -> &Tensor<T> {
        &self.value
    }
}

/// Anything that owns parameters.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| names.push(p.name.clone()));
        names
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.kind != ParamKind::Buffer {
                n += p.value.len()
            }
        });
        n
    }

    fn zero_grads(&self) {
        self.visit_params(&mut |p| p.value.zero_grad());
    }
}

/// Train vs. inference behavior of batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer on `[n, in]` rows.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn trunc_normal(name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::trunc_normal(format!("{name}.weight"), &[input, output], rng),
            bias: Param::zeros(format!("{name}.bias"), ParamKind::NoDecay, &[output]),
        }
    }

    pub fn kaiming(name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::kaiming(format!("{name}.weight"), &[input, output], input, rng),
            bias: Param::zeros(format!("{name}.bias"), ParamKind::NoDecay, &[output]),
        }
    }

    pub fn normal(name: &str, input: usize, output: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: Param::normal(format!("{name}.weight"), &[input, output], std, rng),
            bias: Param::zeros(format!("{name}.bias"), ParamKind::NoDecay, &[output]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, self.weight.t(), Some(self.bias.t()))
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Convolution with kernel `[k, k, in, out]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, weight: Param<T>, bias: bool, stride: usize, padding: usize) -> Self {
        let cout = *weight.value.shape().last().unwrap();
        Self {
            weight,
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), ParamKind::NoDecay, &[cout])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            self.weight.t(),
            self.bias.as_ref().map(|b| b.t()),
            self.stride,
            self.padding,
        )
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub const EPS: f64 = 1e-6;

    pub fn new(name: &str, width: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), ParamKind::NoDecay, &[width], 1.0),
            beta: Param::zeros(format!("{name}.beta"), ParamKind::NoDecay, &[width]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, self.gamma.t(), self.beta.t(), lit(Self::EPS))
    }
}

impl<T: Scalar> Parameterized<T> for LayerNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

#[derive(Debug)]
struct RunningStats<T: Scalar> {
    mean: Param<T>,
    var: Param<T>,
}

/// Batch norm over the channel axis of a feature map.
///
/// Running statistics sit behind a lock so that a shared model can be
/// trained through `&self`.
#[derive(Debug)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    running: Mutex<RunningStats<T>>,
}

impl<T: Scalar> Clone for BatchNorm<T> {
    fn clone(&self) -> Self {
        let r = self.running.lock().expect("running stats lock");
        Self {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running: Mutex::new(RunningStats {
                mean: r.mean.clone(),
                var: r.var.clone(),
            }),
        }
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), ParamKind::NoDecay, &[channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), ParamKind::NoDecay, &[channels]),
            running: Mutex::new(RunningStats {
                mean: Param::zeros(format!("{name}.running_mean"), ParamKind::Buffer, &[channels]),
                var: Param::filled(format!("{name}.running_var"), ParamKind::Buffer, &[channels], 1.0),
            }),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut running = self.running.lock().expect("running stats lock");
        let (y, stats) = batch_norm(
            x,
            self.gamma.t(),
            self.beta.t(),
            running.mean.value.data(),
            running.var.value.data(),
            mode == Mode::Train,
            lit(Self::EPS),
        )?;
        if let Some(stats) = stats {
            let m: T = lit(Self::MOMENTUM);
            let keep = T::one() - m;
            let mean = running
                .mean
                .value
                .data()
                .iter()
                .zip(&stats.mean)
                .map(|(r, b)| keep * *r + m * *b)
                .collect();
            let var = running
                .var
                .value
                .data()
                .iter()
                .zip(&stats.var_unbiased)
                .map(|(r, b)| keep * *r + m * *b)
                .collect();
            running.mean.set(mean)?;
            running.var.set(var)?;
        }
        Ok(y)
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        let r = self.running.lock().expect("running stats lock");
        f(&r.mean);
        f(&r.var);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        let r = self.running.get_mut().expect("running stats lock");
        f(&mut r.mean);
        f(&mut r.var);
    }
}
