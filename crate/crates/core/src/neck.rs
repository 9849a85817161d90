//! Channel reduction and residual convolution blocks between the encoder's
//! spatial map and the detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Mode, Param, Parameterized};
use crate::numerics::{gelu, ops, Rng, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeckConfig {
    pub out_channels: usize,
    pub num_blocks: usize,
}

impl NeckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 {
            return Err(Error::invalid("neck out_channels must be positive"));
        }
        Ok(())
    }
}

/// conv3x3 -> BN -> GELU -> conv3x3 -> BN, plus the block input, then GELU.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(name: &str, channels: usize, rng: &mut Rng) -> Self {
        let fan_in = 9 * channels;
        let conv = |tag: &str, rng: &mut Rng| {
            let w = Param::kaiming(format!("{name}.{tag}.weight"), &[3, 3, channels, channels], fan_in, rng);
            Conv2d::new(&format!("{name}.{tag}"), w, false, 1, 1)
        };
        Self {
            conv1: conv("conv1", rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), channels),
            conv2: conv("conv2", rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = gelu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?;
        Ok(gelu(&ops::add(&h, x)?))
    }
}

impl<T: Scalar> Parameterized<T> for ResidualBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct Neck<T: Scalar> {
    pub cfg: NeckConfig,
    /// Learned 1x1 projection to `out_channels`.
    pub reduce: Conv2d<T>,
    pub blocks: Vec<ResidualBlock<T>>,
}

impl<T: Scalar> Neck<T> {
    pub fn new(cfg: NeckConfig, in_channels: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.out_channels;
        let w = Param::normal(
            "neck.reduce.weight",
            &[1, 1, in_channels, c],
            (1.0 / in_channels as f64).sqrt(),
            rng,
        );
        let reduce = Conv2d::new("neck.reduce", w, true, 1, 0);
        let blocks = (0..cfg.num_blocks)
            .map(|i| ResidualBlock::new(&format!("neck.blocks.{i}"), c, rng))
            .collect();
        Ok(Self { cfg, reduce, blocks })
    }

    pub fn in_channels(&self) -> usize {
        self.reduce.weight.value.shape()[2]
    }

    pub fn reduce_channels(&self, fm: &Tensor<T>) -> Result<Tensor<T>> {
        self.reduce.forward(fm)
    }

    pub fn residual_stack(&self, fm: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = fm.clone();
        for block in &self.blocks {
            x = block.forward(&x, mode)?;
        }
        Ok(x)
    }

    pub fn forward(&self, fm: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.residual_stack(&self.reduce_channels(fm)?, mode)
    }
}

impl<T: Scalar> Parameterized<T> for Neck<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.reduce.visit_params(f);
        for b in &self.blocks {
            b.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_params_mut(f);
        for b in &mut self.blocks {
            b.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use crate::numerics::check_gradients;

    fn random_map(r: usize, c: usize, ch: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_vec((0..r * c * ch).map(|_| rng.normal()).collect(), &[r, c, ch]).unwrap()
    }

    fn neck(in_ch: usize, out: usize, blocks: usize) -> Neck<f64> {
        Neck::new(
            NeckConfig {
                out_channels: out,
                num_blocks: blocks,
            },
            in_ch,
            &mut Rng::new(1),
        )
        .unwrap()
    }

    #[test]
    fn reduction_shapes() {
        let fm = random_map(7, 7, 768, 0);
        assert_eq!(neck(768, 512, 0).reduce_channels(&fm).unwrap().shape(), &[7, 7, 512]);
        assert_eq!(neck(768, 8, 0).reduce_channels(&fm).unwrap().shape(), &[7, 7, 8]);
        assert!(Neck::<f64>::new(
            NeckConfig {
                out_channels: 0,
                num_blocks: 0
            },
            4,
            &mut Rng::new(0)
        )
        .is_err());
    }

    #[test]
    fn identity_reduction_passes_input() {
        let mut n = neck(4, 4, 0);
        let mut eye = vec![0.0; 16];
        (0..4).for_each(|i| eye[i * 4 + i] = 1.0);
        n.reduce.weight.set(eye).unwrap();
        let fm = random_map(3, 5, 4, 2);
        assert_eq!(n.forward(&fm, Mode::Train).unwrap().data(), fm.data());
    }

    #[test]
    fn empty_stack_is_identity() {
        let fm = random_map(4, 4, 6, 3);
        assert_eq!(
            neck(6, 6, 0).residual_stack(&fm, Mode::Train).unwrap().data(),
            fm.data()
        );
    }

    #[test]
    fn zero_conv_blocks_reduce_to_gelu() {
        let mut n = neck(3, 3, 2);
        n.visit_params_mut(&mut |p| {
            if p.kind == ParamKind::Weight && p.name.contains("blocks") {
                p.set(vec![0.0; p.value.len()]).unwrap();
            }
        });
        let fm = random_map(4, 5, 3, 4);
        // Eval mode with fresh running stats is the identity normalization (up to eps).
        let out = n.residual_stack(&fm, Mode::Eval).unwrap();
        let expect = gelu(&gelu(&fm));
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_preserves_shape() {
        let fm = random_map(5, 6, 4, 5);
        for blocks in [1, 4, 8] {
            assert_eq!(
                neck(4, 4, blocks).residual_stack(&fm, Mode::Train).unwrap().shape(),
                &[5, 6, 4]
            );
        }
    }

    #[test]
    fn deep_stack_propagates_gradient_to_every_parameter() {
        let n = neck(5, 4, 16);
        let fm = random_map(4, 4, 5, 6);
        let w = random_map(4, 4, 4, 7);
        let out = n.forward(&fm, Mode::Train).unwrap();
        ops::sum(&ops::mul(&out, &w).unwrap()).backward().unwrap();
        n.visit_params(&mut |p| {
            if p.kind != ParamKind::Buffer {
                let g = p.value.grad().unwrap_or_default();
                assert!(g.iter().any(|v| *v != 0.0), "{} has no gradient", p.name);
            }
        });
    }

    #[test]
    fn running_stats_update_only_in_train_mode() {
        let n = neck(3, 3, 1);
        let fm = random_map(4, 4, 3, 8);
        let snapshot = |n: &Neck<f64>| {
            let mut v = Vec::new();
            n.visit_params(&mut |p| {
                if p.kind == ParamKind::Buffer {
                    v.extend_from_slice(p.value.data())
                }
            });
            v
        };
        let before = snapshot(&n);
        n.forward(&fm, Mode::Eval).unwrap();
        assert_eq!(before, snapshot(&n));
        n.forward(&fm, Mode::Train).unwrap();
        assert_ne!(before, snapshot(&n));
    }

    #[test]
    fn residual_block_gradients_match_finite_differences() {
        let n = neck(3, 3, 1);
        let block = n.blocks[0].clone();
        let w = random_map(4, 3, 3, 9);
        let r = check_gradients(
            "residual_block",
            &[
                random_map(4, 3, 3, 10),
                block.conv1.weight.value.detach(),
                block.bn2.gamma.value.detach(),
            ],
            |t| {
                let mut b = block.clone();
                b.conv1.weight.value = t[1].clone();
                b.bn2.gamma.value = t[2].clone();
                Ok(ops::sum(&ops::mul(&b.forward(&t[0], Mode::Train)?, &w)?))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
    }
}
