//! ViT encoder adapted for detection.
//!
//! Patch tokens produced by the encoder are laid back out on their patch grid
//! to form a spatial feature map; the class token is kept through the encoder
//! but dropped from that map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Param, ParamKind, Parameterized};
use crate::numerics::{bilinear_resize, conv2d, conv_extent, gelu, lit, ops, softmax_rows, Rng, Scalar, Tensor};


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// Patch grid (rows, cols) the position embedding is stored at.
    pub pretrained_grid: (usize, usize),
}

impl BackboneConfig {
    /// Desk-scale encoder: patch 8, width 64, 2 layers, 4 heads.
    pub fn desk() -> Self {
        Self {
            patch_size: 8,
            stride: 8,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_ratio: 4,
            pretrained_grid: (12, 12),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.embed_dim == 0 || self.num_heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("backbone extents must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::invalid(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        let overlap = p.is_multiple_of(2) && self.stride == p / 2;
        if self.stride != p && !overlap {
            return Err(Error::invalid(format!(
                "stride {} must equal the patch size {p} or half of an even patch size",
                self.stride
            )));
        }
        if self.pretrained_grid.0 == 0 || self.pretrained_grid.1 == 0 {
            return Err(Error::invalid("pretrained grid must be non-empty"));
        }
        Ok(())
    }

    /// Patch grid for an `h x w` input (valid padding).
    pub fn grid_for(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            conv_extent(h, self.patch_size, self.stride, 0),
            conv_extent(w, self.patch_size, self.stride, 0),
        ) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(Error::invalid(format!(
                "image {h}x{w} is smaller than one {0}x{0} patch",
                self.patch_size
            ))),
        }
    }
}

/// Which encoder states form the spatial map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Last layer only.
    Final,
    /// Channelwise concatenation of every layer.
    All,
}

impl std::str::FromStr for OutputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(Self::Final),
            "all" => Ok(Self::All),
            other => Err(Error::invalid(format!("unknown encoder output mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for OutputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Final => "final",
            Self::All => "all",
        })
    }
}

/// Everything the encoder produced for one image.
#[derive(Debug, Clone)]
pub struct BackboneOutput<T: Scalar> {
    /// Embedded tokens fed to the first layer, `(1+N) x D`.
    pub input_tokens: Tensor<T>,
    /// One `(1+N) x D` tensor per layer, class token first.
    pub layer_states: Vec<Tensor<T>>,
    /// One `heads x (1+N) x (1+N)` tensor per layer.
    pub attention_maps: Vec<Tensor<T>>,
    pub grid: (usize, usize),
}

/// Channel count of the map produced by [`to_spatial`].
pub fn spatial_channels(cfg: &BackboneConfig, mode: OutputMode, concat_attn: bool, grid: (usize, usize)) -> usize {
    let base = match mode {
        OutputMode::Final => cfg.embed_dim,
        OutputMode::All => cfg.embed_dim * cfg.num_layers.max(1),
    };
    base + if concat_attn { grid.0 * grid.1 } else { 0 }
}

/// Resamples position embeddings from `src` to `dst` patch grids. The class
/// token's row passes through unchanged.
pub fn interpolate_pos_embed<T: Scalar>(
    pos: &Tensor<T>,
    src: (usize, usize),
    dst: (usize, usize),
) -> Result<Tensor<T>> {
    let &[rows, d] = pos.shape() else {
        return Err(Error::invalid("position embedding must be a matrix"));
    };
    if rows != 1 + src.0 * src.1 {
        return Err(Error::invalid(format!(
            "position embedding has {} patch rows, grid {}x{} needs {}",
            rows - 1,
            src.0,
            src.1,
            src.0 * src.1
        )));
    }
    if dst.0 == 0 || dst.1 == 0 {
        return Err(Error::invalid("empty destination grid"));
    }
    if src == dst {
        return Ok(pos.clone());
    }
    let cls = ops::slice_rows(pos, 0, 1)?;
    let patches = ops::reshape(&ops::slice_rows(pos, 1, rows)?, &[src.0, src.1, d])?;
    let resized = bilinear_resize(&patches, dst.0, dst.1)?;
    let flat = ops::reshape(&resized, &[dst.0 * dst.1, d])?;
    ops::concat_rows(&[&cls, &flat])
}

/// Pre-norm transformer layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer<T: Scalar> {
    pub norm1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub num_heads: usize,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn new(name: &str, dim: usize, heads: usize, mlp_ratio: usize, rng: &mut Rng) -> Self {
        Self {
            norm1: LayerNorm::new(&format!("{name}.norm1"), dim),
            qkv: Linear::trunc_normal(&format!("{name}.qkv"), dim, 3 * dim, rng),
            proj: Linear::trunc_normal(&format!("{name}.proj"), dim, dim, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), dim),
            fc1: Linear::trunc_normal(&format!("{name}.fc1"), dim, mlp_ratio * dim, rng),
            fc2: Linear::trunc_normal(&format!("{name}.fc2"), mlp_ratio * dim, dim, rng),
            num_heads: heads,
        }
    }

    /// Multi-head self-attention; returns the mixed values and the
    /// `heads x T x T` attention weights.
    pub fn attention(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let &[t, d] = x.shape() else {
            return Err(Error::invalid("attention input must be a matrix"));
        };
        let dh = d / self.num_heads;
        let qkv = self.qkv.forward(x)?;
        let scale: T = lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.num_heads);
        let mut maps = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let q = ops::slice_cols(&qkv, h * dh, (h + 1) * dh)?;
            let k = ops::slice_cols(&qkv, d + h * dh, d + (h + 1) * dh)?;
            let v = ops::slice_cols(&qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh)?;
            let scores = ops::scale(&ops::matmul_t(&q, false, &k, true)?, scale);
            let attn = softmax_rows(&scores);
            heads.push(ops::matmul(&attn, &v)?);
            maps.push(attn);
        }
        let mixed = ops::concat_last(&heads.iter().collect::<Vec<_>>())?;
        let maps = ops::reshape(
            &ops::concat_rows(&maps.iter().collect::<Vec<_>>())?,
            &[self.num_heads, t, t],
        )?;
        Ok((self.proj.forward(&mixed)?, maps))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (a, maps) = self.attention(&self.norm1.forward(x)?)?;
        let h = ops::add(x, &a)?;
        let m = self.fc2.forward(&gelu(&self.fc1.forward(&self.norm2.forward(&h)?)?))?;
        Ok((ops::add(&h, &m)?, maps))
    }
}

impl<T: Scalar> Parameterized<T> for EncoderLayer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm1.visit_params(f);
        self.qkv.visit_params(f);
        self.proj.visit_params(f);
        self.norm2.visit_params(f);
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_params_mut(f);
        self.qkv.visit_params_mut(f);
        self.proj.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct Backbone<T: Scalar> {
    pub cfg: BackboneConfig,
    /// Patch projection as a `[P, P, 3, D]` kernel.
    pub patch_weight: Param<T>,
    pub patch_bias: Param<T>,
    pub cls_token: Param<T>,
    /// `(1 + rows*cols) x D` at `cfg.pretrained_grid`.
    pub pos_embed: Param<T>,
    pub layers: Vec<EncoderLayer<T>>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(cfg: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (p, d) = (cfg.patch_size, cfg.embed_dim);
        let n0 = cfg.pretrained_grid.0 * cfg.pretrained_grid.1;
        let patch_weight = Param::trunc_normal("backbone.patch_embed.weight", &[p, p, 3, d], rng);
        let pos_embed = Param::trunc_normal("backbone.pos_embed", &[1 + n0, d], rng);
        let layers = (0..cfg.num_layers)
            .map(|i| EncoderLayer::new(&format!("backbone.layers.{i}"), d, cfg.num_heads, cfg.mlp_ratio, rng))
            .collect();
        Ok(Self {
            patch_weight,
            patch_bias: Param::zeros("backbone.patch_embed.bias", ParamKind::NoDecay, &[d]),
            cls_token: Param::zeros("backbone.cls_token", ParamKind::NoDecay, &[1, d]),
            pos_embed,
            layers,
            cfg,
        })
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<(usize, usize)> {
        let &[h, w, 3] = image.shape() else {
            return Err(Error::invalid(format!("image must be HxWx3, got {:?}", image.shape())));
        };
        self.cfg.grid_for(h, w)
    }

    /// Patch projection through a strided convolution (any supported stride).
    pub fn project_patches_conv(&self, image: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize))> {
        let grid = self.check_image(image)?;
        let fm = conv2d(
            image,
            self.patch_weight.t(),
            Some(self.patch_bias.t()),
            self.cfg.stride,
            0,
        )?;
        Ok((ops::reshape(&fm, &[grid.0 * grid.1, self.cfg.embed_dim])?, grid))
    }

    /// Patch projection by cutting non-overlapping patches and applying one
    /// linear map; only valid when the stride equals the patch size. The
    /// image is treated as a constant.
    pub fn project_patches_linear(&self, image: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize))> {
        let grid = self.check_image(image)?;
        let p = self.cfg.patch_size;
        if self.cfg.stride != p {
            return Err(Error::invalid("linear patch projection needs stride == patch size"));
        }
        let w = image.shape()[1];
        let mut rows = Vec::with_capacity(grid.0 * grid.1 * p * p * 3);
        for r in 0..grid.0 {
            for c in 0..grid.1 {
                for ky in 0..p {
                    let start = ((r * p + ky) * w + c * p) * 3;
                    rows.extend_from_slice(&image.data()[start..start + p * 3]);
                }
            }
        }
        let patches = Tensor::from_vec(rows, &[grid.0 * grid.1, p * p * 3])?;
        let weight = ops::reshape(self.patch_weight.t(), &[p * p * 3, self.cfg.embed_dim])?;
        Ok((ops::linear(&patches, &weight, Some(self.patch_bias.t()))?, grid))
    }

    /// Image `[H, W, 3]` to `(1+N) x D` tokens with the class token first and
    /// position embeddings (resampled to this image's grid) added.
    pub fn embed_patches(&self, image: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize))> {
        let (patches, grid) = if self.cfg.stride == self.cfg.patch_size && !image.requires_grad() {
            self.project_patches_linear(image)?
        } else {
            self.project_patches_conv(image)?
        };
        let tokens = ops::concat_rows(&[self.cls_token.t(), &patches])?;
        let pos = interpolate_pos_embed(self.pos_embed.t(), self.cfg.pretrained_grid, grid)?;
        Ok((ops::add(&tokens, &pos)?, grid))
    }

    pub fn encode(&self, tokens: &Tensor<T>, grid: (usize, usize)) -> Result<BackboneOutput<T>> {
        if tokens.shape().len() != 2 || tokens.shape()[0] < 2 {
            return Err(Error::invalid(
                "encoder needs a class token and at least one patch token",
            ));
        }
        if tokens.shape()[0] != 1 + grid.0 * grid.1 {
            return Err(Error::invalid("token count does not match the patch grid"));
        }
        let mut x = tokens.clone();
        let mut layer_states = Vec::with_capacity(self.layers.len());
        let mut attention_maps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, maps) = layer.forward(&x)?;
            layer_states.push(y.clone());
            attention_maps.push(maps);
            x = y;
        }
        Ok(BackboneOutput {
            input_tokens: tokens.clone(),
            layer_states,
            attention_maps,
            grid,
        })
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<BackboneOutput<T>> {
        let (tokens, grid) = self.embed_patches(image)?;
        self.encode(&tokens, grid)
    }
}

impl<T: Scalar> Parameterized<T> for Backbone<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.patch_weight);
        f(&self.patch_bias);
        f(&self.cls_token);
        f(&self.pos_embed);
        for l in &self.layers {
            l.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.patch_weight);
        f(&mut self.patch_bias);
        f(&mut self.cls_token);
        f(&mut self.pos_embed);
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }
}

/// Lays patch-token states out as a `rows x cols x C` feature map.
///
/// With `concat_attn`, each cell additionally carries its head-averaged
/// final-layer attention over the patch tokens (class token excluded), i.e.
/// `rows*cols` extra channels. With no encoder layers the embedded input
/// tokens are used.
pub fn to_spatial<T: Scalar>(out: &BackboneOutput<T>, mode: OutputMode, concat_attn: bool) -> Result<Tensor<T>> {
    let (rows, cols) = out.grid;
    let t = 1 + rows * cols;
    let patch_rows = |s: &Tensor<T>| ops::slice_rows(s, 1, t);
    let mut parts = match (mode, out.layer_states.as_slice()) {
        (_, []) => vec![patch_rows(&out.input_tokens)?],
        (OutputMode::Final, [.., last]) => vec![patch_rows(last)?],
        (OutputMode::All, states) => states.iter().map(patch_rows).collect::<Result<Vec<_>>>()?,
    };
    if concat_attn {
        let maps = out
            .attention_maps
            .last()
            .ok_or_else(|| Error::invalid("attention concatenation needs at least one encoder layer"))?;
        let heads = maps.shape()[0];
        let flat = ops::reshape(maps, &[heads, t * t])?;
        let summed = ops::matmul(&Tensor::from_vec(vec![T::one(); heads], &[1, heads])?, &flat)?;
        let mean = ops::reshape(&ops::scale(&summed, T::one() / lit(heads as f64)), &[t, t])?;
        parts.push(ops::slice_cols(&ops::slice_rows(&mean, 1, t)?, 1, t)?);
    }
    let fm = ops::concat_last(&parts.iter().collect::<Vec<_>>())?;
    let c = fm.shape()[1];
    ops::reshape(&fm, &[rows, cols, c])
}
