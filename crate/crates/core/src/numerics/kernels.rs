//! Differentiable neural-network kernels.
//!
//! Feature maps are laid out `[rows, cols, channels]`, row-major.

use super::scalar::{lit, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let inv_sqrt2: T = lit(std::f64::consts::FRAC_1_SQRT_2);
    let half: T = lit(0.5);
    let data = x
        .data()
        .iter()
        .map(|&v| v * half * (T::one() + (v * inv_sqrt2).erf()))
        .collect();
    let xc = x.clone();
    Tensor::from_op(data, x.shape().to_vec(), &[x], move |g| {
        let inv_sqrt_2pi: T = lit(0.398_942_280_401_432_7);
        let gx = g
            .iter()
            .zip(xc.data())
            .map(|(&g, &v)| {
                let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                g * (cdf + v * pdf)
            })
            .collect();
        vec![Some(gx)]
    })
}

/// Softmax over the trailing axis.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().expect("non-empty shape");
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(d) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut z = T::zero();
        for &v in row {
            let e = (v - m).exp();
            z += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= z);
    }
    let y = out.clone();
    Tensor::from_op(out, x.shape().to_vec(), &[x], move |g| {
        let mut gx = Vec::with_capacity(g.len());
        for (gr, yr) in g.chunks_exact(d).zip(y.chunks_exact(d)) {
            let dot: T = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
            gx.extend(gr.iter().zip(yr).map(|(g, y)| *y * (*g - dot)));
        }
        vec![Some(gx)]
    })
}

/// Normalized rows plus the statistics used, shared by layer and batch norm.
struct Normalized<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Layer normalization over the trailing axis with population variance.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = *x.shape().last().expect("non-empty shape");
    if gamma.len() != d || beta.len() != d {
        return Err(Error::invalid(format!(
            "layer_norm: affine params of {}/{} for width {d}",
            gamma.len(),
            beta.len()
        )));
    }
    let dn = T::from_usize(d).unwrap();
    let mut norm = Normalized {
        xhat: Vec::with_capacity(x.len()),
        inv_std: Vec::with_capacity(x.len() / d),
    };
    for row in x.data().chunks_exact(d) {
        let mu = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        norm.inv_std.push(is);
        norm.xhat.extend(row.iter().map(|v| (*v - mu) * is));
    }
    let out = norm
        .xhat
        .chunks_exact(d)
        .flat_map(|r| {
            r.iter()
                .zip(gamma.data().iter().zip(beta.data()))
                .map(|(h, (g, b))| *h * *g + *b)
        })
        .collect();
    let gc = gamma.clone();
    Ok(Tensor::from_op(out, x.shape().to_vec(), &[x, gamma, beta], move |g| {
        let mut gx = Vec::with_capacity(g.len());
        let mut ggamma = vec![T::zero(); d];
        let mut gbeta = vec![T::zero(); d];
        for ((gr, hr), &is) in g.chunks_exact(d).zip(norm.xhat.chunks_exact(d)).zip(&norm.inv_std) {
            let mut mean_dh = T::zero();
            let mut mean_dh_h = T::zero();
            for j in 0..d {
                let dh = gr[j] * gc.data()[j];
                mean_dh += dh;
                mean_dh_h += dh * hr[j];
                ggamma[j] += gr[j] * hr[j];
                gbeta[j] += gr[j];
            }
            mean_dh /= dn;
            mean_dh_h /= dn;
            gx.extend((0..d).map(|j| is * (gr[j] * gc.data()[j] - mean_dh - hr[j] * mean_dh_h)));
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }))
}

/// Per-channel batch statistics observed during a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as fed into running estimates.
    pub var_unbiased: Vec<T>,
}

/// Batch normalization over every position of `x[..., C]`.
///
/// In training mode with more than one position per channel the batch
/// statistics normalize the input and are returned for the caller to fold
/// into its running estimates. Otherwise `running_mean`/`running_var` are
/// used as constants.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    training: bool,
    eps: T,
) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
    let c = *x.shape().last().expect("non-empty shape");
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::invalid(format!(
            "batch_norm: parameters do not match {c} channels"
        )));
    }
    let m = x.len() / c;
    let shape = x.shape().to_vec();
    if !training || m < 2 {
        let inv_std: Vec<T> = running_var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let rm = running_mean.to_vec();
        let xhat: Vec<T> = x
            .data()
            .chunks_exact(c)
            .flat_map(|row| (0..c).map(|j| (row[j] - rm[j]) * inv_std[j]).collect::<Vec<_>>())
            .collect();
        let out = affine_rows(&xhat, gamma.data(), beta.data(), c);
        let gc = gamma.clone();
        let y = Tensor::from_op(out, shape, &[x, gamma, beta], move |g| {
            let (ggamma, gbeta) = affine_param_grads(g, &xhat, c);
            let gx = g
                .chunks_exact(c)
                .flat_map(|row| (0..c).map(|j| row[j] * gc.data()[j] * inv_std[j]).collect::<Vec<_>>())
                .collect();
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        });
        return Ok((y, None));
    }

    let mn = T::from_usize(m).unwrap();
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += *v);
    }
    mean.iter_mut().for_each(|v| *v /= mn);
    let mut sq = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for j in 0..c {
            let d = row[j] - mean[j];
            sq[j] += d * d;
        }
    }
    let inv_std: Vec<T> = sq.iter().map(|s| T::one() / (*s / mn + eps).sqrt()).collect();
    let var_unbiased = sq.iter().map(|s| *s / (mn - T::one())).collect();
    let xhat: Vec<T> = x
        .data()
        .chunks_exact(c)
        .flat_map(|row| (0..c).map(|j| (row[j] - mean[j]) * inv_std[j]).collect::<Vec<_>>())
        .collect();
    let out = affine_rows(&xhat, gamma.data(), beta.data(), c);
    let gc = gamma.clone();
    let y = Tensor::from_op(out, shape, &[x, gamma, beta], move |g| {
        let (ggamma, gbeta) = affine_param_grads(g, &xhat, c);
        // Per channel: dx = inv_std * (dh - mean(dh) - xhat * mean(dh * xhat)), dh = g * gamma.
        let mut mean_dh = vec![T::zero(); c];
        let mut mean_dh_h = vec![T::zero(); c];
        for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                let dh = gr[j] * gc.data()[j];
                mean_dh[j] += dh;
                mean_dh_h[j] += dh * hr[j];
            }
        }
        mean_dh.iter_mut().for_each(|v| *v /= mn);
        mean_dh_h.iter_mut().for_each(|v| *v /= mn);
        let gx = g
            .chunks_exact(c)
            .zip(xhat.chunks_exact(c))
            .flat_map(|(gr, hr)| {
                (0..c)
                    .map(|j| inv_std[j] * (gr[j] * gc.data()[j] - mean_dh[j] - hr[j] * mean_dh_h[j]))
                    .collect::<Vec<_>>()
            })
            .collect();
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    });
    Ok((y, Some(BatchStats { mean, var_unbiased })))
}

fn affine_rows<T: Scalar>(xhat: &[T], gamma: &[T], beta: &[T], c: usize) -> Vec<T> {
    xhat.chunks_exact(c)
        .flat_map(|r| (0..c).map(move |j| r[j] * gamma[j] + beta[j]))
        .collect()
}

fn affine_param_grads<T: Scalar>(g: &[T], xhat: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            ggamma[j] += gr[j] * hr[j];
            gbeta[j] += gr[j];
        }
    }
    (ggamma, gbeta)
}

/// Output extent of a convolution along one axis.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// 2-D convolution of `x[H, W, Cin]` with `w[kh, kw, Cin, Cout]`, zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let &[h, wd, cin] = x.shape() else {
        return Err(Error::invalid(format!(
            "conv2d: input must be HxWxC, got {:?}",
            x.shape()
        )));
    };
    let &[kh, kw, wcin, cout] = w.shape() else {
        return Err(Error::invalid(format!(
            "conv2d: kernel must be 4-D, got {:?}",
            w.shape()
        )));
    };
    if wcin != cin {
        return Err(Error::invalid(format!(
            "conv2d: kernel expects {wcin} channels, input has {cin}"
        )));
    }
    let (Some(ho), Some(wo)) = (
        conv_extent(h, kh, stride, padding),
        conv_extent(wd, kw, stride, padding),
    ) else {
        return Err(Error::invalid(format!(
            "conv2d: {kh}x{kw} kernel (stride {stride}, padding {padding}) does not fit {h}x{wd}"
        )));
    };
    let patch = kh * kw * cin;
    let pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    let cols: Vec<T> = if pointwise {
        x.data().to_vec()
    } else {
        let mut cols = vec![T::zero(); ho * wo * patch];
        for oy in 0..ho {
            for ox in 0..wo {
                let base = (oy * wo + ox) * patch;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = (iy as usize * wd + ix as usize) * cin;
                        let dst = base + (ky * kw + kx) * cin;
                        cols[dst..dst + cin].copy_from_slice(&x.data()[src..src + cin]);
                    }
                }
            }
        }
        cols
    };

    let rows = ho * wo;
    let mut out = vec![T::zero(); rows * cout];
    T::gemm(
        rows,
        patch,
        cout,
        T::one(),
        &cols,
        patch as isize,
        1,
        w.data(),
        cout as isize,
        1,
        T::zero(),
        &mut out,
        cout as isize,
        1,
    );
    if let Some(b) = b {
        if b.len() != cout {
            return Err(Error::invalid(format!(
                "conv2d: bias of {} for {cout} outputs",
                b.len()
            )));
        }
        for row in out.chunks_exact_mut(cout) {
            row.iter_mut().zip(b.data()).for_each(|(o, b)| *o += *b);
        }
    }

    let wc = w.clone();
    let x_rg = x.requires_grad();
    let w_rg = w.requires_grad();
    let mut parents = vec![x, w];
    if let Some(b) = b {
        parents.push(b);
    }
    let has_bias = b.is_some();
    Ok(Tensor::from_op(out, vec![ho, wo, cout], &parents, move |g| {
        let gw = w_rg.then(|| {
            let mut gw = vec![T::zero(); patch * cout];
            T::gemm(
                patch,
                rows,
                cout,
                T::one(),
                &cols,
                1,
                patch as isize,
                g,
                cout as isize,
                1,
                T::zero(),
                &mut gw,
                cout as isize,
                1,
            );
            gw
        });
        let gx = x_rg.then(|| {
            let mut gcols = vec![T::zero(); rows * patch];
            T::gemm(
                rows,
                cout,
                patch,
                T::one(),
                g,
                cout as isize,
                1,
                wc.data(),
                1,
                cout as isize,
                T::zero(),
                &mut gcols,
                patch as isize,
                1,
            );
            if pointwise {
                return gcols;
            }
            let mut gx = vec![T::zero(); h * wd * cin];
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = (oy * wo + ox) * patch;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let dst = (iy as usize * wd + ix as usize) * cin;
                            let src = base + (ky * kw + kx) * cin;
                            gx[dst..dst + cin]
                                .iter_mut()
                                .zip(&gcols[src..src + cin])
                                .for_each(|(a, b)| *a += *b);
                        }
                    }
                }
            }
            gx
        });
        let mut grads = vec![gx, gw];
        if has_bias {
            let mut gb = vec![T::zero(); cout];
            for row in g.chunks_exact(cout) {
                gb.iter_mut().zip(row).for_each(|(a, v)| *a += *v);
            }
            grads.push(Some(gb));
        }
        grads
    }))
}

/// Source coordinate and blend weights for align-corners resampling.
fn align_corners_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|i| {
            let src = if out > 1 {
                i as f64 * (input - 1) as f64 / (out - 1) as f64
            } else {
                0.0
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Align-corners bilinear resize of `grid[H, W, C]` to `[out_h, out_w, C]`.
pub fn bilinear_resize<T: Scalar>(grid: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let &[h, w, c] = grid.shape() else {
        return Err(Error::invalid(format!(
            "bilinear_resize: expected HxWxC, got {:?}",
            grid.shape()
        )));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize: zero output extent"));
    }
    if h == out_h && w == out_w {
        return Ok(Tensor::from_op(
            grid.data().to_vec(),
            grid.shape().to_vec(),
            &[grid],
            |g| vec![Some(g.to_vec())],
        ));
    }
    let ty = align_corners_taps(out_h, h);
    let tx = align_corners_taps(out_w, w);
    let src = grid.data();
    let mut out = vec![T::zero(); out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            let dst = &mut out[(oy * out_w + ox) * c..][..c];
            for (sy, sx, wt) in taps {
                if wt == 0.0 {
                    continue;
                }
                let wt: T = lit(wt);
                let s = &src[(sy * w + sx) * c..][..c];
                dst.iter_mut().zip(s).for_each(|(d, v)| *d += wt * *v);
            }
        }
    }
    Ok(Tensor::from_op(out, vec![out_h, out_w, c], &[grid], move |g| {
        let mut gg = vec![T::zero(); h * w * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let taps = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                let gs = &g[(oy * out_w + ox) * c..][..c];
                for (sy, sx, wt) in taps {
                    if wt == 0.0 {
                        continue;
                    }
                    let wt: T = lit(wt);
                    gg[(sy * w + sx) * c..][..c]
                        .iter_mut()
                        .zip(gs)
                        .for_each(|(d, v)| *d += wt * *v);
                }
            }
        }
        vec![Some(gg)]
    }))
}

/// Bilinear taps for one RoI-Align sample point; empty when the point falls
/// outside the map by more than one cell.
fn roi_sample_taps(y: f64, x: f64, h: usize, w: usize) -> Vec<(usize, f64)> {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return Vec::new();
    }
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        let v = v.max(0.0);
        let lo = v.floor() as usize;
        if lo >= n - 1 {
            (n - 1, n - 1, 0.0)
        } else {
            (lo, lo + 1, v - lo as f64)
        }
    };
    let (y0, y1, ly) = axis(y, h);
    let (x0, x1, lx) = axis(x, w);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    vec![
        (y0 * w + x0, hy * hx),
        (y0 * w + x1, hy * lx),
        (y1 * w + x0, ly * hx),
        (y1 * w + x1, ly * lx),
    ]
}

/// RoI-Align of boxes (image pixels, corner form) from `fm[H, W, C]`.
///
/// Boxes map to feature coordinates by `spatial_scale` with a half-cell
/// offset, so feature value `(r, c)` sits at the center of its cell. Each of
/// the `out_h x out_w` bins averages `sampling x sampling` bilinear samples.
/// Output is `[K, out_h, out_w, C]`.
pub fn roi_align<T: Scalar>(
    fm: &Tensor<T>,
    boxes: &[[f64; 4]],
    spatial_scale: f64,
    out_h: usize,
    out_w: usize,
    sampling: usize,
) -> Result<Tensor<T>> {
    let &[h, w, c] = fm.shape() else {
        return Err(Error::invalid(format!(
            "roi_align: expected HxWxC, got {:?}",
            fm.shape()
        )));
    };
    if boxes.is_empty() || out_h == 0 || out_w == 0 || sampling == 0 {
        return Err(Error::invalid("roi_align: empty box list or zero output extent"));
    }
    let count = (sampling * sampling) as f64;
    // Per output bin: list of (flat cell index, weight).
    let mut plan: Vec<Vec<(usize, f64)>> = Vec::with_capacity(boxes.len() * out_h * out_w);
    for b in boxes {
        let x0 = b[0] * spatial_scale - 0.5;
        let y0 = b[1] * spatial_scale - 0.5;
        let bw = (b[2] - b[0]) * spatial_scale / out_w as f64;
        let bh = (b[3] - b[1]) * spatial_scale / out_h as f64;
        for py in 0..out_h {
            for px in 0..out_w {
                let mut taps = Vec::with_capacity(4 * sampling * sampling);
                for iy in 0..sampling {
                    let y = y0 + py as f64 * bh + (iy as f64 + 0.5) * bh / sampling as f64;
                    for ix in 0..sampling {
                        let x = x0 + px as f64 * bw + (ix as f64 + 0.5) * bw / sampling as f64;
                        taps.extend(
                            roi_sample_taps(y, x, h, w)
                                .into_iter()
                                .filter(|(_, wt)| *wt != 0.0)
                                .map(|(i, wt)| (i, wt / count)),
                        );
                    }
                }
                plan.push(taps);
            }
        }
    }
    let src = fm.data();
    let mut out = vec![T::zero(); plan.len() * c];
    for (bin, taps) in plan.iter().enumerate() {
        let dst = &mut out[bin * c..][..c];
        for &(cell, wt) in taps {
            let wt: T = lit(wt);
            dst.iter_mut()
                .zip(&src[cell * c..][..c])
                .for_each(|(d, v)| *d += wt * *v);
        }
    }
    let k = boxes.len();
    Ok(Tensor::from_op(out, vec![k, out_h, out_w, c], &[fm], move |g| {
        let mut gf = vec![T::zero(); h * w * c];
        for (bin, taps) in plan.iter().enumerate() {
            let gs = &g[bin * c..][..c];
            for &(cell, wt) in taps {
                let wt: T = lit(wt);
                gf[cell * c..][..c].iter_mut().zip(gs).for_each(|(d, v)| *d += wt * *v);
            }
        }
        vec![Some(gf)]
    }))
}

/// Sum over picked entries of binary cross-entropy with logits.
///
/// `picks` holds `(flat index, target in [0, 1])`. An empty list gives 0.
pub fn bce_with_logits_sum<T: Scalar>(logits: &Tensor<T>, picks: &[(usize, T)]) -> Result<Tensor<T>> {
    if picks.iter().any(|&(i, _)| i >= logits.len()) {
        return Err(Error::invalid("bce_with_logits_sum: index out of range"));
    }
    let x = logits.data();
    let total = picks
        .iter()
        .map(|&(i, t)| {
            let v = x[i];
            v.max(T::zero()) - v * t + (-v.abs()).exp().ln_1p()
        })
        .sum();
    let n = logits.len();
    let lc = logits.clone();
    let picks = picks.to_vec();
    Ok(Tensor::from_op(vec![total], vec![1], &[logits], move |g| {
        let mut gx = vec![T::zero(); n];
        for &(i, t) in &picks {
            let sig = T::one() / (T::one() + (-lc.data()[i]).exp());
            gx[i] += g[0] * (sig - t);
        }
        vec![Some(gx)]
    }))
}

/// Sum over rows of `logits[K, C]` of `-log softmax(row)[label]`.
pub fn cross_entropy_sum<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let &[k, c] = logits.shape() else {
        return Err(Error::invalid("cross_entropy_sum: logits must be a matrix"));
    };
    if labels.len() != k || labels.iter().any(|&l| l >= c) {
        return Err(Error::invalid("cross_entropy_sum: labels do not match logits"));
    }
    let mut probs = Vec::with_capacity(k * c);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|v| (*v - m).exp()).sum();
        let lse = m + z.ln();
        total += lse - row[label];
        probs.extend(row.iter().map(|v| (*v - lse).exp()));
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(vec![total], vec![1], &[logits], move |g| {
        let mut gx: Vec<T> = probs.iter().map(|p| *p * g[0]).collect();
        for (r, &l) in labels.iter().enumerate() {
            gx[r * c + l] -= g[0];
        }
        vec![Some(gx)]
    }))
}

/// Huber penalty of a single residual with transition `beta`.
pub fn huber<T: Scalar>(d: T, beta: T) -> T {
    let a = d.abs();
    if a < beta {
        lit::<T>(0.5) * d * d / beta
    } else {
        a - lit::<T>(0.5) * beta
    }
}

/// Sum of Huber penalties between picked entries and their targets.
pub fn huber_sum<T: Scalar>(pred: &Tensor<T>, picks: &[(usize, T)], beta: T) -> Result<Tensor<T>> {
    if picks.iter().any(|&(i, _)| i >= pred.len()) {
        return Err(Error::invalid("huber_sum: index out of range"));
    }
    let x = pred.data();
    let total = picks.iter().map(|&(i, t)| huber(x[i] - t, beta)).sum();
    let n = pred.len();
    let pc = pred.clone();
    let picks = picks.to_vec();
    Ok(Tensor::from_op(vec![total], vec![1], &[pred], move |g| {
        let mut gx = vec![T::zero(); n];
        for &(i, t) in &picks {
            let d = pc.data()[i] - t;
            let slope = if d.abs() < beta { d / beta } else { d.signum() };
            gx[i] += g[0] * slope;
        }
        vec![Some(gx)]
    }))
}
