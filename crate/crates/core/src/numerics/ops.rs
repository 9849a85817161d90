//! Shape-level and linear-algebra ops.

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn dims2<T: Scalar>(op: &str, a: &Tensor<T>) -> Result<(usize, usize)> {
    match *a.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::invalid(format!("{op}: expected a matrix, got {s:?}"))),
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), &[a, b], |g| {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
    Ok(Tensor::from_op(data, a.shape().to_vec(), &[a, b], |g| {
        vec![Some(g.to_vec()), Some(g.iter().map(|v| -*v).collect())]
    }))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(data, a.shape().to_vec(), &[a, b], move |g| {
        let ga = g.iter().zip(bc.data()).map(|(g, y)| *g * *y).collect();
        let gb = g.iter().zip(ac.data()).map(|(g, x)| *g * *x).collect();
        vec![Some(ga), Some(gb)]
    }))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a.data().iter().map(|x| *x * s).collect();
    Tensor::from_op(data, a.shape().to_vec(), &[a], move |g| {
        vec![Some(g.iter().map(|v| *v * s).collect())]
    })
}

/// Sum of all elements as a one-element tensor.
pub fn sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let total = a.data().iter().copied().sum();
    let n = a.len();
    Tensor::from_op(vec![total], vec![1], &[a], move |g| vec![Some(vec![g[0]; n])])
}

pub fn mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = T::from_usize(a.len()).expect("length as scalar");
    scale(&sum(a), T::one() / n)
}

/// Sum of a list of one-element tensors; an empty list yields a constant 0.
pub fn sum_scalars<T: Scalar>(terms: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut iter = terms.iter();
    let Some(first) = iter.next() else {
        return Ok(Tensor::scalar(T::zero()));
    };
    let mut acc = first.clone();
    for t in iter {
        acc = add(&acc, t)?;
    }
    Ok(acc)
}

pub fn reshape<T: Scalar>(a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if n != a.len() || shape.contains(&0) {
        return Err(Error::invalid(format!(
            "reshape: cannot view {:?} as {shape:?}",
            a.shape()
        )));
    }
    Ok(Tensor::from_op(a.data().to_vec(), shape.to_vec(), &[a], |g| {
        vec![Some(g.to_vec())]
    }))
}

/// Matrix product `op(a) · op(b)` where `op` optionally transposes.
pub fn matmul_t<T: Scalar>(a: &Tensor<T>, trans_a: bool, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (ar, ac) = dims2("matmul", a)?;
    let (br, bc) = dims2("matmul", b)?;
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    if k != k2 {
        return Err(Error::invalid(format!(
            "matmul: inner extents differ ({:?}{} x {:?}{})",
            a.shape(),
            if trans_a { "^T" } else { "" },
            b.shape(),
            if trans_b { "^T" } else { "" }
        )));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        rsa,
        csa,
        b.data(),
        rsb,
        csb,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    let (ac_, bc_) = (a.clone(), b.clone());
    let (a_rg, b_rg) = (a.requires_grad(), b.requires_grad());
    Ok(Tensor::from_op(out, vec![m, n], &[a, b], move |g| {
        // d op(a) = g · op(b)^T, written straight into a's storage layout.
        let ga = a_rg.then(|| {
            let mut ga = vec![T::zero(); m * k];
            let (rsc, csc) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
            T::gemm(
                m,
                n,
                k,
                T::one(),
                g,
                n as isize,
                1,
                bc_.data(),
                csb,
                rsb,
                T::zero(),
                &mut ga,
                rsc,
                csc,
            );
            ga
        });
        // d op(b) = op(a)^T · g
        let gb = b_rg.then(|| {
            let mut gb = vec![T::zero(); k * n];
            let (rsc, csc) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            T::gemm(
                k,
                m,
                n,
                T::one(),
                ac_.data(),
                csa,
                rsa,
                g,
                n as isize,
                1,
                T::zero(),
                &mut gb,
                rsc,
                csc,
            );
            gb
        });
        vec![ga, gb]
    }))
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, false, b, false)
}

/// Adds `bias[C]` to every row of `x[..., C]`.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *x.shape().last().expect("non-empty shape");
    if bias.len() != c {
        return Err(Error::invalid(format!(
            "add_bias: bias of {} for {c} channels",
            bias.len()
        )));
    }
    let b = bias.data();
    let data = x
        .data()
        .chunks_exact(c)
        .flat_map(|row| row.iter().zip(b).map(|(v, b)| *v + *b))
        .collect();
    Ok(Tensor::from_op(data, x.shape().to_vec(), &[x, bias], move |g| {
        let mut gb = vec![T::zero(); c];
        for row in g.chunks_exact(c) {
            gb.iter_mut().zip(row).for_each(|(a, v)| *a += *v);
        }
        vec![Some(g.to_vec()), Some(gb)]
    }))
}

/// Fully connected layer: `x[n, in] · w[in, out] + b[out]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let y = matmul(x, w)?;
    match b {
        Some(b) => add_bias(&y, b),
        None => Ok(y),
    }
}

/// Columns `start..end` of a matrix.
pub fn slice_cols<T: Scalar>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (r, c) = dims2("slice_cols", x)?;
    if start >= end || end > c {
        return Err(Error::invalid(format!("slice_cols: {start}..{end} of {c}")));
    }
    let w = end - start;
    let data = x
        .data()
        .chunks_exact(c)
        .flat_map(|row| row[start..end].iter().copied())
        .collect();
    Ok(Tensor::from_op(data, vec![r, w], &[x], move |g| {
        let mut gx = vec![T::zero(); r * c];
        for (dst, src) in gx.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
            dst[start..end].copy_from_slice(src);
        }
        vec![Some(gx)]
    }))
}

/// Rows `start..end` of a tensor, slicing along the leading axis.
pub fn slice_rows<T: Scalar>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let rows = x.shape()[0];
    if start >= end || end > rows {
        return Err(Error::invalid(format!("slice_rows: {start}..{end} of {rows}")));
    }
    let stride = x.len() / rows;
    let total = x.len();
    let data = x.data()[start * stride..end * stride].to_vec();
    let mut shape = x.shape().to_vec();
    shape[0] = end - start;
    Ok(Tensor::from_op(data, shape, &[x], move |g| {
        let mut gx = vec![T::zero(); total];
        gx[start * stride..end * stride].copy_from_slice(g);
        vec![Some(gx)]
    }))
}

/// Concatenates along the leading axis.
pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat_rows: no inputs"))?;
    let tail = &first.shape()[1..];
    if parts.iter().any(|p| &p.shape()[1..] != tail) {
        return Err(Error::invalid("concat_rows: trailing extents differ"));
    }
    let lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    Ok(Tensor::from_op(data, shape, parts, move |g| {
        let mut off = 0;
        lens.iter()
            .map(|&l| {
                let s = g[off..off + l].to_vec();
                off += l;
                Some(s)
            })
            .collect()
    }))
}

/// Concatenates along the trailing axis; all inputs share leading extents.
pub fn concat_last<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat_last: no inputs"))?;
    let lead = &first.shape()[..first.shape().len() - 1];
    if parts
        .iter()
        .any(|p| p.shape().len() != first.shape().len() || &p.shape()[..lead.len()] != lead)
    {
        return Err(Error::invalid("concat_last: leading extents differ"));
    }
    let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let rows = first.len() / widths[0];
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_op(data, shape, parts, move |g| {
        let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
        for row in g.chunks_exact(total) {
            let mut off = 0;
            for (gp, &w) in grads.iter_mut().zip(&widths) {
                gp.extend_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}

/// Rows of `x[n, d]` picked by index (duplicates allowed).
pub fn gather_rows<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let rows = x.shape()[0];
    if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
        return Err(Error::invalid("gather_rows: index out of range or empty"));
    }
    let stride = x.len() / rows;
    let total = x.len();
    let data = idx
        .iter()
        .flat_map(|&i| x.data()[i * stride..(i + 1) * stride].iter().copied())
        .collect();
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    let idx = idx.to_vec();
    Ok(Tensor::from_op(data, shape, &[x], move |g| {
        let mut gx = vec![T::zero(); total];
        for (k, &i) in idx.iter().enumerate() {
            gx[i * stride..(i + 1) * stride]
                .iter_mut()
                .zip(&g[k * stride..(k + 1) * stride])
                .for_each(|(a, b)| *a += *b);
        }
        vec![Some(gx)]
    }))
}
