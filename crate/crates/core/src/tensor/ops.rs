use super::{ensure_same_shape, Scalar, Tensor};
use crate::error::{shape_err, Result};

fn zip_with<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    ensure_same_shape(op, a, b)?;
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|v| v * c)
}

/// `x[n, c, :, :] · s[n, c]` for `x: [n, c, h, w]`, `s: [n, c, 1, 1]`.
pub fn mul_channel<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if s.shape() != [n, c, 1, 1] {
        return Err(shape_err(
            "mul_channel",
            format!("scale shape {:?}, expected [{n}, {c}, 1, 1]", s.shape()),
        ));
    }
    let hw = h * w;
    let mut out = x.data().to_vec();
    for (plane, &k) in out.chunks_exact_mut(hw).zip(s.data()) {
        plane.iter_mut().for_each(|v| *v *= k);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Mean over `h × w`, giving `[n, c, 1, 1]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let inv = T::one() / T::from_usize(h * w);
    Ok(Tensor::from_parts(
        vec![n, c, 1, 1],
        x.data()
            .chunks_exact(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect(),
    ))
}

/// `Σ|x|`.
pub fn abs_sum<T: Scalar>(x: &Tensor<T>) -> T {
    x.data().iter().map(|v| v.abs()).sum()
}

/// `Σx²`.
pub fn sq_sum<T: Scalar>(x: &Tensor<T>) -> T {
    x.data().iter().map(|&v| v * v).sum()
}

/// Channels `[start, start + len)` of a rank-4 tensor.
pub fn narrow_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(shape_err(
            "narrow_channels",
            format!("range {start}..{} outside {c} channels", start + len),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        out.extend_from_slice(&x.data()[(b * c + start) * hw..(b * c + start + len) * hw]);
    }
    Ok(Tensor::from_parts(vec![n, len, h, w], out))
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims4()?;
    let mut total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("part {:?} vs first {:?}", p.shape(), first.shape()),
            ));
        }
        total += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[b * pc * hw..(b + 1) * pc * hw]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total, h, w], out))
}

/// Forward difference along width, `x[.., j+1] − x[.., j]`, zero in the last
/// column (replicate boundary).
pub fn diff_x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, _, w] = x.dims4()?;
    let mut out = vec![T::zero(); x.len()];
    for (o, r) in out.chunks_exact_mut(w).zip(x.data().chunks_exact(w)) {
        for j in 0..w - 1 {
            o[j] = r[j + 1] - r[j];
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn diff_x_adjoint<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, _, w] = g.dims4()?;
    let mut out = vec![T::zero(); g.len()];
    for (o, r) in out.chunks_exact_mut(w).zip(g.data().chunks_exact(w)) {
        for j in 0..w - 1 {
            o[j + 1] += r[j];
            o[j] -= r[j];
        }
    }
    Ok(Tensor::from_parts(g.shape().to_vec(), out))
}

/// Forward difference along height, zero in the last row.
pub fn diff_y<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    let mut out = vec![T::zero(); x.len()];
    for (o, p) in out.chunks_exact_mut(h * w).zip(x.data().chunks_exact(h * w)) {
        for i in 0..h - 1 {
            for j in 0..w {
                o[i * w + j] = p[(i + 1) * w + j] - p[i * w + j];
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn diff_y_adjoint<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = g.dims4()?;
    let mut out = vec![T::zero(); g.len()];
    for (o, p) in out.chunks_exact_mut(h * w).zip(g.data().chunks_exact(h * w)) {
        for i in 0..h - 1 {
            for j in 0..w {
                o[(i + 1) * w + j] += p[i * w + j];
                o[i * w + j] -= p[i * w + j];
            }
        }
    }
    Ok(Tensor::from_parts(g.shape().to_vec(), out))
}
