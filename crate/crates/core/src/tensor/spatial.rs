//! Crops, reflect padding and the eight flip/rotation symmetries of a square.

use super::{Scalar, Tensor};
use crate::error::{invalid, Result};

/// Plane-wise gather: `out[i, j] = x[src(i, j)]` for every `[n, c]` plane.
fn gather<T: Scalar>(
    x: &Tensor<T>,
    oh: usize,
    ow: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks_exact(h * w) {
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = src(i, j);
                out.push(plane[si * w + sj]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

pub fn crop<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let [_, _, xh, xw] = x.dims4()?;
    if top + h > xh || left + w > xw {
        return Err(invalid(
            "crop",
            format!("{h}x{w} at ({top}, {left}) exceeds {xh}x{xw}"),
        ));
    }
    gather(x, h, w, |i, j| (top + i, left + j))
}

fn reflect(i: usize, n: usize) -> usize {
    // Mirror about the last sample without repeating it: n-2, n-3, ...
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

/// Extend the bottom and right edges by mirroring interior samples.
pub fn pad_reflect<T: Scalar>(x: &Tensor<T>, bottom: usize, right: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    if bottom >= h || right >= w {
        return Err(invalid(
            "pad_reflect",
            format!("padding ({bottom}, {right}) needs an extent larger than {h}x{w}"),
        ));
    }
    gather(x, h + bottom, w + right, |i, j| (reflect(i, h), reflect(j, w)))
}

/// Mirror left-right.
pub fn flip_h<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    gather(x, h, w, |i, j| (i, w - 1 - j))
}

/// Mirror top-bottom.
pub fn flip_v<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    gather(x, h, w, |i, j| (h - 1 - i, j))
}

/// Rotate counter-clockwise by `k` quarter turns.
pub fn rot90<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    match k % 4 {
        0 => Ok(x.clone()),
        1 => gather(x, w, h, |i, j| (j, w - 1 - i)),
        2 => gather(x, h, w, |i, j| (h - 1 - i, w - 1 - j)),
        _ => gather(x, w, h, |i, j| (h - 1 - j, i)),
    }
}
