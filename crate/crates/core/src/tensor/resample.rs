use super::{Scalar, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Source taps for one output coordinate: `(i0, i1, frac)`, the output being
/// `(1 − frac)·v[i0] + frac·v[i1]`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers (no antialiasing).
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(invalid("bilinear_resize", format!("output extent {out_h}x{out_w}")));
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.chunks_exact(h * w) {
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64(fy);
            let r0 = &plane[y0 * w..][..w];
            let r1 = &plane[y1 * w..][..w];
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64(fx);
                let top = r0[x0] * (T::one() - fx) + r0[x1] * fx;
                let bot = r1[x0] * (T::one() - fx) + r1[x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], out))
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = grad_out.dims4()?;
    let [ni, ci, h, w] = match *input_shape {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(shape_err("bilinear_resize_backward", "input shape must be rank 4")),
    };
    if (n, c) != (ni, ci) {
        return Err(shape_err("bilinear_resize_backward", "batch/channel mismatch"));
    }
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    let mut gx = vec![T::zero(); n * c * h * w];
    for (plane, gplane) in grad_out.data().chunks_exact(oh * ow).zip(gx.chunks_exact_mut(h * w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let g = plane[oy * ow + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                gplane[y0 * w + x0] += gt * (T::one() - fx);
                gplane[y0 * w + x1] += gt * fx;
                gplane[y1 * w + x0] += gb * (T::one() - fx);
                gplane[y1 * w + x1] += gb * fx;
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gx))
}

/// `[n, c·r², h, w] → [n, c, h·r, w·r]`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, cr, h, w] = input.dims4()?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(shape_err(
            "pixel_shuffle",
            format!("channels {cr} not divisible by r²={}", r * r),
        ));
    }
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src = &x[((b * cr + ch * r * r + i * r + j) * h) * w..][..h * w];
                    for y in 0..h {
                        let dst = ((b * c + ch) * oh + y * r + i) * ow;
                        for xx in 0..w {
                            out[dst + xx * r + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// `[n, c, h·r, w·r] → [n, c·r², h, w]`, the inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = input.dims4()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(shape_err(
            "pixel_unshuffle",
            format!("spatial extent {oh}x{ow} not divisible by r={r}"),
        ));
    }
    let (h, w) = (oh / r, ow / r);
    let cr = c * r * r;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let dst = &mut out[((b * cr + ch * r * r + i * r + j) * h) * w..][..h * w];
                    for y in 0..h {
                        let src = ((b * c + ch) * oh + y * r + i) * ow;
                        for xx in 0..w {
                            dst[y * w + xx] = x[src + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, cr, h, w], out))
}
