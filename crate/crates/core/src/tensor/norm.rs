use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

pub const LN_EPS: f64 = 1e-6;

/// Per-position statistics saved by the forward pass for the backward rule.
#[derive(Clone, Debug)]
pub struct LayerNormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer normalization over the channel axis at every `(n, y, x)` position,
/// followed by a per-channel affine map.
pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gain: &Tensor<T>,
    offset: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormStats<T>)> {
    let [n, c, h, w] = input.dims4()?;
    if gain.shape() != [c] || offset.shape() != [c] {
        return Err(shape_err(
            "layer_norm",
            format!(
                "gain {:?} / offset {:?} must both be [{c}] (channel count)",
                gain.shape(),
                offset.shape()
            ),
        ));
    }
    let hw = h * w;
    let x = input.data();
    let g = gain.data();
    let b = offset.data();
    let inv_c = T::one() / T::from_usize(c);
    let mut out = vec![T::zero(); x.len()];
    let mut mean = vec![T::zero(); n * hw];
    let mut rstd = vec![T::zero(); n * hw];
    for bi in 0..n {
        let base = bi * c * hw;
        let mu = &mut mean[bi * hw..(bi + 1) * hw];
        let rs = &mut rstd[bi * hw..(bi + 1) * hw];
        for ci in 0..c {
            for (m, &v) in mu.iter_mut().zip(&x[base + ci * hw..][..hw]) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m *= inv_c);
        for ci in 0..c {
            for ((r, &m), &v) in rs.iter_mut().zip(mu.iter()).zip(&x[base + ci * hw..][..hw]) {
                let d = v - m;
                *r += d * d;
            }
        }
        rs.iter_mut()
            .for_each(|r| *r = T::one() / (*r * inv_c + eps).sqrt());
        for ci in 0..c {
            let o = &mut out[base + ci * hw..][..hw];
            let xi = &x[base + ci * hw..][..hw];
            for p in 0..hw {
                o[p] = (xi[p] - mu[p]) * rs[p] * g[ci] + b[ci];
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), out),
        LayerNormStats { mean, rstd },
    ))
}

/// Returns `(grad_input, grad_gain, grad_offset)`.
pub fn layer_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    gain: &Tensor<T>,
    stats: &LayerNormStats<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = input.dims4()?;
    let hw = h * w;
    let x = input.data();
    let dy = grad_out.data();
    let g = gain.data();
    let inv_c = T::one() / T::from_usize(c);
    let mut dx = vec![T::zero(); x.len()];
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    let mut mean_dxh = vec![T::zero(); hw];
    let mut mean_dxh_xh = vec![T::zero(); hw];
    for bi in 0..n {
        let base = bi * c * hw;
        let mu = &stats.mean[bi * hw..(bi + 1) * hw];
        let rs = &stats.rstd[bi * hw..(bi + 1) * hw];
        mean_dxh.fill(T::zero());
        mean_dxh_xh.fill(T::zero());
        for ci in 0..c {
            let xi = &x[base + ci * hw..][..hw];
            let gi = &dy[base + ci * hw..][..hw];
            let mut sg = T::zero();
            let mut sb = T::zero();
            for p in 0..hw {
                let xh = (xi[p] - mu[p]) * rs[p];
                let dxh = gi[p] * g[ci];
                sg += gi[p] * xh;
                sb += gi[p];
                mean_dxh[p] += dxh;
                mean_dxh_xh[p] += dxh * xh;
            }
            dg[ci] += sg;
            db[ci] += sb;
        }
        for ci in 0..c {
            let xi = &x[base + ci * hw..][..hw];
            let gi = &dy[base + ci * hw..][..hw];
            let o = &mut dx[base + ci * hw..][..hw];
            for p in 0..hw {
                let xh = (xi[p] - mu[p]) * rs[p];
                let dxh = gi[p] * g[ci];
                o[p] = rs[p] * (dxh - mean_dxh[p] * inv_c - xh * mean_dxh_xh[p] * inv_c);
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dg),
        Tensor::from_parts(vec![c], db),
    ))
}
