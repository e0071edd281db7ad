//! Full-reference image quality: PSNR and SSIM, computed in `f64`.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// PSNR is reported as this value when the error is below `1e-10`.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / MSE)` in dB.
pub fn psnr<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, peak: f64) -> Result<f64> {
    let e = mse(x, xhat)?;
    if e < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps of odd length `size`.
fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = g.iter().sum();
    g.into_iter().map(|v| v / z).collect()
}

/// Separable 'valid' filtering of an `h × w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| g[t] * p[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    (out, oh, ow)
}

/// Window side used for an `h × w` image: 11, or the largest odd size that
/// fits.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

/// Mean SSIM over all valid Gaussian windows, per channel, averaged over
/// channels and batch. Values are assumed to lie in `[0, 1]`.
pub fn ssim<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", x, xhat)?;
    let [_, _, h, w] = x.dims4()?;
    let g = gaussian(ssim_window(h, w), SSIM_SIGMA);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let planes = x.len() / (h * w);
    for (px, py) in x.data().chunks_exact(h * w).zip(xhat.data().chunks_exact(h * w)) {
        let a: Vec<f64> = px.iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = py.iter().map(|v| v.as_f64()).collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
        let (mx, ..) = filter_valid(&a, h, w, &g);
        let (my, ..) = filter_valid(&b, h, w, &g);
        let (sxx, ..) = filter_valid(&prod(&a, &a), h, w, &g);
        let (syy, ..) = filter_valid(&prod(&b, &b), h, w, &g);
        let (sxy, ..) = filter_valid(&prod(&a, &b), h, w, &g);
        let n = mx.len();
        let mut s = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / n as f64;
    }
    Ok(total / planes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::rand_uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn psnr_examples() {
        let x = rand(&[1, 3, 8, 8], 1).map(|v| 0.8 * v);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP);
        assert!(psnr(&x, &rand(&[1, 3, 8, 9], 1), 1.0).is_err());
    }

    #[test]
    fn identical_images_have_unit_ssim() {
        let x = rand(&[2, 3, 16, 16], 2);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = Tensor::full(&[1, 1, 12, 12], 0.4);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    /// Statistics of each 11×11 window from a double loop over 2-D weights.
    fn ssim_direct(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
        let [n, c, h, w] = x.dims4().unwrap();
        let r = 5i64;
        let wt = |dy: i64, dx: i64| (-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp();
        let z: f64 = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| wt(dy, dx))).sum();
        let at = |t: &Tensor<f64>, p: usize, i: usize, j: usize| t.data()[p * h * w + i * w + j];
        let mut total = 0.0;
        for p in 0..n * c {
            let mut s = 0.0;
            let mut cnt = 0;
            for ci in 5..h - 5 {
                for cj in 5..w - 5 {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let k = wt(dy, dx) / z;
                            let (i, j) = ((ci as i64 + dy) as usize, (cj as i64 + dx) as usize);
                            let (a, b) = (at(x, p, i, j), at(y, p, i, j));
                            mx += k * a;
                            my += k * b;
                            xx += k * a * a;
                            yy += k * b * b;
                            xy += k * a * b;
                        }
                    }
                    let (c1, c2) = (1e-4, 9e-4);
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    s += (2.0 * mx * my + c1) * (2.0 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    cnt += 1;
                }
            }
            total += s / cnt as f64;
        }
        total / (n * c) as f64
    }

    #[test]
    fn ssim_matches_windowed_statistics_oracle() {
        let x = rand(&[1, 2, 17, 14], 3);
        let noise = rand(&[1, 2, 17, 14], 4);
        let y = Tensor::new(x.shape(), x.data().iter().zip(noise.data()).map(|(a, b)| 0.7 * a + 0.3 * b).collect()).unwrap();
        let got = ssim(&x, &y).unwrap();
        assert!((got - ssim_direct(&x, &y)).abs() < 1e-12, "{got}");
        assert!(got < 1.0 && got > 0.0);
    }

    #[test]
    fn small_images_use_a_smaller_window() {
        assert_eq!(ssim_window(64, 64), 11);
        assert_eq!(ssim_window(8, 9), 7);
        let x = rand(&[1, 3, 8, 8], 5);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn psnr_is_permutation_invariant(seed in 0u64..1000, shift in 1usize..50) {
            let x = rand(&[1, 3, 8, 8], seed);
            let y = rand(&[1, 3, 8, 8], seed + 1);
            let perm = |t: &Tensor<f64>| {
                let n = t.len();
                Tensor::new(t.shape(), (0..n).map(|i| t.data()[(i * 7 + shift) % n]).collect()).unwrap()
            };
            let a = psnr(&x, &y, 1.0).unwrap();
            let b = psnr(&perm(&x), &perm(&y), 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            let s = ssim(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((ssim(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
