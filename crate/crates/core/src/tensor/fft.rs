//! Two-dimensional real FFT over the last two axes of a rank-4 tensor.
//!
//! Spectra are stored on the Hermitian half-plane: `h × (w/2 + 1)` bins per
//! plane. The forward transform is unnormalized; the inverse divides by
//! `h·w`. Power-of-two extents take the radix-2 path, anything else falls
//! back to a direct DFT along that axis.

use std::f64::consts::PI;

use super::{counter, ensure_same_shape, Scalar, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Half-plane complex spectrum as separate real and imaginary planes of
/// shape `[n, c, h, w/2 + 1]`; `width` is the spatial width `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexHalf<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
    pub width: usize,
}

/// Polar form of a half-plane spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    /// Non-negative, `[n, c, h, w/2 + 1]`.
    pub amplitude: Tensor<T>,
    /// In `(−π, π]`, same shape as `amplitude`.
    pub phase: Tensor<T>,
    /// `(h, w)` of the spatial signal.
    pub extent: (usize, usize),
}

struct Plan<T> {
    n: usize,
    pow2: bool,
    cos: Vec<T>,
    sin: Vec<T>,
    rev: Vec<usize>,
}

impl<T: Scalar> Plan<T> {
    fn new(n: usize) -> Self {
        let pow2 = n.is_power_of_two();
        let table = if pow2 { n / 2 } else { n };
        let ang = |k: usize| 2.0 * PI * k as f64 / n as f64;
        let cos = (0..table).map(|k| T::from_f64(ang(k).cos())).collect();
        let sin = (0..table).map(|k| T::from_f64(ang(k).sin())).collect();
        let rev = if pow2 {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        } else {
            Vec::new()
        };
        Self { n, pow2, cos, sin, rev }
    }

    /// In-place transform of one line. Returns the multiply count under the
    /// counter convention (10 per butterfly, 4 per direct complex product).
    fn run(&self, re: &mut [T], im: &mut [T], inverse: bool, scratch: &mut Vec<T>) -> u64 {
        let n = self.n;
        if n == 1 {
            return 0;
        }
        let sign = if inverse { T::one() } else { -T::one() };
        if self.pow2 {
            for i in 0..n {
                let j = self.rev[i];
                if j > i {
                    re.swap(i, j);
                    im.swap(i, j);
                }
            }
            let mut butterflies = 0u64;
            let mut len = 2;
            while len <= n {
                let half = len / 2;
                let step = n / len;
                for start in (0..n).step_by(len) {
                    for j in 0..half {
                        let wr = self.cos[j * step];
                        let wi = sign * self.sin[j * step];
                        let a = start + j;
                        let b = a + half;
                        let tr = wr * re[b] - wi * im[b];
                        let ti = wr * im[b] + wi * re[b];
                        re[b] = re[a] - tr;
                        im[b] = im[a] - ti;
                        re[a] += tr;
                        im[a] += ti;
                    }
                }
                butterflies += (n / 2) as u64;
                len *= 2;
            }
            10 * butterflies
        } else {
            scratch.clear();
            scratch.extend_from_slice(re);
            scratch.extend_from_slice(im);
            let (sr, si) = scratch.split_at(n);
            for k in 0..n {
                let mut ar = T::zero();
                let mut ai = T::zero();
                for j in 0..n {
                    let idx = (j * k) % n;
                    let wr = self.cos[idx];
                    let wi = sign * self.sin[idx];
                    ar += sr[j] * wr - si[j] * wi;
                    ai += sr[j] * wi + si[j] * wr;
                }
                re[k] = ar;
                im[k] = ai;
            }
            4 * (n * n) as u64
        }
    }
}

/// Full complex 2-D transform of one `h × w` plane, rows then columns.
struct Plane2d<T> {
    h: usize,
    w: usize,
    rows: Plan<T>,
    cols: Plan<T>,
    col_re: Vec<T>,
    col_im: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Scalar> Plane2d<T> {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            rows: Plan::new(w),
            cols: Plan::new(h),
            col_re: vec![T::zero(); h],
            col_im: vec![T::zero(); h],
            scratch: Vec::new(),
        }
    }

    fn run(&mut self, re: &mut [T], im: &mut [T], inverse: bool) -> u64 {
        let (h, w) = (self.h, self.w);
        let mut count = 0;
        for r in 0..h {
            count += self.rows.run(
                &mut re[r * w..(r + 1) * w],
                &mut im[r * w..(r + 1) * w],
                inverse,
                &mut self.scratch,
            );
        }
        for c in 0..w {
            for r in 0..h {
                self.col_re[r] = re[r * w + c];
                self.col_im[r] = im[r * w + c];
            }
            count += self
                .cols
                .run(&mut self.col_re, &mut self.col_im, inverse, &mut self.scratch);
            for r in 0..h {
                re[r * w + c] = self.col_re[r];
                im[r * w + c] = self.col_im[r];
            }
        }
        count
    }
}

fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Multiply count of one full 2-D transform of an `h × w` plane, matching
/// what the kernels add to [`counter`]: `5·h·w·log2(h·w)` for power-of-two
/// extents.
pub fn fft_macs(h: usize, w: usize) -> u64 {
    let axis = |len: usize, lines: usize| -> u64 {
        if len.is_power_of_two() {
            5 * (lines * len) as u64 * len.trailing_zeros() as u64
        } else {
            4 * (lines * len * len) as u64
        }
    };
    axis(w, h) + axis(h, w)
}

/// Forward real-to-half-plane transform.
pub fn rfft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexHalf<T>> {
    let [n, c, h, w] = x.dims4()?;
    let wh = half_width(w);
    let mut plan = Plane2d::new(h, w);
    let mut re_out = Vec::with_capacity(n * c * h * wh);
    let mut im_out = Vec::with_capacity(n * c * h * wh);
    let mut re = vec![T::zero(); h * w];
    let mut im = vec![T::zero(); h * w];
    let mut count = 0;
    for plane in x.data().chunks_exact(h * w) {
        re.copy_from_slice(plane);
        im.fill(T::zero());
        count += plan.run(&mut re, &mut im, false);
        for r in 0..h {
            re_out.extend_from_slice(&re[r * w..r * w + wh]);
            im_out.extend_from_slice(&im[r * w..r * w + wh]);
        }
    }
    counter::add_fft(count);
    let shape = vec![n, c, h, wh];
    Ok(ComplexHalf {
        re: Tensor::from_parts(shape.clone(), re_out),
        im: Tensor::from_parts(shape, im_out),
        width: w,
    })
}

fn check_half(op: &'static str, s: &ComplexHalf<impl Scalar>) -> Result<[usize; 4]> {
    ensure_same_shape(op, &s.re, &s.im)?;
    let [n, c, h, wh] = s.re.dims4()?;
    if s.width == 0 || half_width(s.width) != wh {
        return Err(shape_err(
            op,
            format!("half-plane width {wh} inconsistent with spatial width {}", s.width),
        ));
    }
    Ok([n, c, h, wh])
}

/// Inverse of [`rfft2`]: Hermitian-extends each plane, inverts, keeps the
/// real part and divides by `h·w`.
pub fn irfft2<T: Scalar>(s: &ComplexHalf<T>) -> Result<Tensor<T>> {
    let [n, c, h, wh] = check_half("irfft2", s)?;
    let w = s.width;
    let mut plan = Plane2d::new(h, w);
    let norm = T::one() / T::from_usize(h * w);
    let mut out = Vec::with_capacity(n * c * h * w);
    let mut re = vec![T::zero(); h * w];
    let mut im = vec![T::zero(); h * w];
    let mut count = 0;
    for (pr, pi) in s.re.data().chunks_exact(h * wh).zip(s.im.data().chunks_exact(h * wh)) {
        for k in 0..h {
            for l in 0..w {
                let (v_re, v_im) = if l < wh {
                    (pr[k * wh + l], pi[k * wh + l])
                } else {
                    let kk = (h - k) % h;
                    (pr[kk * wh + (w - l)], -pi[kk * wh + (w - l)])
                };
                re[k * w + l] = v_re;
                im[k * w + l] = v_im;
            }
        }
        count += plan.run(&mut re, &mut im, true);
        out.extend(re.iter().map(|&v| v * norm));
    }
    counter::add_fft(count);
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

/// Adjoint of [`rfft2`] viewed as a real-linear map `x ↦ (re, im)`.
pub fn rfft2_adjoint<T: Scalar>(g: &ComplexHalf<T>) -> Result<Tensor<T>> {
    let [n, c, h, wh] = check_half("rfft2_adjoint", g)?;
    let w = g.width;
    let mut plan = Plane2d::new(h, w);
    let mut out = Vec::with_capacity(n * c * h * w);
    let mut re = vec![T::zero(); h * w];
    let mut im = vec![T::zero(); h * w];
    for (pr, pi) in g.re.data().chunks_exact(h * wh).zip(g.im.data().chunks_exact(h * wh)) {
        re.fill(T::zero());
        im.fill(T::zero());
        for k in 0..h {
            re[k * w..k * w + wh].copy_from_slice(&pr[k * wh..(k + 1) * wh]);
            im[k * w..k * w + wh].copy_from_slice(&pi[k * wh..(k + 1) * wh]);
        }
        plan.run(&mut re, &mut im, true);
        out.extend_from_slice(&re);
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

/// Adjoint of [`irfft2`] viewed as a real-linear map `(re, im) ↦ x`.
pub fn irfft2_adjoint<T: Scalar>(g: &Tensor<T>) -> Result<ComplexHalf<T>> {
    let [n, c, h, w] = g.dims4()?;
    let wh = half_width(w);
    let mut plan = Plane2d::new(h, w);
    let norm = T::one() / T::from_usize(h * w);
    let mut re_out = vec![T::zero(); n * c * h * wh];
    let mut im_out = vec![T::zero(); n * c * h * wh];
    let mut re = vec![T::zero(); h * w];
    let mut im = vec![T::zero(); h * w];
    for (p, plane) in g.data().chunks_exact(h * w).enumerate() {
        re.copy_from_slice(plane);
        im.fill(T::zero());
        plan.run(&mut re, &mut im, false);
        let gr = &mut re_out[p * h * wh..(p + 1) * h * wh];
        let gi = &mut im_out[p * h * wh..(p + 1) * h * wh];
        for k in 0..h {
            for l in 0..w {
                let dr = re[k * w + l] * norm;
                let di = im[k * w + l] * norm;
                if l < wh {
                    gr[k * wh + l] += dr;
                    gi[k * wh + l] += di;
                } else {
                    let kk = (h - k) % h;
                    gr[kk * wh + (w - l)] += dr;
                    gi[kk * wh + (w - l)] -= di;
                }
            }
        }
    }
    let shape = vec![n, c, h, wh];
    Ok(ComplexHalf {
        re: Tensor::from_parts(shape.clone(), re_out),
        im: Tensor::from_parts(shape, im_out),
        width: w,
    })
}

fn wrap_phase<T: Scalar>(p: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    let mut q = p % two_pi;
    if q > pi {
        q -= two_pi;
    } else if q <= -pi {
        q += two_pi;
    }
    q
}

/// Forward transform in polar form.
pub fn fft2_real<T: Scalar>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    let [_, _, h, w] = x.dims4()?;
    let s = rfft2(x)?;
    let amplitude = Tensor::from_parts(
        s.re.shape().to_vec(),
        s.re.data().iter().zip(s.im.data()).map(|(&r, &i)| r.hypot(i)).collect(),
    );
    let phase = Tensor::from_parts(
        s.re.shape().to_vec(),
        s.re
            .data()
            .iter()
            .zip(s.im.data())
            .map(|(&r, &i)| wrap_phase(i.atan2(r)))
            .collect(),
    );
    Ok(Spectrum {
        amplitude,
        phase,
        extent: (h, w),
    })
}

/// Build a spectrum from an amplitude and a phase. Negative amplitudes are
/// rejected; the phase is wrapped into `(−π, π]`.
pub fn recombine<T: Scalar>(
    amplitude: &Tensor<T>,
    phase: &Tensor<T>,
    extent: (usize, usize),
) -> Result<Spectrum<T>> {
    ensure_same_shape("recombine", amplitude, phase)?;
    let [_, _, h, wh] = amplitude.dims4()?;
    if h != extent.0 || half_width(extent.1) != wh {
        return Err(shape_err(
            "recombine",
            format!("spectrum {h}x{wh} inconsistent with extent {extent:?}"),
        ));
    }
    if let Some(v) = amplitude.data().iter().find(|v| !(**v >= T::zero())) {
        return Err(invalid("recombine", format!("amplitude must be >= 0, found {v}")));
    }
    Ok(Spectrum {
        amplitude: amplitude.clone(),
        phase: phase.map(wrap_phase),
        extent,
    })
}

impl<T: Scalar> Spectrum<T> {
    pub fn to_complex(&self) -> ComplexHalf<T> {
        let shape = self.amplitude.shape().to_vec();
        let a = self.amplitude.data();
        let p = self.phase.data();
        ComplexHalf {
            re: Tensor::from_parts(shape.clone(), a.iter().zip(p).map(|(&a, &p)| a * p.cos()).collect()),
            im: Tensor::from_parts(shape, a.iter().zip(p).map(|(&a, &p)| a * p.sin()).collect()),
            width: self.extent.1,
        }
    }

    /// `Σ|X|²` over the full (Hermitian-extended) plane, summed over all
    /// planes of the batch.
    pub fn full_plane_energy(&self) -> T {
        let (_, w) = self.extent;
        let wh = half_width(w);
        self.amplitude
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let l = i % wh;
                // bins mirrored into the other half count twice
                let mirrored = l != 0 && w - l != l && w - l >= wh;
                let weight = if mirrored { T::from_f64(2.0) } else { T::one() };
                weight * a * a
            })
            .sum()
    }
}

/// Inverse transform of a polar spectrum.
pub fn ifft2_real<T: Scalar>(s: &Spectrum<T>) -> Result<Tensor<T>> {
    irfft2(&s.to_complex())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// O(N²) direct 2-D DFT of one plane, returning the half-plane bins.
    fn direct_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let wh = w / 2 + 1;
        let mut re = vec![0.0; h * wh];
        let mut im = vec![0.0; h * wh];
        for k in 0..h {
            for l in 0..wh {
                for m in 0..h {
                    for n in 0..w {
                        let th = 2.0 * PI * ((k * m) as f64 / h as f64 + (l * n) as f64 / w as f64);
                        re[k * wh + l] += x[m * w + n] * th.cos();
                        im[k * wh + l] -= x[m * w + n] * th.sin();
                    }
                }
            }
        }
        (re, im)
    }

    /// Direct inverse from a half-plane using the Hermitian extension.
    fn direct_idft(re: &[f64], im: &[f64], h: usize, w: usize) -> Vec<f64> {
        let wh = w / 2 + 1;
        let mut out = vec![0.0; h * w];
        for m in 0..h {
            for n in 0..w {
                let mut acc = 0.0;
                for k in 0..h {
                    for l in 0..w {
                        let (r, i) = if l < wh {
                            (re[k * wh + l], im[k * wh + l])
                        } else {
                            let kk = (h - k) % h;
                            (re[kk * wh + w - l], -im[kk * wh + w - l])
                        };
                        let th = 2.0 * PI * ((k * m) as f64 / h as f64 + (l * n) as f64 / w as f64);
                        acc += r * th.cos() - i * th.sin();
                    }
                }
                out[m * w + n] = acc / (h * w) as f64;
            }
        }
        out
    }

    #[test]
    fn constant_image_has_dc_only() {
        let (h, w, c) = (4, 8, 0.75f64);
        let x = Tensor::full(&[1, 1, h, w], c);
        let s = fft2_real(&x).unwrap();
        let wh = w / 2 + 1;
        for (i, (&a, &p)) in s.amplitude.data().iter().zip(s.phase.data()).enumerate() {
            if i == 0 {
                assert!((a - c * (h * w) as f64).abs() < 1e-12);
                assert_eq!(p, 0.0);
            } else {
                assert!(a < 1e-12, "bin {} ({}, {}) amplitude {a}", i, i / wh, i % wh);
            }
        }
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        x.data_mut()[0] = 1.0;
        let s = fft2_real(&x).unwrap();
        assert!(s.amplitude.data().iter().all(|&a| (a - 1.0).abs() < 1e-14));
    }

    #[test]
    fn matches_direct_dft_including_non_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (h, w) in [(8, 8), (4, 16), (6, 5), (3, 8), (1, 4)] {
            let x = Tensor::<f64>::rand_uniform(&[1, 1, h, w], -1.0, 1.0, &mut rng);
            let s = rfft2(&x).unwrap();
            let (re, im) = direct_dft(x.data(), h, w);
            for i in 0..re.len() {
                assert!((s.re.data()[i] - re[i]).abs() < 1e-10, "{h}x{w} re bin {i}");
                assert!((s.im.data()[i] - im[i]).abs() < 1e-10, "{h}x{w} im bin {i}");
            }
            let back = irfft2(&s).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-12);
        }
    }

    #[test]
    fn amplitude_of_one_phase_of_another_matches_direct_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::<f64>::rand_uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
        let sa = fft2_real(&a).unwrap();
        let sb = fft2_real(&b).unwrap();
        let mixed = ifft2_real(&recombine(&sa.amplitude, &sb.phase, (8, 8)).unwrap()).unwrap();

        let (ar, ai) = direct_dft(a.data(), 8, 8);
        let (br, bi) = direct_dft(b.data(), 8, 8);
        let (mut re, mut im) = (vec![0.0; ar.len()], vec![0.0; ar.len()]);
        for i in 0..ar.len() {
            let amp = ar[i].hypot(ai[i]);
            let ph = bi[i].atan2(br[i]);
            re[i] = amp * ph.cos();
            im[i] = amp * ph.sin();
        }
        let want = direct_idft(&re, &im, 8, 8);
        for (g, w) in mixed.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn amplitude_scaling_scales_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::rand_uniform(&[2, 2, 8, 4], -1.0, 1.0, &mut rng);
        let s = fft2_real(&x).unwrap();
        let scaled = recombine(&s.amplitude.map(|a| 2.5 * a), &s.phase, s.extent).unwrap();
        let y = ifft2_real(&scaled).unwrap();
        assert!(y.max_abs_diff(&x.map(|v| 2.5 * v)) < 1e-12);
    }

    #[test]
    fn recombine_rejects_negative_amplitude() {
        let a = Tensor::<f32>::from_fn(&[1, 1, 2, 2], |i| if i == 3 { -0.1 } else { 1.0 });
        let p = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(recombine(&a, &p, (2, 2)).is_err());
        assert!(recombine(&a.map(f32::abs), &p, (2, 2)).is_ok());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (h, w) in [(8, 8), (4, 6), (5, 3)] {
            let x = Tensor::<f64>::rand_uniform(&[1, 2, h, w], -1.0, 1.0, &mut rng);
            let fx = rfft2(&x).unwrap();
            let g = ComplexHalf {
                re: Tensor::<f64>::rand_uniform(fx.re.shape(), -1.0, 1.0, &mut rng),
                im: Tensor::<f64>::rand_uniform(fx.re.shape(), -1.0, 1.0, &mut rng),
                width: w,
            };
            let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum()
            };
            let lhs = dot(&fx.re, &g.re) + dot(&fx.im, &g.im);
            let rhs = dot(&x, &rfft2_adjoint(&g).unwrap());
            assert!((lhs - rhs).abs() < 1e-10, "rfft2 {h}x{w}: {lhs} vs {rhs}");

            let y = irfft2(&g).unwrap();
            let gy = Tensor::<f64>::rand_uniform(y.shape(), -1.0, 1.0, &mut rng);
            let adj = irfft2_adjoint(&gy).unwrap();
            let lhs = dot(&y, &gy);
            let rhs = dot(&g.re, &adj.re) + dot(&g.im, &adj.im);
            assert!((lhs - rhs).abs() < 1e-10, "irfft2 {h}x{w}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn counter_matches_formula() {
        let x = Tensor::<f32>::zeros(&[2, 3, 16, 8]);
        let (s, c) = counter::measure(|| rfft2(&x).unwrap());
        assert_eq!(c.fft, 6 * fft_macs(16, 8));
        assert_eq!(fft_macs(16, 8), 5 * 128 * 7);
        let (_, c) = counter::measure(|| irfft2(&s).unwrap());
        assert_eq!(c.fft, 6 * fft_macs(16, 8));
        let x = Tensor::<f32>::zeros(&[1, 1, 6, 8]);
        let (_, c) = counter::measure(|| rfft2(&x).unwrap());
        assert_eq!(c.fft, fft_macs(6, 8));
    }
}
