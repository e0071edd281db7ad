//! Paired data synthesis: `y = clip01(s·(x ⊛ k)^g + n)` with Gaussian or
//! motion blur `k` and signal-dependent Gaussian noise `n`.

mod ppm;
mod scene;
mod synth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use scene::procedural_image;
pub use synth::{
    read_manifest, sample_entry, stream_seed, synth_dataset, write_manifest, KernelFamily,
    ManifestEntry, ParamRanges,
};

pub const MAX_KERNEL: usize = 31;

/// Normalised, odd-sized point-spread function.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

fn check_size(size: usize) -> Result<()> {
    if size.is_multiple_of(2) || size > MAX_KERNEL {
        return Err(invalid("kernel", format!("size must be odd and <= {MAX_KERNEL}, got {size}")));
    }
    Ok(())
}

impl BlurKernel {
    /// Normalise non-negative `weights` on a `size × size` grid.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        check_size(size)?;
        if weights.len() != size * size {
            return Err(invalid("kernel", format!("{} weights for size {size}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("kernel", "weights must be finite and non-negative"));
        }
        let z: f64 = weights.iter().sum();
        if z <= 0.0 {
            return Err(invalid("kernel", "weights sum to zero"));
        }
        Ok(Self {
            size,
            weights: weights.into_iter().map(|w| w / z).collect(),
        })
    }

    pub fn delta() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major weights, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }
}

pub fn make_gaussian_kernel(size: usize, sigma: f64) -> Result<BlurKernel> {
    check_size(size)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid("gaussian kernel", format!("sigma must be > 0, got {sigma}")));
    }
    let r = (size / 2) as f64;
    let w = (0..size * size)
        .map(|k| {
            let (dy, dx) = ((k / size) as f64 - r, (k % size) as f64 - r);
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    BlurKernel::new(size, w)
}

/// Random-walk camera trajectory of `steps` unit moves from the centre,
/// splatted bilinearly onto the grid. The heading drifts a little each step.
pub fn make_motion_kernel(size: usize, steps: usize, seed: u64) -> Result<BlurKernel> {
    check_size(size)?;
    if steps == 0 {
        return Err(invalid("motion kernel", "steps must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; size * size];
    let r = (size / 2) as f64;
    let (mut y, mut x) = (r, r);
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut splat = |y: f64, x: f64| {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (i, j) = (y0 as usize + dy, x0 as usize + dx);
                if i < size && j < size {
                    w[i * size + j] += wy * wx;
                }
            }
        }
    };
    splat(y, x);
    let step = if steps > 1 { r / steps as f64 * 1.5 } else { 0.0 };
    for _ in 1..steps {
        heading += rng.random_range(-0.6..0.6);
        y = (y + step * heading.sin()).clamp(0.0, 2.0 * r);
        x = (x + step * heading.cos()).clamp(0.0, 2.0 * r);
        splat(y, x);
    }
    BlurKernel::new(size, w)
}

/// Degradation parameters for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    pub kernel: BlurKernel,
    /// Exposure multiplier `s ∈ (0, 1]`.
    pub illum_scale: f64,
    /// Darkening exponent `g ≥ 1`.
    pub gamma_exp: f64,
    pub read_sigma: f64,
    pub shot_sigma: f64,
    pub seed: u64,
}

impl DegradationParams {
    /// The configuration under which `degrade` returns its input.
    pub fn identity() -> Self {
        Self {
            kernel: BlurKernel::delta(),
            illum_scale: 1.0,
            gamma_exp: 1.0,
            read_sigma: 0.0,
            shot_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.illum_scale, self.gamma_exp, self.read_sigma, self.shot_sigma]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("degrade", "parameters must be finite"));
        }
        if !(self.illum_scale > 0.0 && self.illum_scale <= 1.0) {
            return Err(invalid("degrade", format!("illum_scale {} not in (0, 1]", self.illum_scale)));
        }
        if self.gamma_exp < 1.0 {
            return Err(invalid("degrade", format!("gamma_exp {} < 1", self.gamma_exp)));
        }
        if self.read_sigma < 0.0 || self.shot_sigma < 0.0 {
            return Err(invalid("degrade", "noise levels must be >= 0"));
        }
        Ok(())
    }
}

/// True convolution with `k` (kernel flipped), replicate boundary.
pub fn blur<T: Scalar>(x: &Tensor<T>, k: &BlurKernel) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4()?;
    let r = (k.size / 2) as isize;
    let mut out = Vec::with_capacity(x.len());
    for plane in x.data().chunks_exact(h * w) {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = 0.0;
                for a in 0..k.size as isize {
                    let yi = (i + r - a).clamp(0, h as isize - 1) as usize;
                    for b in 0..k.size as isize {
                        let xj = (j + r - b).clamp(0, w as isize - 1) as usize;
                        acc += k.at(a as usize, b as usize) * plane[yi * w + xj].as_f64();
                    }
                }
                out.push(T::from_f64(acc));
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `clip01(s·(x ⊛ k)^g + n)`, `n ~ N(0, σr² + σs·v)` with `v` the value
/// before noise. Noise is drawn in raster order from a stream seeded by
/// `p.seed`.
pub fn degrade<T: Scalar>(x: &Tensor<T>, p: &DegradationParams) -> Result<Tensor<T>> {
    p.validate()?;
    let [_, c, _, _] = x.dims4()?;
    if c != 3 {
        return Err(shape_err("degrade", format!("expected 3 channels, got {c}")));
    }
    if let Some(v) = x.data().iter().find(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
        return Err(invalid("degrade", format!("clean value {v} outside [0, 1]")));
    }
    let blurred = blur(x, &p.kernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noisy = p.read_sigma > 0.0 || p.shot_sigma > 0.0;
    let data = blurred
        .data()
        .iter()
        .map(|b| {
            let v = p.illum_scale * b.as_f64().powf(p.gamma_exp);
            let n = if noisy {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * (p.read_sigma * p.read_sigma + p.shot_sigma * v).sqrt()
            } else {
                0.0
            };
            T::from_f64((v + n).clamp(0.0, 1.0))
        })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}
