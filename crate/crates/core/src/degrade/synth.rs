use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    decode_ppm, degrade, encode_ppm, make_gaussian_kernel, make_motion_kernel, write_ppm, BlurKernel,
    DegradationParams,
};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    Motion,
    /// Either, with equal probability.
    Mixed,
}

/// Uniform sampling bounds for every degradation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRanges {
    pub scale: (f64, f64),
    pub gamma: (f64, f64),
    pub read_sigma: (f64, f64),
    pub shot_sigma: (f64, f64),
    pub kernel: KernelFamily,
    pub kernel_size: usize,
    pub blur_sigma: (f64, f64),
    pub motion_steps: (usize, usize),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            scale: (0.15, 0.5),
            gamma: (1.0, 1.5),
            read_sigma: (0.0, 0.02),
            shot_sigma: (0.0, 0.005),
            kernel: KernelFamily::Mixed,
            kernel_size: 7,
            blur_sigma: (0.3, 1.5),
            motion_steps: (2, 8),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(invalid("synth", format!("{name} range ({lo}, {hi}) is not ordered")))
            }
        };
        ordered("scale", self.scale)?;
        ordered("gamma", self.gamma)?;
        ordered("read_sigma", self.read_sigma)?;
        ordered("shot_sigma", self.shot_sigma)?;
        ordered("blur_sigma", self.blur_sigma)?;
        if !(self.scale.0 > 0.0 && self.scale.1 <= 1.0) {
            return Err(invalid("synth", "scale range must lie in (0, 1]"));
        }
        if self.gamma.0 < 1.0 || self.read_sigma.0 < 0.0 || self.shot_sigma.0 < 0.0 {
            return Err(invalid("synth", "gamma must be >= 1 and noise levels >= 0"));
        }
        if self.blur_sigma.0 <= 0.0 {
            return Err(invalid("synth", "blur_sigma must be > 0"));
        }
        let (a, b) = self.motion_steps;
        if a == 0 || a > b {
            return Err(invalid("synth", format!("motion_steps range ({a}, {b}) is invalid")));
        }
        super::check_size(self.kernel_size)
    }
}

/// One manifest line. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub y_path: String,
    pub x_path: String,
    pub scale: f64,
    pub gamma: f64,
    pub read_sigma: f64,
    /// `gaussian` or `motion`.
    pub kernel_type: String,
    pub kernel_seed: u64,
    pub noise_seed: u64,
    pub shot_sigma: f64,
    pub kernel_size: usize,
    /// Gaussian sigma, or motion step count.
    pub kernel_param: f64,
}

const HEADER: &str = "# index\ty\tx\ts\tg\tsigma\tkernel\tkernel_seed\tnoise_seed\tshot_sigma\tkernel_size\tkernel_param";

impl ManifestEntry {
    pub fn kernel(&self) -> Result<BlurKernel> {
        match self.kernel_type.as_str() {
            "gaussian" => make_gaussian_kernel(self.kernel_size, self.kernel_param),
            "motion" => make_motion_kernel(self.kernel_size, self.kernel_param as usize, self.kernel_seed),
            other => Err(Error::Format(format!("unknown kernel type {other:?}"))),
        }
    }

    /// The parameters this pair was generated with.
    pub fn params(&self) -> Result<DegradationParams> {
        Ok(DegradationParams {
            kernel: self.kernel()?,
            illum_scale: self.scale,
            gamma_exp: self.gamma,
            read_sigma: self.read_sigma,
            shot_sigma: self.shot_sigma,
            seed: self.noise_seed,
        })
    }

    fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.index,
            self.y_path,
            self.x_path,
            self.scale,
            self.gamma,
            self.read_sigma,
            self.kernel_type,
            self.kernel_seed,
            self.noise_seed,
            self.shot_sigma,
            self.kernel_size,
            self.kernel_param
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 12 {
            return Err(Error::Format(format!("manifest line has {} fields, expected 12", f.len())));
        }
        let bad = |i: usize| Error::Format(format!("manifest field {} is malformed: {:?}", i + 1, f[i]));
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(i));
        let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad(i));
        Ok(Self {
            index: int(0)? as usize,
            y_path: f[1].to_string(),
            x_path: f[2].to_string(),
            scale: num(3)?,
            gamma: num(4)?,
            read_sigma: num(5)?,
            kernel_type: f[6].to_string(),
            kernel_seed: int(7)?,
            noise_seed: int(8)?,
            shot_sigma: num(9)?,
            kernel_size: int(10)? as usize,
            kernel_param: num(11)?,
        })
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::from(HEADER);
    text.push('\n');
    for e in entries {
        let _ = writeln!(text, "{}", e.line());
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(ManifestEntry::parse)
        .collect()
}

/// Seed of the independent stream for item `index` under `master`.
pub fn stream_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draw parameters for pair `index`; the result depends only on
/// `(seed, index)`.
pub fn sample_entry(ranges: &ParamRanges, seed: u64, index: usize) -> ManifestEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, index as u64));
    let scale = draw(&mut rng, ranges.scale);
    let gamma = draw(&mut rng, ranges.gamma);
    let read_sigma = draw(&mut rng, ranges.read_sigma);
    let shot_sigma = draw(&mut rng, ranges.shot_sigma);
    let motion = match ranges.kernel {
        KernelFamily::Gaussian => false,
        KernelFamily::Motion => true,
        KernelFamily::Mixed => rng.random_bool(0.5),
    };
    let kernel_param = if motion {
        rng.random_range(ranges.motion_steps.0..=ranges.motion_steps.1) as f64
    } else {
        draw(&mut rng, ranges.blur_sigma)
    };
    ManifestEntry {
        index,
        y_path: format!("y/{index:05}.ppm"),
        x_path: format!("x/{index:05}.ppm"),
        scale,
        gamma,
        read_sigma,
        kernel_type: if motion { "motion" } else { "gaussian" }.to_string(),
        kernel_seed: rng.next_u64(),
        noise_seed: rng.next_u64(),
        shot_sigma,
        kernel_size: ranges.kernel_size,
        kernel_param,
    }
}

/// Write `n` pairs to `out_dir/{y,x}/NNNNN.ppm` plus `out_dir/manifest.tsv`.
/// Pair `i` degrades `clean[i % clean.len()]`.
pub fn synth_dataset(
    clean: &[Tensor<f32>],
    ranges: &ParamRanges,
    n: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    ranges.validate()?;
    if n > 0 && clean.is_empty() {
        return Err(invalid("synth", "no clean images"));
    }
    fs::create_dir_all(out_dir)?;
    if n > 0 {
        fs::create_dir_all(out_dir.join("y"))?;
        fs::create_dir_all(out_dir.join("x"))?;
    }
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let e = sample_entry(ranges, seed, i);
        // Degrade the 8-bit clean image so each stored pair is consistent.
        let x: Tensor<f32> = decode_ppm(&encode_ppm(&clean[i % clean.len()])?)?;
        let y = degrade(&x, &e.params()?)?;
        write_ppm(out_dir.join(&e.y_path), &y)?;
        write_ppm(out_dir.join(&e.x_path), &x)?;
        entries.push(e);
    }
    write_manifest(out_dir.join("manifest.tsv"), &entries)?;
    Ok(entries)
}
