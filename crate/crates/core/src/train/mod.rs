//! Optimisation loop: AdamW with a cosine learning-rate schedule over random
//! augmented crops, with a CSV metric log and periodic checkpoints.

mod adamw;
mod augment;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::degrade::{read_manifest, read_ppm, stream_seed};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossWeights};
use crate::metrics::{psnr, ssim};
use crate::model::{self, DarkIr, SCALE};
use crate::tensor::{self, Tensor};

pub use adamw::{adamw_step, clip_grad_norm, OptimState};
pub use augment::{augment, Augment};

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(format!("{key}: cannot parse {v:?}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub seed: u64,
    /// Global gradient-norm bound; off when `None`.
    pub grad_clip: Option<f64>,
    /// Write a numbered checkpoint every this many steps; 0 keeps only `latest`.
    pub checkpoint_every: usize,
    /// Random flips and quarter turns of each crop.
    pub augment: bool,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 5e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.9,
            weight_decay: 1e-3,
            eps: 1e-8,
            total_steps: 2000,
            batch_size: 4,
            crop_size: 64,
            seed: 0,
            grad_clip: None,
            checkpoint_every: 500,
            augment: true,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "lr0",
        "lr_min",
        "beta1",
        "beta2",
        "weight_decay",
        "eps",
        "total_steps",
        "batch_size",
        "crop_size",
        "seed",
        "grad_clip",
        "checkpoint_every",
        "augment",
        "loss.pixel",
        "loss.perceptual",
        "loss.edge",
        "loss.lol",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr0 && self.lr0.is_finite()) {
            return Err(cfg_err(format!(
                "need 0 < lr_min <= lr0, got lr_min={} lr0={}",
                self.lr_min, self.lr0
            )));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(cfg_err(format!("{k} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(cfg_err("eps must be > 0 and weight_decay >= 0"));
        }
        if self.batch_size == 0 {
            return Err(cfg_err("batch_size must be >= 1"));
        }
        if !self.crop_size.is_multiple_of(SCALE) || !self.crop_size.is_power_of_two() {
            return Err(cfg_err(format!(
                "crop_size must be a power of two divisible by {SCALE}, got {}",
                self.crop_size
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(cfg_err(format!("grad_clip must be > 0, got {c}")));
            }
        }
        self.loss
            .validate()
            .map_err(|e| cfg_err(e.to_string()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "lr0" => self.lr0 = parse(key, v)?,
            "lr_min" => self.lr_min = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "crop_size" => self.crop_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "grad_clip" => {
                self.grad_clip = match v {
                    "off" | "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "augment" => self.augment = model::parse_bool(key, v)?,
            "loss.pixel" => self.loss.pixel = parse(key, v)?,
            "loss.perceptual" => self.loss.perceptual = parse(key, v)?,
            "loss.edge" => self.loss.edge = parse(key, v)?,
            "loss.lol" => self.loss.lol = model::parse_bool(key, v)?,
            _ => return Err(cfg_err(format!("unknown train key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.lr0.to_string(),
            self.lr_min.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.weight_decay.to_string(),
            self.eps.to_string(),
            self.total_steps.to_string(),
            self.batch_size.to_string(),
            self.crop_size.to_string(),
            self.seed.to_string(),
            self.grad_clip.map_or("off".into(), |c| c.to_string()),
            self.checkpoint_every.to_string(),
            self.augment.to_string(),
            self.loss.pixel.to_string(),
            self.loss.perceptual.to_string(),
            self.loss.edge.to_string(),
            self.loss.lol.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(cfg_err(format!(
            "step {step} is past total_steps {}",
            cfg.total_steps
        )));
    }
    if cfg.total_steps == 0 {
        return Ok(cfg.lr0);
    }
    let t = step as f64 / cfg.total_steps as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// A degraded input `y` and its clean reference `x`, both `[1, 3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub name: String,
    pub y: Tensor<f32>,
    pub x: Tensor<f32>,
}

/// Every pair listed in `dir/manifest.tsv`.
pub fn load_pairs(dir: &Path) -> Result<Vec<Pair>> {
    read_manifest(dir.join("manifest.tsv"))?
        .into_iter()
        .map(|e| {
            Ok(Pair {
                name: Path::new(&e.y_path)
                    .file_stem()
                    .map_or_else(|| e.index.to_string(), |s| s.to_string_lossy().into_owned()),
                y: read_ppm(dir.join(&e.y_path))?,
                x: read_ppm(dir.join(&e.x_path))?,
            })
        })
        .collect()
}

/// One line of the metric log. Component losses are unweighted.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub pixel: f64,
    pub edge: f64,
    pub lol: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "step,lr,loss_total,loss_pixel,loss_edge,loss_lol";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.total, self.pixel, self.edge, self.lol
        )
    }
}

/// Where a run writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn log(&self) -> PathBuf {
        self.0.join("log.csv")
    }

    pub fn latest(&self) -> PathBuf {
        self.0.join("latest.dkc")
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.0.join(format!("step_{step:06}.dkc"))
    }
}

/// Random `crop × crop` windows from random pairs, each with its own
/// symmetry draw when augmenting. Sample `k` of the run uses the stream `(seed, k)`.
fn sample_batch(data: &[Pair], cfg: &TrainConfig, step: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let c = cfg.crop_size;
    let mut ys = Vec::with_capacity(cfg.batch_size);
    let mut xs = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size {
        let k = (step * cfg.batch_size + b) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, k));
        let p = &data[rng.random_range(0..data.len())];
        let [_, _, h, w] = p.y.dims4()?;
        let (top, left) = (rng.random_range(0..=h - c), rng.random_range(0..=w - c));
        let (y, x) = (tensor::crop(&p.y, top, left, c, c)?, tensor::crop(&p.x, top, left, c, c)?);
        let (y, x) = if cfg.augment { augment(&y, &x, &mut rng)? } else { (y, x) };
        ys.push(y);
        xs.push(x);
    }
    Ok((Tensor::stack_batch(&ys)?, Tensor::stack_batch(&xs)?))
}

fn check_data(data: &[Pair], cfg: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(cfg_err("training set is empty"));
    }
    for p in data {
        let [n, c, h, w] = p.y.dims4()?;
        if p.x.shape() != p.y.shape() || n != 1 || c != 3 {
            return Err(cfg_err(format!(
                "pair {}: expected matching [1, 3, H, W] images, got {:?} and {:?}",
                p.name,
                p.y.shape(),
                p.x.shape()
            )));
        }
        if cfg.crop_size > h.min(w) {
            return Err(cfg_err(format!(
                "crop_size {} exceeds pair {} of extent {h}x{w}",
                cfg.crop_size, p.name
            )));
        }
    }
    Ok(())
}

/// Train `model` in place. With a run directory, the log is appended row by
/// row and checkpoints are written every `checkpoint_every` steps and at the
/// end as `latest`. A non-finite loss or gradient stops the run with
/// [`Error::NonFinite`] before the parameters are touched, and `latest` then
/// holds the last good state.
pub fn train(
    model: &mut DarkIr<f32>,
    data: &[Pair],
    cfg: &TrainConfig,
    run: Option<&RunDir>,
    on_step: &mut dyn FnMut(&LogRow),
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    check_data(data, cfg)?;
    let mut log_file = match run {
        Some(r) => {
            fs::create_dir_all(&r.0)?;
            let mut f = BufWriter::new(File::create(r.log())?);
            writeln!(f, "{}", LogRow::HEADER)?;
            Some(f)
        }
        None => None,
    };
    let mut state = OptimState::new(&model.params);
    let mut log = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        let lr = cosine_lr(step, cfg)?;
        let (yb, xb) = sample_batch(data, cfg, step)?;
        let tape = Tape::new();
        let (y, x) = (tape.constant(yb), tape.constant(xb));
        let (xhat, low) = model.forward(&tape, y)?;
        let terms = total_loss(&tape, x, xhat, low, &cfg.loss, None)?;
        let scalar = |v| tape.value(v).map(|t| t.item() as f64);
        let row = LogRow {
            step: step + 1,
            lr,
            total: scalar(terms.total)?,
            pixel: scalar(terms.parts.pixel)?,
            edge: scalar(terms.parts.edge)?,
            lol: scalar(terms.parts.lol)?,
        };
        let outcome = if row.total.is_finite() {
            gradients(model, &tape, terms.total).and_then(|mut g| {
                if let Some(c) = cfg.grad_clip {
                    clip_grad_norm(&mut g, c);
                }
                adamw_step(&mut model.params, &g, &mut state, lr, cfg)
            })
        } else {
            Err(Error::NonFinite(format!("loss is {}", row.total)))
        };
        if let Err(e) = outcome {
            return Err(abort(model, run, step, e));
        }

        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", row.csv())?;
            f.flush()?;
        }
        if let Some(r) = run {
            if cfg.checkpoint_every > 0 && row.step.is_multiple_of(cfg.checkpoint_every) {
                model::save(model, r.checkpoint(row.step))?;
                model::save(model, r.latest())?;
            }
        }
        on_step(&row);
        log.push(row);
    }
    if let Some(r) = run {
        model::save(model, r.latest())?;
    }
    Ok(log)
}

fn gradients(model: &DarkIr<f32>, tape: &Tape<f32>, loss: crate::autodiff::Var) -> Result<Vec<Tensor<f32>>> {
    let g = tape.backward(loss)?;
    let mut grads: Vec<Tensor<f32>> = model
        .params
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect();
    for (key, var) in tape.bindings() {
        if let Some(t) = g.get(var) {
            grads[key] = t.clone();
        }
    }
    Ok(grads)
}

fn abort(model: &DarkIr<f32>, run: Option<&RunDir>, step: usize, e: Error) -> Error {
    let Error::NonFinite(msg) = e else { return e };
    let kept = match run {
        Some(r) => match model::save(model, r.latest()) {
            Ok(()) => format!("; last good state saved to {}", r.latest().display()),
            Err(save) => format!("; saving the last good state failed: {save}"),
        },
        None => String::new(),
    };
    Error::NonFinite(format!("{msg} at step {}{kept}", step + 1))
}

/// Restoration quality of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Full-image PSNR and SSIM of the restored inputs against their references.
pub fn evaluate(model: &DarkIr<f32>, data: &[Pair]) -> Result<Vec<PairScore>> {
    data.iter()
        .map(|p| {
            let (xhat, _) = model.restore(&p.y)?;
            Ok(PairScore {
                name: p.name.clone(),
                psnr: psnr(&p.x, &xhat, 1.0)?,
                ssim: ssim(&p.x, &xhat)?,
            })
        })
        .collect()
}
