//! Flat `key=value` run configuration.
//!
//! Keys are grouped by prefix: `model.*` and `train.*` map onto the core
//! configurations, `synth.*` describes the degradation distribution,
//! `paths.*` names inputs and outputs, and a few command-specific keys
//! (`profile.*`, `ablate.suite`, `infer.emit_intermediate`) carry the
//! command-line overrides so the emitted file reproduces a run on its own.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use darkir_core::degrade::{KernelFamily, ParamRanges};
use darkir_core::model::DarkIrConfig;
use darkir_core::train::TrainConfig;
use darkir_core::{Error, Result};

/// File name of the resolved configuration `command` writes next to its outputs.
pub fn resolved_name(command: &str) -> String {
    format!("resolved_{command}.cfg")
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(cfg_err(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn parse_pair<V: FromStr + Copy>(key: &str, v: &str) -> Result<(V, V)> {
    match v.split_once(',') {
        Some((a, b)) => Ok((parse(key, a)?, parse(key, b)?)),
        None => {
            let x = parse(key, v)?;
            Ok((x, x))
        }
    }
}

/// A `HxW` extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Size {
    pub h: usize,
    pub w: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (h, w) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| format!("expected a positive extent, got {t:?}"))
        };
        Ok(Size {
            h: num(h)?,
            w: num(w)?,
        })
    }
}

impl std::fmt::Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

fn kernel_name(k: KernelFamily) -> &'static str {
    match k {
        KernelFamily::Gaussian => "gaussian",
        KernelFamily::Motion => "motion",
        KernelFamily::Mixed => "mixed",
    }
}

/// Pair count, parameter ranges and the clean-image source.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub ranges: ParamRanges,
    /// Generate this many procedural clean scenes instead of reading
    /// `paths.clean_dir`; 0 reads the directory.
    pub procedural: usize,
    pub procedural_size: Size,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 16,
            ranges: ParamRanges::default(),
            procedural: 0,
            procedural_size: Size { h: 64, w: 64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub clean_dir: PathBuf,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub pred_dir: PathBuf,
    pub reference_dir: PathBuf,
    pub report_dir: PathBuf,
    /// Pairs scored by `ablate`; empty scores the training pairs.
    pub holdout_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            clean_dir: "clean".into(),
            data_dir: "data".into(),
            run_dir: "run".into(),
            checkpoint: "run/latest.dkc".into(),
            input_dir: "data/y".into(),
            output_dir: "restored".into(),
            pred_dir: "restored".into(),
            reference_dir: "data/x".into(),
            report_dir: "report".into(),
            holdout_dir: None,
        }
    }
}

impl Paths {
    fn all_mut(&mut self) -> [&mut PathBuf; 9] {
        [
            &mut self.clean_dir,
            &mut self.data_dir,
            &mut self.run_dir,
            &mut self.checkpoint,
            &mut self.input_dir,
            &mut self.output_dir,
            &mut self.pred_dir,
            &mut self.reference_dir,
            &mut self.report_dir,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Seeds model initialisation, training and synthesis.
    pub seed: u64,
    pub model: DarkIrConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
    pub profile_size: Size,
    /// Widths profiled alongside the configured model.
    pub profile_widths: Vec<usize>,
    pub profile_include_fft: bool,
    pub ablate_suite: String,
    pub emit_intermediate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: DarkIrConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            paths: Paths::default(),
            profile_size: Size { h: 256, w: 256 },
            profile_widths: vec![16, 32, 64],
            profile_include_fft: false,
            ablate_suite: "blocks".into(),
            emit_intermediate: false,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, v);
        }
        if key == "train.seed" {
            return Err(cfg_err("train.seed: use the top-level seed key"));
        }
        if let Some(k) = key.strip_prefix("train.") {
            return self.train.set(k, v);
        }
        let r = &mut self.synth.ranges;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "synth.count" => self.synth.count = parse(key, v)?,
            "synth.procedural" => self.synth.procedural = parse(key, v)?,
            "synth.procedural_size" => self.synth.procedural_size = parse(key, v)?,
            "synth.scale" => r.scale = parse_pair(key, v)?,
            "synth.gamma" => r.gamma = parse_pair(key, v)?,
            "synth.read_sigma" => r.read_sigma = parse_pair(key, v)?,
            "synth.shot_sigma" => r.shot_sigma = parse_pair(key, v)?,
            "synth.blur_sigma" => r.blur_sigma = parse_pair(key, v)?,
            "synth.motion_steps" => r.motion_steps = parse_pair(key, v)?,
            "synth.kernel_size" => r.kernel_size = parse(key, v)?,
            "synth.kernel" => {
                r.kernel = match v {
                    "gaussian" => KernelFamily::Gaussian,
                    "motion" => KernelFamily::Motion,
                    "mixed" => KernelFamily::Mixed,
                    _ => return Err(cfg_err(format!("{key}: expected gaussian, motion or mixed, got {v:?}"))),
                }
            }
            "paths.clean_dir" => self.paths.clean_dir = v.into(),
            "paths.data_dir" => self.paths.data_dir = v.into(),
            "paths.run_dir" => self.paths.run_dir = v.into(),
            "paths.checkpoint" => self.paths.checkpoint = v.into(),
            "paths.input_dir" => self.paths.input_dir = v.into(),
            "paths.output_dir" => self.paths.output_dir = v.into(),
            "paths.pred_dir" => self.paths.pred_dir = v.into(),
            "paths.reference_dir" => self.paths.reference_dir = v.into(),
            "paths.report_dir" => self.paths.report_dir = v.into(),
            "paths.holdout_dir" => {
                self.paths.holdout_dir = if v.is_empty() { None } else { Some(v.into()) }
            }
            "profile.size" => self.profile_size = parse(key, v)?,
            "profile.widths" => {
                self.profile_widths = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|w| parse(key, w)).collect::<Result<_>>()?
                }
            }
            "profile.include_fft" => self.profile_include_fft = parse_bool(key, v)?,
            "ablate.suite" => self.ablate_suite = v.to_string(),
            "infer.emit_intermediate" => self.emit_intermediate = parse_bool(key, v)?,
            _ => return Err(cfg_err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parse config text. Relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| cfg_err(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        for p in cfg.paths.all_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.paths.holdout_dir.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("cannot read config {}: {e}", path.display()),
            ))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = std::path::absolute(base)?;
        Self::parse(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth
            .ranges
            .validate()
            .map_err(|e| cfg_err(format!("synth: {}", strip_prefix(&e))))
    }

    /// The training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Every key with its effective value; parsing this text gives back
    /// the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        for (k, v) in self.model.entries() {
            put(&format!("model.{k}"), v);
        }
        for (k, v) in self.train.entries() {
            if k != "seed" {
                put(&format!("train.{k}"), v);
            }
        }
        let r = &self.synth.ranges;
        let pair = |(a, b): (f64, f64)| format!("{a},{b}");
        put("synth.count", self.synth.count.to_string());
        put("synth.procedural", self.synth.procedural.to_string());
        put("synth.procedural_size", self.synth.procedural_size.to_string());
        put("synth.scale", pair(r.scale));
        put("synth.gamma", pair(r.gamma));
        put("synth.read_sigma", pair(r.read_sigma));
        put("synth.shot_sigma", pair(r.shot_sigma));
        put("synth.kernel", kernel_name(r.kernel).into());
        put("synth.kernel_size", r.kernel_size.to_string());
        put("synth.blur_sigma", pair(r.blur_sigma));
        put("synth.motion_steps", format!("{},{}", r.motion_steps.0, r.motion_steps.1));
        let p = &self.paths;
        let show = |p: &Path| p.display().to_string();
        put("paths.clean_dir", show(&p.clean_dir));
        put("paths.data_dir", show(&p.data_dir));
        put("paths.run_dir", show(&p.run_dir));
        put("paths.checkpoint", show(&p.checkpoint));
        put("paths.input_dir", show(&p.input_dir));
        put("paths.output_dir", show(&p.output_dir));
        put("paths.pred_dir", show(&p.pred_dir));
        put("paths.reference_dir", show(&p.reference_dir));
        put("paths.report_dir", show(&p.report_dir));
        put("paths.holdout_dir", p.holdout_dir.as_deref().map(show).unwrap_or_default());
        put("profile.size", self.profile_size.to_string());
        put(
            "profile.widths",
            self.profile_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        put("profile.include_fft", self.profile_include_fft.to_string());
        put("ablate.suite", self.ablate_suite.clone());
        put("infer.emit_intermediate", self.emit_intermediate.to_string());
        s
    }

    /// Write the resolved configuration of `command` into `dir`.
    pub fn emit(&self, dir: &Path, command: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(resolved_name(command)), self.to_text())?;
        Ok(())
    }
}

/// Message of a config error without the variant's display prefix.
fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        e => e.to_string(),
    }
}
