use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Attention, BlockKind, BlockOptions, BranchCombine};

/// How encoder features join the decoder at each level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipMode {
    /// `enc + dec`.
    Add,
    /// `enc + pw(gate(pw(enc))) + dec` with a C→C first map.
    Lut1d,
    /// As `Lut1d` with a C→2C first map.
    Lut1dDouble,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(cfg_err(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(SkipMode, "skip mode", {
    SkipMode::Add => "add",
    SkipMode::Lut1d => "lut1d",
    SkipMode::Lut1dDouble => "lut1d_double",
});

keyword_enum!(BlockKind, "block kind", {
    BlockKind::EBlock => "eblock",
    BlockKind::EBlockPhase => "eblock_phase",
    BlockKind::DBlock => "dblock",
    BlockKind::NafBlock => "nafblock",
});

keyword_enum!(Attention, "attention", {
    Attention::DiSpam => "dispam",
    Attention::Lka => "lka",
});

keyword_enum!(BranchCombine, "branch combine", {
    BranchCombine::Sum => "sum",
    BranchCombine::Concat => "concat",
});

/// Network hyper-parameters. Levels are ordered shallow to deep for the
/// encoder and deep to shallow for the decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DarkIrConfig {
    pub width: usize,
    pub enc_blocks: [usize; 3],
    pub mid_blocks: usize,
    pub dec_blocks: [usize; 3],
    pub dilations: Vec<usize>,
    pub skip_mode: SkipMode,
    pub global_residual: bool,
    /// Block used in the encoder and the bottleneck.
    pub enc_block: BlockKind,
    pub dec_block: BlockKind,
    pub attention: Attention,
    pub branch_combine: BranchCombine,
    pub extra_dw: bool,
}

impl Default for DarkIrConfig {
    fn default() -> Self {
        Self {
            width: 16,
            enc_blocks: [1, 2, 4],
            mid_blocks: 4,
            dec_blocks: [2, 2, 2],
            dilations: vec![1, 4, 9],
            skip_mode: SkipMode::Add,
            global_residual: true,
            enc_block: BlockKind::EBlock,
            dec_block: BlockKind::DBlock,
            attention: Attention::DiSpam,
            branch_combine: BranchCombine::Sum,
            extra_dw: true,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_usize(key, p)).collect()
}

fn parse_triple(key: &str, v: &str) -> Result<[usize; 3]> {
    let l = parse_list(key, v)?;
    l.try_into()
        .map_err(|l: Vec<usize>| cfg_err(format!("{key}: expected 3 counts, got {}", l.len())))
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(cfg_err(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl DarkIrConfig {
    pub const KEYS: [&'static str; 12] = [
        "width",
        "enc_blocks",
        "mid_blocks",
        "dec_blocks",
        "dilations",
        "skip_mode",
        "global_residual",
        "enc_block",
        "dec_block",
        "attention",
        "branch_combine",
        "extra_dw",
    ];

    /// Width 8, one block per stage.
    pub fn tiny() -> Self {
        Self {
            width: 8,
            enc_blocks: [1, 1, 1],
            mid_blocks: 1,
            dec_blocks: [1, 1, 1],
            ..Self::default()
        }
    }

    pub fn with_width(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn block_options(&self) -> BlockOptions {
        BlockOptions {
            dilations: self.dilations.clone(),
            combine: self.branch_combine,
            extra_dw: self.extra_dw,
            attention: self.attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(cfg_err("width must be >= 1"));
        }
        if self.width.checked_mul(8).is_none() {
            return Err(cfg_err("width too large"));
        }
        if self.skip_mode == SkipMode::Lut1d && !self.width.is_multiple_of(2) {
            return Err(cfg_err(format!("skip_mode lut1d needs an even width, got {}", self.width)));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(cfg_err(format!("dilations must be positive, got {:?}", self.dilations)));
        }
        Ok(())
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "width" => self.width = parse_usize(key, v)?,
            "enc_blocks" => self.enc_blocks = parse_triple(key, v)?,
            "mid_blocks" => self.mid_blocks = parse_usize(key, v)?,
            "dec_blocks" => self.dec_blocks = parse_triple(key, v)?,
            "dilations" => self.dilations = parse_list(key, v)?,
            "skip_mode" => self.skip_mode = v.parse()?,
            "global_residual" => self.global_residual = parse_bool(key, v)?,
            "enc_block" => self.enc_block = v.parse()?,
            "dec_block" => self.dec_block = v.parse()?,
            "attention" => self.attention = v.parse()?,
            "branch_combine" => self.branch_combine = v.parse()?,
            "extra_dw" => self.extra_dw = parse_bool(key, v)?,
            _ => return Err(cfg_err(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in [`Self::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.width.to_string(),
            join(&self.enc_blocks),
            self.mid_blocks.to_string(),
            join(&self.dec_blocks),
            join(&self.dilations),
            self.skip_mode.to_string(),
            self.global_residual.to_string(),
            self.enc_block.to_string(),
            self.dec_block.to_string(),
            self.attention.to_string(),
            self.branch_combine.to_string(),
            self.extra_dw.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parse `key=value` lines; blank lines and `#` comments are ignored and
    /// missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = DarkIrConfig {
            width: 12,
            enc_blocks: [3, 0, 2],
            dilations: vec![1, 2],
            skip_mode: SkipMode::Lut1dDouble,
            global_residual: false,
            enc_block: BlockKind::EBlockPhase,
            dec_block: BlockKind::NafBlock,
            attention: Attention::Lka,
            branch_combine: BranchCombine::Concat,
            extra_dw: false,
            ..DarkIrConfig::default()
        };
        assert_eq!(DarkIrConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = DarkIrConfig::default();
        assert!(matches!(c.set("widht", "3"), Err(Error::Config(_))));
        assert!(c.set("enc_blocks", "1,2").is_err());
        assert!(c.set("skip_mode", "mul").is_err());
        assert!(c.set("global_residual", "maybe").is_err());
        assert!(DarkIrConfig::from_text("width=0").is_err());
        assert!(DarkIrConfig::from_text("width=7\nskip_mode=lut1d").is_err());
        assert!(DarkIrConfig::from_text("dilations=1,0").is_err());
        assert!(DarkIrConfig::from_text("width 8").is_err());
    }

    #[test]
    fn comments_and_defaults() {
        let c = DarkIrConfig::from_text("# tiny\nwidth = 8 # base\n\nmid_blocks=1\n").unwrap();
        assert_eq!((c.width, c.mid_blocks, c.enc_blocks), (8, 1, [1, 2, 4]));
    }
}
