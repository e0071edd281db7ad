//! Command-line driver for the DarkIR restoration network.
//!
//! Every command reads one flat `key=value` config ([`config::RunConfig`]),
//! applies the command-line overrides, and writes the resolved config next
//! to its outputs so the run can be repeated from that file alone.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use darkir_core::{Error, Result};

use config::{RunConfig, Size};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Degrade clean images into a paired dataset.
    Synth,
    /// Train a model on a synthesised dataset.
    Train,
    /// Restore every image of a directory with a checkpoint.
    Infer,
    /// Score predictions against references by file name.
    Eval,
    /// Tabulate parameters and multiply-accumulates.
    Profile,
    /// Train and score a suite of architecture or loss variants.
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Eval => "eval",
            Command::Profile => "profile",
            Command::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "darkir", version, about = "Low-light enhancement and deblurring with DarkIR")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,

    /// Run configuration (flat key=value text).
    #[arg(long)]
    pub config: PathBuf,

    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Overrides `profile.size`.
    #[arg(long, value_name = "HxW")]
    pub size: Option<Size>,

    /// Overrides `ablate.suite`.
    #[arg(long, value_name = "NAME")]
    pub suite: Option<String>,

    /// Sets `infer.emit_intermediate`.
    #[arg(long)]
    pub emit_intermediate: bool,
}

impl Cli {
    /// The config file with this invocation's overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.size {
            cfg.profile_size = s;
        }
        if let Some(s) = &self.suite {
            cfg.ablate_suite = s.clone();
        }
        cfg.emit_intermediate |= self.emit_intermediate;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<()> {
        let cfg = self.resolve()?;
        match self.command {
            Command::Synth => commands::synth(&cfg),
            Command::Train => commands::train(&cfg),
            Command::Infer => commands::infer(&cfg),
            Command::Eval => commands::eval(&cfg),
            Command::Profile => commands::profile(&cfg),
            Command::Ablate => commands::ablate(&cfg),
        }
    }
}

/// 2 for configuration and usage errors, 3 for I/O and file formats,
/// 4 for a numerical abort, 1 for internal failures.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid { .. } | Error::Shape { .. } => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::NonFinite(_) => 4,
        Error::Tape(_) => 1,
    }
}
