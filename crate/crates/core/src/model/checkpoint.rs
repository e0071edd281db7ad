//! `DKC1` checkpoints: magic, `u32` version, `u32` entry count, then per
//! entry a `u16` name length, the name and a `DKT1` tensor, then the model
//! configuration as `key=value` text up to end of file.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DarkIr, DarkIrConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_dkt1, write_dkt1, Tensor};

const MAGIC: &[u8; 4] = b"DKC1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, model: &DarkIr<f32>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for p in model.params.params() {
        let n = u16::try_from(p.name.len())
            .map_err(|_| Error::Format(format!("parameter name too long: {}", p.name)))?;
        out.write_all(&n.to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        write_dkt1(out, &p.value)?;
    }
    out.write_all(model.config().to_text().as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Parsed contents: the stored configuration and named tensors in file order.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(DarkIrConfig, Vec<(String, Tensor<f32>)>)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("not a DKC1 checkpoint (magic {magic:?})")));
    }
    let version = read_u32(r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = read_u32(r, "entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact(r, &mut len, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact(r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let t = read_dkt1(r).map_err(|e| Error::Format(format!("entry {name}: {e}")))?;
        entries.push((name, t));
    }
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|e| Error::Format(format!("checkpoint config block: {e}")))?;
    let config = DarkIrConfig::from_text(&text)
        .map_err(|e| Error::Format(format!("checkpoint config block: {e}")))?;
    Ok((config, entries))
}

pub fn save(model: &DarkIr<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

/// Load a checkpoint with the configuration stored inside it.
pub fn load(path: impl AsRef<Path>) -> Result<DarkIr<f32>> {
    let (config, entries) = read_checkpoint(&mut BufReader::new(File::open(path)?))?;
    assemble(&config, entries)
}

/// Load a checkpoint into a network built from `config`. Fails with
/// [`Error::Config`] listing the differing names if the parameter sets do
/// not match.
pub fn load_as(path: impl AsRef<Path>, config: &DarkIrConfig) -> Result<DarkIr<f32>> {
    let (_, entries) = read_checkpoint(&mut BufReader::new(File::open(path)?))?;
    assemble(config, entries)
}

fn assemble(config: &DarkIrConfig, entries: Vec<(String, Tensor<f32>)>) -> Result<DarkIr<f32>> {
    let mut model = DarkIr::<f32>::build(config, 0)?;
    let expected: BTreeSet<&str> = model.params.params().iter().map(|p| p.name.as_str()).collect();
    let found: BTreeSet<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    if expected != found || entries.len() != found.len() {
        let missing: Vec<_> = expected.difference(&found).collect();
        let unexpected: Vec<_> = found.difference(&expected).collect();
        return Err(Error::Config(format!(
            "checkpoint does not match the model configuration; missing {missing:?}, unexpected {unexpected:?}"
        )));
    }
    for (name, t) in entries {
        let id = model.params.find(&name).expect("name checked above");
        let slot = model.params.get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Error::Config(format!(
                "{name}: checkpoint shape {:?}, model expects {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(model)
}
