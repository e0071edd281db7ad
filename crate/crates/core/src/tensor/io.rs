//! `DKT1` raw tensor container: magic `DKT1`, little-endian `u32` rank, one
//! `u32` per extent, then row-major little-endian `f32` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DKT1";
const MAX_RANK: u32 = 8;

pub fn write_dkt1<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated DKT1 {what}: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dkt1<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated DKT1 header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad DKT1 magic {magic:?}")));
    }
    let rank = read_u32(r, "rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported DKT1 rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(read_u32(r, "extent")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n < (1 << 32))
        .ok_or_else(|| Error::Format(format!("invalid DKT1 shape {shape:?}")))?;
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated DKT1 data ({n} values expected): {e}")))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dkt1(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_dkt1(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(&[1, 2], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_dkt1(&mut buf, &t).unwrap();
        let mut want = b"DKT1".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::<f32>::ones(&[3, 3]);
        let mut buf = Vec::new();
        write_dkt1(&mut buf, &t).unwrap();
        assert!(read_dkt1::<f32, _>(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_dkt1::<f32, _>(&mut &bad[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f32>::rand_uniform(&shape, -1e3, 1e3, &mut rng);
            let mut buf = Vec::new();
            write_dkt1(&mut buf, &t).unwrap();
            let back: Tensor<f32> = read_dkt1(&mut &buf[..]).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
