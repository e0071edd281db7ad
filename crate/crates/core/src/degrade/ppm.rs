//! Binary PPM (`P6`, maxval 255) ↔ `[1, 3, H, W]` tensors in `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Header fields, skipping whitespace and `#` comments.
fn header_fields(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    Ok((fields, i + 1))
}

pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (f, offset) = header_fields(bytes, 4)?;
    if f[0] != "P6" {
        return Err(Error::Format(format!("not a binary PPM (magic {:?})", f[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PPM header field {s:?}")))
    };
    let (w, h, maxval) = (num(&f[1])?, num(&f[2])?, num(&f[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(Error::Format(format!("unsupported PPM {w}x{h} maxval {maxval}")));
    }
    let need = w * h * 3;
    let raster = bytes.get(offset..offset + need).ok_or_else(|| {
        Error::Format(format!("truncated PPM raster: {} of {need} bytes", bytes.len().saturating_sub(offset)))
    })?;
    let mut data = vec![T::zero(); need];
    for (p, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = T::from_f64(px[c] as f64 / 255.0);
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

/// Values are clamped to `[0, 1]` and rounded to the nearest level.
pub fn encode_ppm<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let [n, c, h, w] = t.dims4()?;
    if n != 1 || c != 3 {
        return Err(shape_err("write_ppm", format!("expected [1, 3, H, W], got {:?}", t.shape())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = t.data();
    for p in 0..h * w {
        for ch in 0..3 {
            let v = d[ch * h * w + p].as_f64();
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn write_ppm<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_ppm(t)?)?;
    Ok(())
}
