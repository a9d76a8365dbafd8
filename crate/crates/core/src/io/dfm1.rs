//! DFM1 feature-map files.
//!
//! Little-endian: magic `DFM1`, then `u32` height, width, channels, then
//! `height·width·channels` `f32` values in row-major, channel-fastest order.
//! The file length must match the header exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor3;

pub const MAGIC: [u8; 4] = *b"DFM1";
/// Version tag of the feature-file layout.
pub const SCHEMA: &str = "DFM1/1";
const HEADER_LEN: usize = 16;

pub fn encode(t: &Tensor3<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.as_slice().len());
    out.extend_from_slice(&MAGIC);
    for d in [t.height(), t.width(), t.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<Tensor3<f64>> {
    let err = |msg: String| Error::Format {
        path: origin.to_string(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(err(format!("bad magic {:02x?}", &bytes[..4])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| err("header dimensions overflow".into()))?;
    let expected = count
        .checked_mul(4)
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| err("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(err(format!(
            "{h}x{w}x{c} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor3::from_vec(h, w, c, data).map_err(|e| err(e.to_string()))
}

pub fn read(path: &Path) -> Result<Tensor3<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: &Path, t: &Tensor3<f64>) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_layout() {
        let t = Tensor3::from_vec(1, 2, 1, vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        let mut want = vec![0x44, 0x46, 0x4D, 0x31, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0];
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(decode(&bytes, "m").unwrap(), t);
    }

    #[test]
    fn length_validated_exactly() {
        let t = Tensor3::from_vec(2, 2, 2, vec![0.5; 8]).unwrap();
        let mut bytes = encode(&t);
        bytes.push(0);
        assert!(decode(&bytes, "m").is_err());
        bytes.truncate(bytes.len() - 2);
        assert!(decode(&bytes, "m").is_err());
        let mut bad = encode(&t);
        bad[3] = b'2';
        assert!(decode(&bad, "m").is_err());
        assert!(decode(&bad[..10], "m").is_err());
    }
}
