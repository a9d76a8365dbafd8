//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

fn format_err(origin: &str, msg: impl Into<String>) -> Error {
    Error::Format {
        path: origin.to_string(),
        msg: msg.into(),
    }
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, origin: &str) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(origin, "truncated header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, origin: &str, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos, origin)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| format_err(origin, format!("bad {what} in header")))
}

/// Decodes P5 or P6 into a grayscale image in `[0, 1]`. Color is reduced
/// with Rec. 601 luma weights.
pub fn decode(bytes: &[u8], origin: &str) -> Result<GrayImage> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos, origin)?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(format_err(
                origin,
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let width = header_number(bytes, &mut pos, origin, "width")?;
    let height = header_number(bytes, &mut pos, origin, "height")?;
    let maxval = header_number(bytes, &mut pos, origin, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(origin, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(origin, format!("maxval {maxval} is not 8-bit")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * channels;
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() >= need)
        .ok_or_else(|| format_err(origin, format!("raster needs {need} bytes")))?;
    let max = maxval as f64;
    let data = if channels == 1 {
        raster[..need].iter().map(|&b| b as f64 / max).collect()
    } else {
        raster[..need]
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / max)
            .collect()
    };
    GrayImage::new(width, height, data)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}
