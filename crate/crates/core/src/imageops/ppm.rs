//! Binary PPM (`P6`, maxval 255) reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

/// Encodes a raster as binary PPM.
pub fn encode_ppm(img: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Decodes a binary PPM. Comments (`#` to end of line) are allowed in the header.
pub fn decode_ppm(data: &[u8]) -> Result<Raster> {
    let mut pos = 0usize;
    let magic = next_token(data, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Parse(format!(
            "not a binary PPM (magic {:?})",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(data, &mut pos, "width")?;
    let height = header_number(data, &mut pos, "height")?;
    let maxval = header_number(data, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Parse("missing header terminator".into()));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Parse("dimensions overflow".into()))?;
    let payload = &data[pos..];
    if payload.len() < need {
        return Err(Error::Parse(format!(
            "truncated payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    Raster::new(width, height, payload[..need].to_vec())
}

fn next_token<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() && data[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("unexpected end of PPM header".into()));
    }
    Ok(&data[start..*pos])
}

fn header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(data, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad PPM {what}")))
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&data)
}

pub fn save_ppm(img: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ppm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comments() {
        let mut data = b"P6\n# made by hand\n8 8 # size\n255\n".to_vec();
        data.extend(std::iter::repeat_n(7u8, 8 * 8 * 3));
        let img = decode_ppm(&data).unwrap();
        assert_eq!((img.width(), img.height()), (8, 8));
        assert!(img.pixels().iter().all(|&b| b == 7));
    }

    #[test]
    fn rejects_ascii_and_truncated() {
        assert!(decode_ppm(b"P3\n8 8\n255\n0 0 0").is_err());
        let mut data = b"P6\n8 8\n255\n".to_vec();
        data.extend([0u8; 10]);
        assert!(matches!(decode_ppm(&data), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_undersized_images() {
        let mut data = b"P6\n4 4\n255\n".to_vec();
        data.extend([0u8; 48]);
        assert!(matches!(decode_ppm(&data), Err(Error::Raster(_))));
    }

    #[test]
    fn payload_may_start_with_whitespace_byte() {
        let mut data = b"P6\n8 8\n255\n".to_vec();
        data.extend(std::iter::repeat_n(b'\n', 192));
        let img = decode_ppm(&data).unwrap();
        assert!(img.pixels().iter().all(|&b| b == b'\n'));
    }
}
