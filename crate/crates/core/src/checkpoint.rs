//! JSON documents whose reals are written with 17 significant digits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Compact JSON formatter that prints every float as `d.dddddddddddddddde±x`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", f64::from(value))
    }
}

pub fn to_json_string<S: Serialize>(value: &S) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn save_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json_string(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits_and_round_trip() {
        let v = vec![0.1f64, -2.5e-300, 1.0 / 3.0, 12345.678];
        let s = to_json_string(&v).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(to_json_string(&back).unwrap(), s);
    }
}
