//! Logits CSV: `image_key,view_index,c0,...,c{c-1}`, values at 17 significant digits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::LogitVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A logit vector tagged with the image it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedLogits<T> {
    pub image_key: String,
    pub logits: LogitVector<T>,
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_logits_csv<T: Scalar, W: Write>(out: W, rows: &[KeyedLogits<T>]) -> Result<()> {
    let c = rows.first().map_or(0, |r| r.logits.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["image_key".to_string(), "view_index".to_string()];
    header.extend((0..c).map(|i| format!("c{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        if r.logits.len() != c {
            return Err(Error::Schema(format!(
                "row for {} has {} classes, expected {c}",
                r.image_key,
                r.logits.len()
            )));
        }
        let mut rec = vec![r.image_key.clone(), r.logits.view_index.to_string()];
        rec.extend(r.logits.values.iter().map(|v| fmt_real(v.as_f64())));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<logits csv>".into(),
        source: e,
    })
}

pub fn save_logits_csv<T: Scalar>(path: impl AsRef<Path>, rows: &[KeyedLogits<T>]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_logits_csv(f, rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn read_logits_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<KeyedLogits<T>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Schema("empty logits file".into()))?
        .map_err(csv_err)?;
    if header.len() < 3 || &header[0] != "image_key" || &header[1] != "view_index" {
        return Err(Error::Schema(
            "header must be image_key,view_index,c0,...".into(),
        ));
    }
    for (i, h) in header.iter().skip(2).enumerate() {
        if h != format!("c{i}") {
            return Err(Error::Schema(format!("column {} should be c{i}, found {h}", i + 2)));
        }
    }
    let width = header.len();
    let mut out = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != width {
            return Err(Error::Schema(format!(
                "row {} has {} columns, header has {width}",
                line + 2,
                rec.len()
            )));
        }
        let view_index: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad view_index `{}`", line + 2, &rec[1])))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::of)
                    .ok_or_else(|| Error::Parse(format!("row {}: bad value `{cell}`", line + 2)))
            })
            .collect::<Result<Vec<T>>>()?;
        out.push(KeyedLogits {
            image_key: rec[0].to_string(),
            logits: LogitVector::new(values, view_index),
        });
    }
    Ok(out)
}

/// Reads a logits CSV from disk.
pub fn ingest_logits<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<KeyedLogits<T>>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_logits_csv(f)
}

/// Groups rows by image key, preserving first-appearance order and sorting
/// each group by view index.
pub fn group_by_image<T: Clone>(rows: &[KeyedLogits<T>]) -> Vec<(String, Vec<LogitVector<T>>)> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<LogitVector<T>>)> = Vec::new();
    for r in rows {
        let i = *slot.entry(r.image_key.as_str()).or_insert_with(|| {
            groups.push((r.image_key.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(r.logits.clone());
    }
    for (_, v) in &mut groups {
        v.sort_by_key(|l| l.view_index);
    }
    groups
}
