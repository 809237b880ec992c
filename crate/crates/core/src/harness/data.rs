//! Synthetic class-motif datasets and JSONL manifests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{load_ppm, save_ppm, Raster, MIN_SIDE};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub c: usize,
    /// Training images per class.
    pub per_class: usize,
    /// Held-out test images per class.
    pub test_per_class: usize,
    pub width: usize,
    pub height: usize,
    pub class_generator_seed: u64,
    /// Pixel noise standard deviation as a fraction of 255.
    pub noise_level: f64,
    /// Nuisance strength: max shift as a fraction of the side, and
    /// brightness range `1 +- jitter`.
    pub jitter: f64,
    /// Fraction of augmented views replaced by noise during distillation.
    pub corruption_rate: f64,
}

/// Motif grid resolution (cells per side).
pub const MOTIF_CELLS: usize = 4;

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            c: 10,
            per_class: 20,
            test_per_class: 50,
            width: 32,
            height: 32,
            class_generator_seed: 0,
            noise_level: 0.08,
            jitter: 0.15,
            corruption_rate: 0.0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c < 4 {
            return Err(Error::Parameter(format!("need at least 4 classes, got {}", self.c)));
        }
        if self.per_class == 0 {
            return Err(Error::Parameter("per_class must be positive".into()));
        }
        if self.width < MIN_SIDE.max(MOTIF_CELLS) || self.height < MIN_SIDE.max(MOTIF_CELLS) {
            return Err(Error::Parameter(format!(
                "image size {}x{} below the {MIN_SIDE}x{MIN_SIDE} minimum",
                self.width, self.height
            )));
        }
        if !(self.noise_level >= 0.0) || !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Parameter("noise_level must be >= 0 and jitter in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Parameter("corruption_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub key: String,
    pub label: usize,
    pub image: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// Noise-free motif of class `k`: a coarse grid of class-specific colours.
pub fn motif(spec: &SyntheticDatasetSpec, k: usize) -> Raster {
    let mut r = rng::stream(rng::combine(&[spec.class_generator_seed, rng::key_hash("motif"), k as u64]));
    let cells: Vec<[u8; 3]> = (0..MOTIF_CELLS * MOTIF_CELLS)
        .map(|_| [r.random(), r.random(), r.random()])
        .collect();
    Raster::from_fn(spec.width, spec.height, |x, y| {
        let cx = x * MOTIF_CELLS / spec.width;
        let cy = y * MOTIF_CELLS / spec.height;
        cells[cy * MOTIF_CELLS + cx]
    })
    .expect("validated size")
}

fn sample_image(spec: &SyntheticDatasetSpec, base: &Raster, seed: u64) -> Raster {
    let mut r = rng::stream(seed);
    let (w, h) = (spec.width as i64, spec.height as i64);
    let max_dx = (spec.jitter * spec.width as f64).floor() as i64;
    let max_dy = (spec.jitter * spec.height as f64).floor() as i64;
    let dx = if max_dx > 0 { r.random_range(-max_dx..=max_dx) } else { 0 };
    let dy = if max_dy > 0 { r.random_range(-max_dy..=max_dy) } else { 0 };
    let gain = if spec.jitter > 0.0 {
        r.random_range(1.0 - spec.jitter..=1.0 + spec.jitter)
    } else {
        1.0
    };
    let noise = Normal::new(0.0, spec.noise_level * 255.0).expect("finite sigma");
    Raster::from_fn(spec.width, spec.height, |x, y| {
        let sx = (x as i64 - dx).rem_euclid(w) as usize;
        let sy = (y as i64 - dy).rem_euclid(h) as usize;
        let px = base.get(sx, sy);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let mut v = f64::from(px[c]) * gain;
            if spec.noise_level > 0.0 {
                v += noise.sample(&mut r);
            }
            out[c] = v.round_ties_even().clamp(0.0, 255.0) as u8;
        }
        out
    })
    .expect("validated size")
}

/// Deterministic train and test images for every class.
pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut train = Vec::with_capacity(spec.c * spec.per_class);
    let mut test = Vec::with_capacity(spec.c * spec.test_per_class);
    for k in 0..spec.c {
        let base = motif(spec, k);
        for (split, count, out) in [("train", spec.per_class, &mut train), ("test", spec.test_per_class, &mut test)] {
            for i in 0..count {
                let key = if split == "train" {
                    format!("c{k:03}_{i:04}")
                } else {
                    format!("test_c{k:03}_{i:04}")
                };
                let seed = rng::combine(&[spec.class_generator_seed, rng::key_hash(&key)]);
                out.push(LabeledImage {
                    image: sample_image(spec, &base, seed),
                    key,
                    label: k,
                });
            }
        }
    }
    Ok(Dataset { train, test })
}

/// Index of the motif nearest in squared pixel distance.
pub fn nearest_motif(spec: &SyntheticDatasetSpec, img: &Raster) -> usize {
    (0..spec.c)
        .map(|k| {
            let m = motif(spec, k);
            let d: i64 = m
                .pixels()
                .iter()
                .zip(img.pixels())
                .map(|(&a, &b)| (i64::from(a) - i64::from(b)).pow(2))
                .sum();
            (d, k)
        })
        .min()
        .map(|(_, k)| k)
        .expect("c >= 4")
}

/// One manifest line. `label` is absent in redacted manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_key: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| Error::Schema(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(rows)
}

/// Drops every label.
pub fn redact(rows: &[ManifestRow]) -> Vec<ManifestRow> {
    rows.iter()
        .map(|r| ManifestRow {
            label: None,
            ..r.clone()
        })
        .collect()
}

/// Resolves a manifest path relative to the manifest's directory.
pub fn resolve_path(manifest: &Path, row: &ManifestRow) -> PathBuf {
    let p = Path::new(&row.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn load_labeled(manifest: &Path) -> Result<Vec<LabeledImage>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let label = r
                .label
                .ok_or_else(|| Error::Data(format!("{} has no label", r.image_key)))?;
            Ok(LabeledImage {
                image: load_ppm(resolve_path(manifest, &r))?,
                key: r.image_key,
                label,
            })
        })
        .collect()
}

/// Loads images by key; labels are never read.
pub fn load_unlabeled(manifest: &Path) -> Result<Vec<(String, Raster)>> {
    redact(&read_manifest(manifest)?)
        .into_iter()
        .map(|r| Ok((r.image_key.clone(), load_ppm(resolve_path(manifest, &r))?)))
        .collect()
}

/// Writes `images/<key>.ppm`, `manifest.jsonl` (train) and `test_manifest.jsonl`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (name, items) in [("manifest.jsonl", &ds.train), ("test_manifest.jsonl", &ds.test)] {
        let mut rows = Vec::with_capacity(items.len());
        for it in items {
            let rel = format!("images/{}.ppm", it.key);
            save_ppm(&it.image, dir.join(&rel))?;
            rows.push(ManifestRow {
                image_key: it.key.clone(),
                path: rel,
                label: Some(it.label),
            });
        }
        write_manifest(dir.join(name), &rows)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let spec = SyntheticDatasetSpec {
            test_per_class: 2,
            ..Default::default()
        };
        let a = generate_dataset(&spec).unwrap();
        assert_eq!(a.train.len(), 200);
        assert_eq!(a.test.len(), 20);
        assert_eq!(a, generate_dataset(&spec).unwrap());
    }

    #[test]
    fn clean_images_are_classified_by_nearest_motif() {
        let spec = SyntheticDatasetSpec {
            noise_level: 0.0,
            jitter: 0.0,
            per_class: 3,
            test_per_class: 0,
            ..Default::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        for it in &ds.train {
            assert_eq!(nearest_motif(&spec, &it.image), it.label);
        }
    }

    #[test]
    fn too_few_classes_rejected() {
        let spec = SyntheticDatasetSpec {
            c: 3,
            ..Default::default()
        };
        assert!(matches!(generate_dataset(&spec), Err(Error::Parameter(_))));
    }

    #[test]
    fn redaction_removes_labels_from_serialised_rows() {
        let rows = vec![ManifestRow {
            image_key: "a".into(),
            path: "a.ppm".into(),
            label: Some(3),
        }];
        let r = redact(&rows);
        let text = serde_json::to_string(&r[0]).unwrap();
        assert!(!text.contains("label"));
    }
}
