//! Flat `key = value` run configuration with dotted keys.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::distill::{DistillConfig, StudentConfig};
use crate::error::{Error, Result};
use crate::harness::SyntheticDatasetSpec;
use crate::imageops::CropParams;
use crate::rng;
use crate::scoring::{EncoderKind, EncoderSpec};
use crate::teacher::TeacherConfig;

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "ablate.grid",
    "ablate.sweep",
    "augment.amplitude_mode",
    "augment.crop_raw",
    "augment.crop_scale_hi",
    "augment.crop_scale_lo",
    "augment.fixed_a",
    "augment.n_views",
    "augment.steps",
    "augment.strategy",
    "data.c",
    "data.class_seed",
    "data.corruption_rate",
    "data.height",
    "data.jitter",
    "data.noise_level",
    "data.per_class",
    "data.test_per_class",
    "data.width",
    "distill.batch",
    "distill.epochs",
    "distill.gate",
    "distill.lr",
    "distill.seed",
    "distill.tau",
    "distill.topk",
    "seed",
    "split.shots",
    "student.dim",
    "student.encoder",
    "student.encoder_seed",
    "student.proj_layers",
    "target.c",
    "target.class_seed",
    "teacher.batch",
    "teacher.dim",
    "teacher.encoder",
    "teacher.encoder_seed",
    "teacher.epochs",
    "teacher.lr",
    "teacher.seed",
    "teacher.tau",
];

/// Labelled images per base class available to the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Full,
    K(usize),
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Shots::Full);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Shots::K(k)),
            _ => Err(Error::Config(format!("shots must be `full` or a positive integer, got `{s}`"))),
        }
    }
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Full => f.write_str("full"),
            Shots::K(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticDatasetSpec,
    pub shots: Shots,
    pub teacher: TeacherConfig,
    pub distill: DistillConfig,
    pub target_c: usize,
    pub target_class_seed: u64,
    pub ablate_sweep: Option<String>,
    pub ablate_grid: Vec<String>,
}

/// Parses `key = value` lines. `#` starts a comment; duplicates are errors.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

struct Lookup<'a>(&'a BTreeMap<String, String>);

impl Lookup<'_> {
    fn get<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{s}` for `{key}`"))),
        }
    }

    fn parsed<V: FromStr<Err = Error>>(&self, key: &str, default: V) -> Result<V> {
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s.parse(),
        }
    }

    fn optional(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key).map(String::as_str) {
            None | Some("none") => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value `{s}` for `{key}`"))),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        let m = Lookup(map);
        let seed: u64 = m.get("seed", 0)?;
        let derived = |p: &str| rng::sub_seed(seed, p);
        let dd = SyntheticDatasetSpec::default();
        let data = SyntheticDatasetSpec {
            c: m.get("data.c", dd.c)?,
            per_class: m.get("data.per_class", dd.per_class)?,
            test_per_class: m.get("data.test_per_class", dd.test_per_class)?,
            width: m.get("data.width", dd.width)?,
            height: m.get("data.height", dd.height)?,
            class_generator_seed: m.get("data.class_seed", derived("data"))?,
            noise_level: m.get("data.noise_level", dd.noise_level)?,
            jitter: m.get("data.jitter", dd.jitter)?,
            corruption_rate: m.get("data.corruption_rate", dd.corruption_rate)?,
        };
        let td = TeacherConfig::default();
        let teacher = TeacherConfig {
            encoder: EncoderSpec {
                kind: m.parsed("teacher.encoder", EncoderKind::PatchMean)?,
                out_dim: m.get("teacher.dim", td.encoder.out_dim)?,
                seed: m.get("teacher.encoder_seed", derived("teacher-encoder"))?,
            },
            epochs: m.get("teacher.epochs", td.epochs)?,
            lr: m.get("teacher.lr", td.lr)?,
            batch: m.get("teacher.batch", td.batch)?,
            tau: m.get("teacher.tau", td.tau)?,
            seed: m.get("teacher.seed", derived("teacher"))?,
        };
        let dd = DistillConfig::default();
        let ad = AugmentConfig::default();
        let crop = CropParams {
            scale: (
                m.get("augment.crop_scale_lo", ad.crop.scale.0)?,
                m.get("augment.crop_scale_hi", ad.crop.scale.1)?,
            ),
            ..ad.crop
        };
        let augment = AugmentConfig {
            n_views: m.get("augment.n_views", ad.n_views)?,
            steps: m.get("augment.steps", ad.steps)?,
            amplitude_mode: m.parsed("augment.amplitude_mode", ad.amplitude_mode)?,
            fixed_a: m.optional("augment.fixed_a")?,
            strategy: m.parsed("augment.strategy", ad.strategy)?,
            corruption_rate: data.corruption_rate,
            crop_raw: m.get("augment.crop_raw", ad.crop_raw)?,
            crop,
        };
        let sd = StudentConfig::default();
        let distill = DistillConfig {
            epochs: m.get("distill.epochs", dd.epochs)?,
            lr: m.get("distill.lr", dd.lr)?,
            batch: m.get("distill.batch", dd.batch)?,
            tau: m.get("distill.tau", dd.tau)?,
            seed: m.get("distill.seed", derived("distill"))?,
            gate_enabled: m.get("distill.gate", dd.gate_enabled)?,
            topk: m.get("distill.topk", dd.topk)?,
            augment,
            student: StudentConfig {
                encoder: EncoderSpec {
                    kind: m.parsed("student.encoder", sd.encoder.kind)?,
                    out_dim: m.get("student.dim", sd.encoder.out_dim)?,
                    seed: m.get("student.encoder_seed", derived("student-encoder"))?,
                },
                proj_layers: m.get("student.proj_layers", sd.proj_layers)?,
            },
        };
        let grid = map
            .get("ablate.grid")
            .map(|g| g.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        let cfg = Self {
            seed,
            data,
            shots: m.parsed("split.shots", Shots::Full)?,
            teacher,
            distill,
            target_c: m.get("target.c", 10)?,
            target_class_seed: m.get("target.class_seed", derived("target"))?,
            ablate_sweep: map.get("ablate.sweep").cloned(),
            ablate_grid: grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_pairs(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        self.data
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(1..=3).contains(&self.distill.student.proj_layers) {
            return Err(Error::Config(format!(
                "student.proj_layers must be 1, 2 or 3, got {}",
                self.distill.student.proj_layers
            )));
        }
        if self.teacher.batch == 0 || !(self.teacher.lr >= 0.0) || !(self.teacher.tau > 0.0) {
            return Err(Error::Config("teacher batch, lr and tau must be positive".into()));
        }
        if self.target_c < 4 {
            return Err(Error::Config("target.c must be at least 4".into()));
        }
        self.distill.validate()
    }

    /// Every key with its resolved value, seeds included.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let d = &self.data;
        let t = &self.teacher;
        let s = &self.distill;
        let a = &s.augment;
        let pairs: Vec<(&str, String)> = vec![
            ("ablate.grid", self.ablate_grid.join(",")),
            ("ablate.sweep", self.ablate_sweep.clone().unwrap_or_default()),
            ("augment.amplitude_mode", a.amplitude_mode.to_string()),
            ("augment.crop_raw", a.crop_raw.to_string()),
            ("augment.crop_scale_hi", a.crop.scale.1.to_string()),
            ("augment.crop_scale_lo", a.crop.scale.0.to_string()),
            ("augment.fixed_a", a.fixed_a.map_or("none".into(), |v| v.to_string())),
            ("augment.n_views", a.n_views.to_string()),
            ("augment.steps", a.steps.to_string()),
            ("augment.strategy", a.strategy.to_string()),
            ("data.c", d.c.to_string()),
            ("data.class_seed", d.class_generator_seed.to_string()),
            ("data.corruption_rate", d.corruption_rate.to_string()),
            ("data.height", d.height.to_string()),
            ("data.jitter", d.jitter.to_string()),
            ("data.noise_level", d.noise_level.to_string()),
            ("data.per_class", d.per_class.to_string()),
            ("data.test_per_class", d.test_per_class.to_string()),
            ("data.width", d.width.to_string()),
            ("distill.batch", s.batch.to_string()),
            ("distill.epochs", s.epochs.to_string()),
            ("distill.gate", s.gate_enabled.to_string()),
            ("distill.lr", s.lr.to_string()),
            ("distill.seed", s.seed.to_string()),
            ("distill.tau", s.tau.to_string()),
            ("distill.topk", s.topk.to_string()),
            ("seed", self.seed.to_string()),
            ("split.shots", self.shots.to_string()),
            ("student.dim", s.student.encoder.out_dim.to_string()),
            ("student.encoder", s.student.encoder.kind.to_string()),
            ("student.encoder_seed", s.student.encoder.seed.to_string()),
            ("student.proj_layers", s.student.proj_layers.to_string()),
            ("target.c", self.target_c.to_string()),
            ("target.class_seed", self.target_class_seed.to_string()),
            ("teacher.batch", t.batch.to_string()),
            ("teacher.dim", t.encoder.out_dim.to_string()),
            ("teacher.encoder", t.encoder.kind.to_string()),
            ("teacher.encoder_seed", t.encoder.seed.to_string()),
            ("teacher.epochs", t.epochs.to_string()),
            ("teacher.lr", t.lr.to_string()),
            ("teacher.seed", t.seed.to_string()),
            ("teacher.tau", t.tau.to_string()),
        ];
        pairs
            .into_iter()
            .filter(|(k, v)| !(v.is_empty() && k.starts_with("ablate.")))
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Fully resolved config text; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        self.to_map()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 prefix of the resolved text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with one resolved key replaced. Derived seeds stay as resolved,
    /// so changing `seed` here does not re-derive them.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut map = self.to_map();
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        map.insert(key.to_string(), value.to_string());
        Self::from_map(&map)
    }

    /// Target dataset for cross-dataset transfer.
    pub fn target_data(&self) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            c: self.target_c,
            class_generator_seed: self.target_class_seed,
            ..self.data.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let cfg = RunConfig::parse("seed = 7\naugment.n_views = 3 # fewer\nsplit.shots = 4\n").unwrap();
        assert_eq!(cfg.distill.augment.n_views, 3);
        assert_eq!(cfg.shots, Shots::K(4));
        let again = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest(), again.digest());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("augment.nviews = 3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(parse_pairs("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn seeds_derive_from_the_master_seed() {
        let a = RunConfig::parse("seed = 1").unwrap();
        let b = RunConfig::parse("seed = 2").unwrap();
        assert_ne!(a.distill.seed, b.distill.seed);
        assert_ne!(a.data.class_generator_seed, b.data.class_generator_seed);
        let pinned = RunConfig::parse("seed = 2\ndistill.seed = 5").unwrap();
        assert_eq!(pinned.distill.seed, 5);
    }

    #[test]
    fn fixed_mode_needs_fixed_a() {
        assert!(RunConfig::parse("augment.amplitude_mode = fixed-30-scale").is_err());
        let cfg = RunConfig::parse(
            "augment.amplitude_mode = fixed-30-scale\naugment.fixed_a = 9\naugment.strategy = randaugment-fixed",
        )
        .unwrap();
        assert_eq!(cfg.distill.augment.fixed_a, Some(9.0));
    }

    #[test]
    fn override_changes_digest() {
        let cfg = RunConfig::default();
        let other = cfg.with_override("augment.steps", "3").unwrap();
        assert_eq!(other.distill.augment.steps, 3);
        assert_ne!(cfg.digest(), other.digest());
        assert!(cfg.with_override("nope", "1").is_err());
    }
}
