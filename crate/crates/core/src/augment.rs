//! Policy-group sampling and per-image view-set construction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{
    apply_policy, convert_amplitude, horizontal_flip, random_resized_crop_with, AmplitudeMode,
    CropParams, PolicySpec, Raster, POLICY_TABLE,
};
use crate::rng::{self, view_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Policy groups with uniformly sampled amplitudes.
    Asa,
    /// Policy groups at one fixed magnitude.
    RandaugmentFixed,
    /// Random-resized crop plus random horizontal flip.
    CropOnly,
    /// Byte copies of the raw image.
    CopyOnly,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asa" => Ok(Strategy::Asa),
            "randaugment-fixed" => Ok(Strategy::RandaugmentFixed),
            "crop-only" => Ok(Strategy::CropOnly),
            "copy-only" => Ok(Strategy::CopyOnly),
            other => Err(Error::Config(format!("unknown augmentation strategy `{other}`"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Asa => "asa",
            Strategy::RandaugmentFixed => "randaugment-fixed",
            Strategy::CropOnly => "crop-only",
            Strategy::CopyOnly => "copy-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Augmented variants per image.
    pub n_views: usize,
    /// Policies composed per variant.
    pub steps: usize,
    pub amplitude_mode: AmplitudeMode,
    /// Magnitude on the 0..30 scale; only meaningful in fixed mode.
    pub fixed_a: Option<f64>,
    pub strategy: Strategy,
    /// Probability that an augmented view is replaced by uniform noise.
    pub corruption_rate: f64,
    /// Also apply crop+flip to the raw member.
    pub crop_raw: bool,
    pub crop: CropParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_views: 5,
            steps: 2,
            amplitude_mode: AmplitudeMode::DynamicUniform,
            fixed_a: None,
            strategy: Strategy::Asa,
            corruption_rate: 0.0,
            crop_raw: false,
            crop: CropParams::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.amplitude_mode, self.fixed_a) {
            (AmplitudeMode::Fixed30Scale, None) => {
                return Err(Error::Config("fixed amplitude mode requires fixed_a".into()))
            }
            (AmplitudeMode::DynamicUniform, Some(_)) => {
                return Err(Error::Config(
                    "fixed_a is only valid with fixed-30-scale amplitudes".into(),
                ))
            }
            (AmplitudeMode::Fixed30Scale, Some(a)) if !(0.0..=30.0).contains(&a) => {
                return Err(Error::Config(format!("fixed_a = {a} outside [0, 30]")))
            }
            _ => {}
        }
        if self.strategy == Strategy::RandaugmentFixed
            && self.amplitude_mode != AmplitudeMode::Fixed30Scale
        {
            return Err(Error::Config(
                "randaugment-fixed strategy requires fixed-30-scale amplitudes".into(),
            ));
        }
        if matches!(self.strategy, Strategy::Asa | Strategy::RandaugmentFixed) && self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config(format!(
                "corruption_rate = {} outside [0, 1]",
                self.corruption_rate
            )));
        }
        Ok(())
    }
}

/// One sampled slot of a policy group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDraw {
    pub policy: PolicySpec,
    /// Amplitude before conversion (dynamic draw or the fixed magnitude).
    pub raw_amplitude: f64,
    /// Strength in the policy's native units.
    pub amplitude: f64,
    pub aux_seed: u64,
}

/// Provenance of one transform applied to a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub policy: String,
    pub raw_amplitude: f64,
    pub amplitude: f64,
    pub aux_seed: u64,
}

impl From<&PolicyDraw> for StepRecord {
    fn from(d: &PolicyDraw) -> Self {
        Self {
            policy: d.policy.name.to_string(),
            raw_amplitude: d.raw_amplitude,
            amplitude: d.amplitude,
            aux_seed: d.aux_seed,
        }
    }
}

/// Samples `cfg.steps` i.i.d. policies from the registered table.
pub fn sample_policy_group<R: Rng + ?Sized>(
    cfg: &AugmentConfig,
    stream: &mut R,
) -> Result<Vec<PolicyDraw>> {
    sample_policy_group_from(&POLICY_TABLE, cfg, stream)
}

pub fn sample_policy_group_from<R: Rng + ?Sized>(
    table: &[PolicySpec],
    cfg: &AugmentConfig,
    stream: &mut R,
) -> Result<Vec<PolicyDraw>> {
    if table.is_empty() {
        return Err(Error::Config("policy table is empty".into()));
    }
    (0..cfg.steps)
        .map(|_| {
            let policy = table[stream.random_range(0..table.len())];
            let raw_amplitude = match cfg.amplitude_mode {
                AmplitudeMode::DynamicUniform => stream.random::<f64>() * policy.a_max,
                AmplitudeMode::Fixed30Scale => cfg
                    .fixed_a
                    .ok_or_else(|| Error::Config("fixed amplitude mode requires fixed_a".into()))?,
            };
            let amplitude = convert_amplitude(&policy, raw_amplitude, cfg.amplitude_mode)?;
            Ok(PolicyDraw {
                policy,
                raw_amplitude,
                amplitude,
                aux_seed: stream.random(),
            })
        })
        .collect()
}

/// Composes a sampled group left to right.
pub fn apply_group(img: &Raster, group: &[PolicyDraw]) -> Result<Raster> {
    group.iter().try_fold(img.clone(), |acc, d| {
        apply_policy(&acc, &d.policy, d.amplitude, &mut rng::stream(d.aux_seed))
    })
}

/// Raw image plus its augmented variants.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub raw: Raster,
    pub views: Vec<Raster>,
    /// Per augmented view, the transforms applied in order.
    pub provenance: Vec<Vec<StepRecord>>,
    /// Per augmented view, whether it was replaced by noise.
    pub corrupted: Vec<bool>,
}

impl ViewSet {
    /// Member count, raw included.
    pub fn len(&self) -> usize {
        self.views.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Member `j`; index 0 is the raw image.
    pub fn member(&self, j: usize) -> &Raster {
        if j == 0 {
            &self.raw
        } else {
            &self.views[j - 1]
        }
    }

    pub fn members(&self) -> impl Iterator<Item = &Raster> {
        std::iter::once(&self.raw).chain(self.views.iter())
    }
}

fn crop_and_flip<R: Rng + ?Sized>(
    img: &Raster,
    params: CropParams,
    stream: &mut R,
) -> Result<(Raster, Vec<StepRecord>)> {
    let crop_seed: u64 = stream.random();
    let cropped = random_resized_crop_with(img, &mut rng::stream(crop_seed), params)?;
    let mut steps = vec![StepRecord {
        policy: "RandomResizedCrop".into(),
        raw_amplitude: 0.0,
        amplitude: 0.0,
        aux_seed: crop_seed,
    }];
    if stream.random_bool(0.5) {
        steps.push(StepRecord {
            policy: "HorizontalFlip".into(),
            raw_amplitude: 0.0,
            amplitude: 0.0,
            aux_seed: 0,
        });
        return Ok((horizontal_flip(&cropped), steps));
    }
    Ok((cropped, steps))
}

fn noise_like<R: Rng + ?Sized>(img: &Raster, stream: &mut R) -> Raster {
    let mut bytes = vec![0u8; img.pixels().len()];
    stream.fill(&mut bytes[..]);
    Raster::new(img.width(), img.height(), bytes).expect("same shape as a valid raster")
}

/// Builds the raw image and its `n_views` variants.
///
/// Variant `i` (1-based) draws from a stream seeded by
/// `(base_seed, image_key, epoch, i)`; the raw member uses index 0.
pub fn build_view_set(
    img: &Raster,
    cfg: &AugmentConfig,
    image_key: &str,
    epoch: u64,
    base_seed: u64,
) -> Result<ViewSet> {
    cfg.validate()?;
    let raw = if cfg.crop_raw {
        let mut s = rng::stream(view_seed(base_seed, image_key, epoch, 0));
        crop_and_flip(img, cfg.crop, &mut s)?.0
    } else {
        img.clone()
    };
    let mut views = Vec::with_capacity(cfg.n_views);
    let mut provenance = Vec::with_capacity(cfg.n_views);
    let mut corrupted = Vec::with_capacity(cfg.n_views);
    for i in 1..=cfg.n_views as u64 {
        let mut s = rng::stream(view_seed(base_seed, image_key, epoch, i));
        // always drawn so the remaining stream does not depend on the rate
        let corrupt = s.random::<f64>() < cfg.corruption_rate;
        let (view, steps) = match cfg.strategy {
            Strategy::Asa | Strategy::RandaugmentFixed => {
                let group = sample_policy_group(cfg, &mut s)?;
                (apply_group(img, &group)?, group.iter().map(StepRecord::from).collect())
            }
            Strategy::CropOnly => crop_and_flip(img, cfg.crop, &mut s)?,
            Strategy::CopyOnly => (img.clone(), Vec::new()),
        };
        let view = if corrupt { noise_like(img, &mut s) } else { view };
        views.push(view);
        provenance.push(steps);
        corrupted.push(corrupt);
    }
    Ok(ViewSet {
        raw,
        views,
        provenance,
        corrupted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::{PolicyName, MIN_SIDE};

    fn sample_img() -> Raster {
        Raster::from_fn(16, 16, |x, y| [(x * 16) as u8, (y * 16) as u8, ((x ^ y) * 16) as u8]).unwrap()
    }

    #[test]
    fn zero_views_yields_raw_only() {
        let cfg = AugmentConfig {
            n_views: 0,
            ..Default::default()
        };
        let vs = build_view_set(&sample_img(), &cfg, "k", 0, 1).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs.raw, sample_img());
    }

    #[test]
    fn copy_only_returns_identical_members() {
        let cfg = AugmentConfig {
            strategy: Strategy::CopyOnly,
            ..Default::default()
        };
        let vs = build_view_set(&sample_img(), &cfg, "k", 0, 1).unwrap();
        assert_eq!(vs.len(), 6);
        assert!(vs.members().all(|m| *m == sample_img()));
    }

    #[test]
    fn view_sets_replay_and_refresh() {
        let cfg = AugmentConfig::default();
        let img = sample_img();
        let a = build_view_set(&img, &cfg, "img-3", 2, 99).unwrap();
        let b = build_view_set(&img, &cfg, "img-3", 2, 99).unwrap();
        assert_eq!(a, b);
        let c = build_view_set(&img, &cfg, "img-3", 3, 99).unwrap();
        let d = build_view_set(&img, &cfg, "img-4", 2, 99).unwrap();
        assert_ne!(a.provenance, c.provenance);
        assert_ne!(a.provenance, d.provenance);
    }

    #[test]
    fn provenance_shape_and_ranges() {
        let cfg = AugmentConfig {
            n_views: 7,
            steps: 3,
            ..Default::default()
        };
        let vs = build_view_set(&sample_img(), &cfg, "x", 0, 5).unwrap();
        assert_eq!(vs.provenance.len(), 7);
        for steps in &vs.provenance {
            assert_eq!(steps.len(), 3);
            for s in steps {
                let p = crate::imageops::lookup_policy(&s.policy).unwrap();
                assert!(p.a_min <= s.amplitude && s.amplitude <= p.a_max);
            }
        }
    }

    #[test]
    fn replaying_a_group_from_provenance_reproduces_the_view() {
        let cfg = AugmentConfig::default();
        let img = sample_img();
        let vs = build_view_set(&img, &cfg, "replay", 1, 17).unwrap();
        for (view, steps) in vs.views.iter().zip(&vs.provenance) {
            let group: Vec<PolicyDraw> = steps
                .iter()
                .map(|s| PolicyDraw {
                    policy: crate::imageops::lookup_policy(&s.policy).unwrap(),
                    raw_amplitude: s.raw_amplitude,
                    amplitude: s.amplitude,
                    aux_seed: s.aux_seed,
                })
                .collect();
            assert_eq!(&apply_group(&img, &group).unwrap(), view);
        }
    }

    #[test]
    fn empty_table_is_a_config_error() {
        let cfg = AugmentConfig::default();
        let err = sample_policy_group_from(&[], &cfg, &mut rng::stream(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn fixed_mode_requires_magnitude() {
        let cfg = AugmentConfig {
            amplitude_mode: AmplitudeMode::Fixed30Scale,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let ok = AugmentConfig {
            fixed_a: Some(9.0),
            strategy: Strategy::RandaugmentFixed,
            ..cfg
        };
        ok.validate().unwrap();
        let g = sample_policy_group(&ok, &mut rng::stream(4)).unwrap();
        for d in g {
            let expect = 9.0 / 30.0 * (d.policy.a_max - d.policy.a_min) + d.policy.a_min;
            assert!((d.amplitude - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_frequencies_are_uniform() {
        let cfg = AugmentConfig {
            steps: 1,
            ..Default::default()
        };
        let mut s = rng::stream(2024);
        let mut counts = [0usize; 16];
        let n = 10_000;
        for _ in 0..n {
            let d = sample_policy_group(&cfg, &mut s).unwrap()[0];
            let idx = PolicyName::ALL.iter().position(|&p| p == d.policy.name).unwrap();
            counts[idx] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 16.0).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn rotate_dynamic_mean_is_half_range() {
        let cfg = AugmentConfig {
            steps: 1,
            ..Default::default()
        };
        let mut s = rng::stream(77);
        let mut acc = Vec::new();
        while acc.len() < 10_000 {
            let d = sample_policy_group(&cfg, &mut s).unwrap()[0];
            if d.policy.name == PolicyName::Rotate {
                acc.push(d.amplitude);
            }
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        assert!((mean - 15.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn corruption_replaces_views_with_noise() {
        let cfg = AugmentConfig {
            n_views: 40,
            corruption_rate: 0.5,
            ..Default::default()
        };
        let img = Raster::filled(MIN_SIDE, MIN_SIDE, [10, 20, 30]).unwrap();
        let vs = build_view_set(&img, &cfg, "c", 0, 3).unwrap();
        let n = vs.corrupted.iter().filter(|&&c| c).count();
        assert!(n > 5 && n < 35);
        let clean = AugmentConfig {
            corruption_rate: 0.0,
            ..cfg.clone()
        };
        let vs0 = build_view_set(&img, &clean, "c", 0, 3).unwrap();
        for i in 0..40 {
            if !vs.corrupted[i] {
                assert_eq!(vs.views[i], vs0.views[i]);
            }
        }
    }
}
