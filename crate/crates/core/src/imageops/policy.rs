//! The registered transformation policies and amplitude conversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the fixed magnitude scale inherited from RandAugment.
pub const FIXED_SCALE_MAX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyName {
    AutoContrast,
    Equalize,
    Invert,
    Rotate,
    Posterize,
    Cutout,
    Solarize,
    SolarizeAdd,
    Color,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl PolicyName {
    pub const ALL: [PolicyName; 16] = [
        PolicyName::AutoContrast,
        PolicyName::Equalize,
        PolicyName::Invert,
        PolicyName::Rotate,
        PolicyName::Posterize,
        PolicyName::Cutout,
        PolicyName::Solarize,
        PolicyName::SolarizeAdd,
        PolicyName::Color,
        PolicyName::Contrast,
        PolicyName::Brightness,
        PolicyName::Sharpness,
        PolicyName::ShearX,
        PolicyName::ShearY,
        PolicyName::TranslateX,
        PolicyName::TranslateY,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::AutoContrast => "AutoContrast",
            PolicyName::Equalize => "Equalize",
            PolicyName::Invert => "Invert",
            PolicyName::Rotate => "Rotate",
            PolicyName::Posterize => "Posterize",
            PolicyName::Cutout => "Cutout",
            PolicyName::Solarize => "Solarize",
            PolicyName::SolarizeAdd => "SolarizeAdd",
            PolicyName::Color => "Color",
            PolicyName::Contrast => "Contrast",
            PolicyName::Brightness => "Brightness",
            PolicyName::Sharpness => "Sharpness",
            PolicyName::ShearX => "ShearX",
            PolicyName::ShearY => "ShearY",
            PolicyName::TranslateX => "TranslateX",
            PolicyName::TranslateY => "TranslateY",
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// A policy and its native amplitude range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySpec {
    pub name: PolicyName,
    pub a_min: f64,
    pub a_max: f64,
    /// Geometric and enhancement policies flip direction with probability 1/2.
    pub signed: bool,
}

const fn spec(name: PolicyName, a_min: f64, a_max: f64, signed: bool) -> PolicySpec {
    PolicySpec {
        name,
        a_min,
        a_max,
        signed,
    }
}

/// The sixteen registered policies with their amplitude ranges.
pub const POLICY_TABLE: [PolicySpec; 16] = [
    spec(PolicyName::AutoContrast, 0.0, 1.0, false),
    spec(PolicyName::Equalize, 0.0, 1.0, false),
    spec(PolicyName::Invert, 0.0, 1.0, false),
    spec(PolicyName::Rotate, 0.0, 30.0, true),
    spec(PolicyName::Posterize, 4.0, 8.0, false),
    spec(PolicyName::Cutout, 0.0, 0.2, false),
    spec(PolicyName::Solarize, 0.0, 256.0, false),
    spec(PolicyName::SolarizeAdd, 0.0, 110.0, false),
    spec(PolicyName::Color, 0.1, 1.9, true),
    spec(PolicyName::Contrast, 0.1, 1.9, true),
    spec(PolicyName::Brightness, 0.1, 1.9, true),
    spec(PolicyName::Sharpness, 0.1, 1.9, true),
    spec(PolicyName::ShearX, 0.0, 0.3, true),
    spec(PolicyName::ShearY, 0.0, 0.3, true),
    spec(PolicyName::TranslateX, 0.0, 0.33, true),
    spec(PolicyName::TranslateY, 0.0, 0.33, true),
];

pub fn policy_spec(name: PolicyName) -> PolicySpec {
    POLICY_TABLE[PolicyName::ALL
        .iter()
        .position(|&p| p == name)
        .expect("every name is registered")]
}

pub fn lookup_policy(name: &str) -> Result<PolicySpec> {
    name.parse().map(policy_spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeMode {
    /// Uniform draw on `(0, a_max)` per step.
    DynamicUniform,
    /// One pre-chosen magnitude on the 0..30 scale for every policy.
    Fixed30Scale,
}

impl FromStr for AmplitudeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic-uniform" | "dynamic" => Ok(AmplitudeMode::DynamicUniform),
            "fixed-30-scale" | "fixed" => Ok(AmplitudeMode::Fixed30Scale),
            other => Err(Error::Config(format!("unknown amplitude mode `{other}`"))),
        }
    }
}

impl fmt::Display for AmplitudeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AmplitudeMode::DynamicUniform => "dynamic-uniform",
            AmplitudeMode::Fixed30Scale => "fixed-30-scale",
        })
    }
}

/// Maps a raw amplitude onto the policy's native range.
///
/// Fixed mode: `a/30 * (a_max - a_min) + a_min` with `a` in `[0, 30]`.
/// Dynamic mode: `a/a_max * (a_max - a_min) + a_min` with `a` in `[0, a_max]`.
pub fn convert_amplitude(policy: &PolicySpec, a_raw: f64, mode: AmplitudeMode) -> Result<f64> {
    let span = policy.a_max - policy.a_min;
    match mode {
        AmplitudeMode::Fixed30Scale => {
            check_range("fixed amplitude", a_raw, 0.0, FIXED_SCALE_MAX)?;
            Ok(a_raw / FIXED_SCALE_MAX * span + policy.a_min)
        }
        AmplitudeMode::DynamicUniform => {
            if policy.a_max == 0.0 {
                return Err(Error::DegenerateRange(format!(
                    "{} has a_max = 0",
                    policy.name
                )));
            }
            check_range("dynamic amplitude", a_raw, 0.0, policy.a_max)?;
            Ok(a_raw / policy.a_max * span + policy.a_min)
        }
    }
}

pub(crate) fn check_range(what: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_nan() || value < lo || value > hi {
        return Err(Error::Range {
            what: what.to_string(),
            value,
            lo,
            hi,
        });
    }
    Ok(())
}
