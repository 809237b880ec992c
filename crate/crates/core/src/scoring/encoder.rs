use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::Raster;
use crate::rng::Stream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Mean of one channel per cell of a fixed grid, centred on mid-gray.
    PatchMean,
    /// Seeded Gaussian linear map of centred pixels.
    RandomProjection,
    /// Features come from outside; encoding is unsupported.
    External,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch-mean" => Ok(EncoderKind::PatchMean),
            "random-projection" => Ok(EncoderKind::RandomProjection),
            "external" => Ok(EncoderKind::External),
            other => Err(Error::Config(format!("unknown encoder kind `{other}`"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::PatchMean => "patch-mean",
            EncoderKind::RandomProjection => "random-projection",
            EncoderKind::External => "external",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub out_dim: usize,
    pub seed: u64,
}

/// Frozen image encoder bound to one input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    spec: EncoderSpec,
    width: usize,
    height: usize,
    grid: (usize, usize),
    weights: Vec<T>,
}

/// Factor `n` into `rows x cols` with `rows` the largest divisor <= sqrt(n).
fn grid_for(n: usize) -> (usize, usize) {
    let rows = (1..=n).take_while(|r| r * r <= n).filter(|r| n.is_multiple_of(*r)).last().unwrap_or(1);
    (rows, n / rows)
}

impl<T: Scalar> Encoder<T> {
    pub fn new(spec: EncoderSpec, width: usize, height: usize) -> Result<Self> {
        if spec.out_dim == 0 {
            return Err(Error::Parameter("encoder out_dim must be positive".into()));
        }
        let grid = grid_for(spec.out_dim);
        if spec.kind == EncoderKind::PatchMean && (grid.0 > height || grid.1 > width) {
            return Err(Error::Parameter(format!(
                "patch grid {}x{} does not fit a {width}x{height} image",
                grid.0, grid.1
            )));
        }
        let weights = match spec.kind {
            EncoderKind::RandomProjection => {
                let fan_in = width * height * 3;
                let scale = 1.0 / (fan_in as f64).sqrt();
                let mut rng = Stream::seed_from_u64(spec.seed);
                (0..spec.out_dim * fan_in)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::of(z * scale)
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            spec,
            width,
            height,
            grid,
            weights,
        })
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Cell rectangle `(x0, y0, x1, y1)` that feature `k` averages (patch-mean only).
    pub fn patch_of(&self, k: usize) -> (usize, usize, usize, usize) {
        let (rows, cols) = self.grid;
        let (r, c) = (k / cols, k % cols);
        (
            c * self.width / cols,
            r * self.height / rows,
            (c + 1) * self.width / cols,
            (r + 1) * self.height / rows,
        )
    }

    pub fn encode(&self, img: &Raster) -> Result<Vec<T>> {
        if (img.width(), img.height()) != (self.width, self.height) {
            return Err(Error::Parameter(format!(
                "encoder expects {}x{}, got {}x{}",
                self.width,
                self.height,
                img.width(),
                img.height()
            )));
        }
        match self.spec.kind {
            EncoderKind::PatchMean => Ok(self.patch_means(img)),
            EncoderKind::RandomProjection => Ok(self.project(img)),
            EncoderKind::External => Err(Error::Unsupported(
                "external encoders receive features by ingestion".into(),
            )),
        }
    }

    fn patch_means(&self, img: &Raster) -> Vec<T> {
        (0..self.spec.out_dim)
            .map(|k| {
                let (x0, y0, x1, y1) = self.patch_of(k);
                let ch = k % 3;
                let mut sum = 0u64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += u64::from(img.get(x, y)[ch]);
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)) as f64;
                T::of(sum as f64 / n / 255.0 - 0.5)
            })
            .collect()
    }

    fn project(&self, img: &Raster) -> Vec<T> {
        let input: Vec<T> = img
            .pixels()
            .iter()
            .map(|&b| T::of(f64::from(b) / 255.0 - 0.5))
            .collect();
        self.weights
            .chunks_exact(input.len())
            .map(|row| crate::scalar::dot(row, &input))
            .collect()
    }
}
