//! Resampling: affine warps, flips, and resized crops.

use rand::Rng;

use super::Raster;
use crate::error::{Error, Result};

/// Fill value for samples that fall outside the source frame.
pub const FILL: [u8; 3] = [128, 128, 128];

#[inline]
pub(crate) fn to_byte(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at real coordinates; taps outside the frame read `FILL`.
fn sample_filled(img: &Raster, sx: f64, sy: f64) -> [u8; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let tap = |x: i64, y: i64| -> [u8; 3] {
        if x < 0 || y < 0 || x >= w || y >= h {
            FILL
        } else {
            img.get(x as usize, y as usize)
        }
    };
    let taps = [
        (tap(x0, y0), (1.0 - fx) * (1.0 - fy)),
        (tap(x0 + 1, y0), fx * (1.0 - fy)),
        (tap(x0, y0 + 1), (1.0 - fx) * fy),
        (tap(x0 + 1, y0 + 1), fx * fy),
    ];
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v: f64 = taps
            .iter()
            .filter(|(_, wt)| *wt != 0.0)
            .map(|(px, wt)| f64::from(px[c]) * wt)
            .sum();
        *o = to_byte(v);
    }
    out
}

/// Warps by an inverse map from output pixel to source coordinates.
pub(crate) fn warp(img: &Raster, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Raster {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (sx, sy) = inverse(x as f64, y as f64);
            out.put(x, y, sample_filled(img, sx, sy));
        }
    }
    out
}

fn center(img: &Raster) -> (f64, f64) {
    (
        (img.width() as f64 - 1.0) / 2.0,
        (img.height() as f64 - 1.0) / 2.0,
    )
}

pub fn rotate(img: &Raster, degrees: f64) -> Raster {
    if degrees == 0.0 {
        return img.clone();
    }
    let (cx, cy) = center(img);
    let (s, c) = degrees.to_radians().sin_cos();
    warp(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    })
}

pub fn shear_x(img: &Raster, shear: f64) -> Raster {
    if shear == 0.0 {
        return img.clone();
    }
    let (_, cy) = center(img);
    warp(img, |x, y| (x + shear * (y - cy), y))
}

pub fn shear_y(img: &Raster, shear: f64) -> Raster {
    if shear == 0.0 {
        return img.clone();
    }
    let (cx, _) = center(img);
    warp(img, |x, y| (x, y + shear * (x - cx)))
}

/// Shifts content right by `fraction * width` pixels.
pub fn translate_x(img: &Raster, fraction: f64) -> Raster {
    if fraction == 0.0 {
        return img.clone();
    }
    let dx = fraction * img.width() as f64;
    warp(img, |x, y| (x - dx, y))
}

/// Shifts content down by `fraction * height` pixels.
pub fn translate_y(img: &Raster, fraction: f64) -> Raster {
    if fraction == 0.0 {
        return img.clone();
    }
    let dy = fraction * img.height() as f64;
    warp(img, |x, y| (x, y - dy))
}

pub fn horizontal_flip(img: &Raster) -> Raster {
    let mut out = img.clone();
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            out.put(x, y, img.get(w - 1 - x, y));
        }
    }
    out
}

/// Crops `(x0, y0, cw, ch)` and resizes back to the source dimensions with
/// half-pixel-centred bilinear sampling clamped to the crop.
pub fn resized_crop(img: &Raster, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Raster> {
    if cw == 0 || ch == 0 || x0 + cw > img.width() || y0 + ch > img.height() {
        return Err(Error::Parameter(format!(
            "crop ({x0},{y0},{cw},{ch}) outside {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let rx = cw as f64 / w as f64;
    let ry = ch as f64 / h as f64;
    let mut out = img.clone();
    for oy in 0..h {
        let sy = ((oy as f64 + 0.5) * ry - 0.5).clamp(0.0, (ch - 1) as f64);
        let ya = sy.floor() as usize;
        let yb = (ya + 1).min(ch - 1);
        let fy = sy - ya as f64;
        for ox in 0..w {
            let sx = ((ox as f64 + 0.5) * rx - 0.5).clamp(0.0, (cw - 1) as f64);
            let xa = sx.floor() as usize;
            let xb = (xa + 1).min(cw - 1);
            let fx = sx - xa as f64;
            let p00 = img.get(x0 + xa, y0 + ya);
            let p10 = img.get(x0 + xb, y0 + ya);
            let p01 = img.get(x0 + xa, y0 + yb);
            let p11 = img.get(x0 + xb, y0 + yb);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
                let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
                px[c] = to_byte(top * (1.0 - fy) + bot * fy);
            }
            out.put(ox, oy, px);
        }
    }
    Ok(out)
}

/// Area-fraction and aspect-ratio ranges for [`random_resized_crop_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    pub scale: (f64, f64),
    pub ratio: (f64, f64),
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            scale: (0.08, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
        }
    }
}

/// Random-resized crop with the default aspect-ratio range.
pub fn random_resized_crop<R: Rng + ?Sized>(
    img: &Raster,
    aux: &mut R,
    scale_lo: f64,
    scale_hi: f64,
) -> Result<Raster> {
    random_resized_crop_with(
        img,
        aux,
        CropParams {
            scale: (scale_lo, scale_hi),
            ..CropParams::default()
        },
    )
}

pub fn random_resized_crop_with<R: Rng + ?Sized>(
    img: &Raster,
    aux: &mut R,
    params: CropParams,
) -> Result<Raster> {
    let (lo, hi) = params.scale;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Parameter(format!(
            "crop scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
        )));
    }
    let (rlo, rhi) = params.ratio;
    if !(rlo > 0.0 && rlo <= rhi) {
        return Err(Error::Parameter(format!("crop ratio ({rlo}, {rhi})")));
    }
    let (cx, cy, cw, ch) = sample_crop_box(img.width(), img.height(), aux, params);
    resized_crop(img, cx, cy, cw, ch)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_crop_box<R: Rng + ?Sized>(
    w: usize,
    h: usize,
    rng: &mut R,
    params: CropParams,
) -> (usize, usize, usize, usize) {
    let area = (w * h) as f64;
    let (log_lo, log_hi) = (params.ratio.0.ln(), params.ratio.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, params.scale.0, params.scale.1);
        let aspect = uniform(rng, log_lo, log_hi).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let x = rng.random_range(0..=w - cw);
            let y = rng.random_range(0..=h - ch);
            return (x, y, cw, ch);
        }
    }
    // fallback: centre crop clamped into the ratio range
    let in_ratio = w as f64 / h as f64;
    let (cw, ch) = if in_ratio < params.ratio.0 {
        (w, ((w as f64 / params.ratio.0).round() as usize).clamp(1, h))
    } else if in_ratio > params.ratio.1 {
        (((h as f64 * params.ratio.1).round() as usize).clamp(1, w), h)
    } else {
        (w, h)
    };
    ((w - cw) / 2, (h - ch) / 2, cw, ch)
}
