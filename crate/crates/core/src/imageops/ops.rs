//! Per-policy pixel transforms.

use rand::Rng;

use super::geometry::{self, to_byte, FILL};
use super::policy::{check_range, lookup_policy, PolicyName, PolicySpec};
use super::Raster;
use crate::error::Result;

/// Applies one policy at a native-unit strength.
///
/// `aux` supplies the sign flip for signed policies and the Cutout centre;
/// nothing else is drawn from it.
pub fn apply_policy<R: Rng + ?Sized>(
    img: &Raster,
    policy: &PolicySpec,
    strength: f64,
    aux: &mut R,
) -> Result<Raster> {
    check_range(policy.name.as_str(), strength, policy.a_min, policy.a_max)?;
    let flip = policy.signed && aux.random_bool(0.5);
    let signed = if flip { -strength } else { strength };
    // enhancement factors mirror around 1.0
    let factor = if flip { 2.0 - strength } else { strength };
    let out = match policy.name {
        PolicyName::AutoContrast => auto_contrast(img),
        PolicyName::Equalize => equalize(img),
        PolicyName::Invert => invert(img),
        PolicyName::Rotate => geometry::rotate(img, signed),
        PolicyName::Posterize => posterize(img, strength.round_ties_even() as u32),
        PolicyName::Cutout => cutout(img, strength, aux),
        PolicyName::Solarize => solarize(img, strength),
        PolicyName::SolarizeAdd => solarize_add(img, strength.round_ties_even() as i32),
        PolicyName::Color => color(img, factor),
        PolicyName::Contrast => contrast(img, factor),
        PolicyName::Brightness => brightness(img, factor),
        PolicyName::Sharpness => sharpness(img, factor),
        PolicyName::ShearX => geometry::shear_x(img, signed),
        PolicyName::ShearY => geometry::shear_y(img, signed),
        PolicyName::TranslateX => geometry::translate_x(img, signed),
        PolicyName::TranslateY => geometry::translate_y(img, signed),
    };
    Ok(out)
}

/// [`apply_policy`] keyed by policy name.
pub fn apply_named<R: Rng + ?Sized>(
    img: &Raster,
    name: &str,
    strength: f64,
    aux: &mut R,
) -> Result<Raster> {
    apply_policy(img, &lookup_policy(name)?, strength, aux)
}

pub fn invert(img: &Raster) -> Raster {
    img.map_bytes(|b| 255 - b)
}

pub fn posterize(img: &Raster, bits: u32) -> Raster {
    let bits = bits.clamp(1, 8);
    let mask = (0xFFu32 << (8 - bits)) as u8;
    img.map_bytes(|b| b & mask)
}

/// Inverts every byte at or above `threshold`.
pub fn solarize(img: &Raster, threshold: f64) -> Raster {
    img.map_bytes(|b| if f64::from(b) >= threshold { 255 - b } else { b })
}

/// Adds `add` to every byte below 128, saturating.
pub fn solarize_add(img: &Raster, add: i32) -> Raster {
    img.map_bytes(|b| {
        if b < 128 {
            (i32::from(b) + add).clamp(0, 255) as u8
        } else {
            b
        }
    })
}

fn channel_luts(img: &Raster, build: impl Fn(&[u32; 256]) -> Option<[u8; 256]>) -> Raster {
    let mut luts: [Option<[u8; 256]>; 3] = [None; 3];
    for (c, lut) in luts.iter_mut().enumerate() {
        let mut hist = [0u32; 256];
        for px in img.pixels().chunks_exact(3) {
            hist[px[c] as usize] += 1;
        }
        *lut = build(&hist);
    }
    let mut out = img.pixels().to_vec();
    for px in out.chunks_exact_mut(3) {
        for c in 0..3 {
            if let Some(lut) = &luts[c] {
                px[c] = lut[px[c] as usize];
            }
        }
    }
    img.with_pixels(out)
}

/// Per-channel linear stretch of `[min, max]` onto `[0, 255]`.
pub fn auto_contrast(img: &Raster) -> Raster {
    channel_luts(img, |hist| {
        let lo = hist.iter().position(|&n| n > 0)?;
        let hi = hist.iter().rposition(|&n| n > 0)?;
        if hi <= lo {
            return None;
        }
        let mut lut = [0u8; 256];
        for (x, v) in lut.iter_mut().enumerate() {
            let t = (x as f64 - lo as f64) * 255.0 / (hi - lo) as f64;
            *v = to_byte(t);
        }
        Some(lut)
    })
}

/// Per-channel histogram equalisation; constant channels are left alone.
pub fn equalize(img: &Raster) -> Raster {
    channel_luts(img, |hist| {
        let last = hist.iter().rposition(|&n| n > 0)?;
        let total: u32 = hist.iter().sum();
        let step = (total - hist[last]) / 255;
        if step == 0 {
            return None;
        }
        let mut lut = [0u8; 256];
        let mut acc = step / 2;
        for (v, &n) in lut.iter_mut().zip(hist.iter()) {
            *v = (acc / step).min(255) as u8;
            acc += n;
        }
        Some(lut)
    })
}

#[inline]
fn luma(px: &[u8]) -> f64 {
    0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2])
}

/// `degenerate + factor * (img - degenerate)` per channel.
fn blend(img: &Raster, degenerate: impl Fn(usize, usize) -> f64, factor: f64) -> Raster {
    let mut out = img.pixels().to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        let d = degenerate(i / 3, i % 3);
        *v = to_byte(d + factor * (f64::from(*v) - d));
    }
    img.with_pixels(out)
}

pub fn color(img: &Raster, factor: f64) -> Raster {
    let gray: Vec<f64> = img.pixels().chunks_exact(3).map(luma).collect();
    blend(img, |p, _| gray[p], factor)
}

pub fn contrast(img: &Raster, factor: f64) -> Raster {
    let n = (img.width() * img.height()) as f64;
    let mean = img.pixels().chunks_exact(3).map(luma).sum::<f64>() / n;
    blend(img, |_, _| mean, factor)
}

pub fn brightness(img: &Raster, factor: f64) -> Raster {
    blend(img, |_, _| 0.0, factor)
}

/// Blend against a 3x3 smoothing (centre weight 5, total 13); border pixels
/// keep their value in the smoothed reference.
pub fn sharpness(img: &Raster, factor: f64) -> Raster {
    let (w, h) = (img.width(), img.height());
    let src = img.pixels();
    let mut smooth: Vec<f64> = src.iter().map(|&b| f64::from(b)).collect();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wt = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                        acc += wt * f64::from(src[((y + dy - 1) * w + (x + dx - 1)) * 3 + c]);
                    }
                }
                smooth[(y * w + x) * 3 + c] = acc / 13.0;
            }
        }
    }
    blend(img, |p, c| smooth[p * 3 + c], factor)
}

/// Erases a mid-gray square of side `fraction * min(w, h)` at a random centre.
pub fn cutout<R: Rng + ?Sized>(img: &Raster, fraction: f64, aux: &mut R) -> Raster {
    let (w, h) = (img.width(), img.height());
    let side = (fraction * w.min(h) as f64).round_ties_even() as usize;
    let cx = aux.random_range(0..w);
    let cy = aux.random_range(0..h);
    if side == 0 {
        return img.clone();
    }
    let mut out = img.clone();
    let x0 = cx.saturating_sub(side / 2);
    let y0 = cy.saturating_sub(side / 2);
    for y in y0..(y0 + side).min(h) {
        for x in x0..(x0 + side).min(w) {
            out.put(x, y, FILL);
        }
    }
    out
}
