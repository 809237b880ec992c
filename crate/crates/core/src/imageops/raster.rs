use crate::error::{Error, Result};

/// Smallest accepted width or height.
pub const MIN_SIDE: usize = 8;

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Raster(format!(
                "{width}x{height} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Raster(format!(
                "expected {} bytes for {width}x{height}, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    /// Builds a raster from a per-pixel function `f(x, y) -> [r, g, b]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Same dimensions, new payload. Used by ops that preserve geometry.
    pub(crate) fn with_pixels(&self, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub(crate) fn map_bytes(&self, f: impl Fn(u8) -> u8) -> Self {
        self.with_pixels(self.pixels.iter().map(|&b| f(b)).collect())
    }
}
