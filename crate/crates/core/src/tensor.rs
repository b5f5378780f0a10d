//! Dense grids, pixel images, seeded noise, and patch-token accounting.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::LatentMask;
use crate::scalar::Scalar;

/// Channels × height × width of a latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::Shape(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

fn mismatch(expected: impl fmt::Display, actual: impl fmt::Display) -> CoreError {
    CoreError::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

/// Channel-major (CHW) real-valued grid. Every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<S> {
    shape: Shape,
    values: Vec<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn new(shape: Shape, values: Vec<S>) -> Result<Self> {
        Shape::new(shape.channels, shape.height, shape.width)?;
        if values.len() != shape.len() {
            return Err(mismatch(
                format!("{} values", shape.len()),
                format!("{} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(i));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: Shape, value: S) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> S) -> Result<Self> {
        let mut values = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> S {
        self.values[self.index(c, y, x)]
    }

    #[inline]
    pub(crate) fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let i = self.index(c, y, x);
        self.values[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(mismatch(self.shape, other.shape));
        }
        Ok(())
    }

    /// Elementwise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.shape, values)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Result<Self> {
        Self::new(self.shape, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<T: Scalar>(&self) -> Result<Grid<T>> {
        Grid::new(
            self.shape,
            self.values.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        )
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
            .fold(0.0, f64::max))
    }
}

/// `(1 - w)·a + w·b` elementwise. Exact at `w = 0` and `w = 1`.
pub fn lerp<S: Scalar>(a: &Grid<S>, b: &Grid<S>, w: f64) -> Result<Grid<S>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(CoreError::Config(format!("lerp weight {w} outside [0, 1]")));
    }
    let wb = S::of(w);
    let wa = S::of(1.0 - w);
    a.zip_map(b, |x, y| wa * x + wb * y)
}

/// Cellwise switch between `base` (mask 0) and `overlay` (mask 1). All channels
/// of a cell move together.
pub fn masked_blend<S: Scalar>(
    base: &Grid<S>,
    overlay: &Grid<S>,
    mask: &LatentMask,
) -> Result<Grid<S>> {
    base.ensure_same_shape(overlay)?;
    let shape = base.shape();
    if mask.height() != shape.height || mask.width() != shape.width {
        return Err(mismatch(
            format!("mask {}x{}", shape.height, shape.width),
            format!("mask {}x{}", mask.height(), mask.width()),
        ));
    }
    let mut out = base.clone();
    let plane = shape.plane();
    for (cell, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
        for c in 0..shape.channels {
            out.values[c * plane + cell] = overlay.values[c * plane + cell];
        }
    }
    Ok(out)
}

/// Height × width × 3 image with values in `[0, 1]`, row-major, interleaved RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    width: u32,
    height: u32,
    values: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, values: Vec<S>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::Shape(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if values.len() != expected {
            return Err(mismatch(
                format!("{expected} pixel values"),
                format!("{} pixel values", values.len()),
            ));
        }
        for (index, v) in values.iter().enumerate() {
            let f = v.to_f64_lossy();
            if !(0.0..=1.0).contains(&f) {
                return Err(CoreError::PixelRange { index, value: f });
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [S; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.iter().copied().cycle().take(n * 3).collect())
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [S; 3]) -> Result<Self> {
        let mut values = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                values.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [S; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    pub fn cast<T: Scalar>(&self) -> Result<Image<T>> {
        Image::new(
            self.width,
            self.height,
            self.values.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        )
    }

    /// Copies `patch` into this image with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &Image<S>, x0: u32, y0: u32) -> Result<()> {
        if x0 + patch.width > self.width || y0 + patch.height > self.height {
            return Err(CoreError::Bounds {
                bbox: format!("{}x{} at ({x0},{y0})", patch.width, patch.height),
                width: self.width,
                height: self.height,
            });
        }
        let row = patch.width as usize * 3;
        for y in 0..patch.height {
            let src = y as usize * row;
            let dst = ((y0 + y) as usize * self.width as usize + x0 as usize) * 3;
            self.values[dst..dst + row].copy_from_slice(&patch.values[src..src + row]);
        }
        Ok(())
    }
}

/// Standard-normal noise regenerated bit-exactly from `(seed, shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField<S> {
    pub seed: u64,
    pub grid: Grid<S>,
}

/// Draws standard-normal noise with ChaCha8 and a Box–Muller transform.
///
/// Transcendentals come from `libm` so the byte stream does not depend on the
/// platform's math library.
pub fn sample_noise<S: Scalar>(seed: u64, shape: Shape) -> Result<NoiseField<S>> {
    let shape = Shape::new(shape.channels, shape.height, shape.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.len();
    let mut values = Vec::with_capacity(n + 1);
    while values.len() < n {
        // (0, 1] so the logarithm is finite.
        let u1 = 1.0 - unit_f64(&mut rng);
        let u2 = unit_f64(&mut rng);
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        values.push(S::of(radius * libm::cos(theta)));
        values.push(S::of(radius * libm::sin(theta)));
    }
    values.truncate(n);
    Ok(NoiseField {
        seed,
        grid: Grid::new(shape, values)?,
    })
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Transformer tokens needed for a `height_px × width_px` canvas after the codec
/// downsamples by `vae_factor` and the backbone patchifies by `patch`.
pub fn patch_token_count(height_px: u64, width_px: u64, vae_factor: u64, patch: u64) -> u64 {
    let cell = vae_factor * patch;
    height_px.div_ceil(cell) * width_px.div_ceil(cell)
}
