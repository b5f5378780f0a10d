//! Boxes, crops, latent-mask rasterization, and region placement.
//!
//! Boxes are half-open `[x0, x1) × [y0, y1)` in pixel coordinates with the
//! origin at the top-left corner.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::{Grid, Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(CoreError::InvalidBox(format!(
                "({x0},{y0},{x1},{y1}) is empty or inverted"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center_x2(&self) -> u32 {
        self.x0 + self.x1
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    pub fn ensure_within(&self, width: u32, height: u32) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(CoreError::Bounds {
                bbox: self.to_string(),
                width,
                height,
            })
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn is_aligned(&self, f: u32) -> bool {
        self.x0.is_multiple_of(f) && self.y0.is_multiple_of(f) && self.x1.is_multiple_of(f) && self.y1.is_multiple_of(f)
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = CoreError;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Binary mask without a channel axis, at latent (or pixel) resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl LatentMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::Shape(format!("mask {height}x{width}")));
        }
        if bits.len() != height * width {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} bits", height * width),
                actual: format!("{} bits", bits.len()),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_superset_of(&self, other: &LatentMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    /// Nearest-neighbour upsampling by an integer factor, e.g. latent → pixel footprint.
    pub fn upsample(&self, factor: usize) -> LatentMask {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut bits = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                bits.push(self.get(y / factor, x / factor));
            }
        }
        LatentMask {
            height: h,
            width: w,
            bits,
        }
    }
}

/// Exact sub-rectangle of `image`; no resampling.
pub fn crop<S: Scalar>(image: &Image<S>, bbox: &BoundingBox) -> Result<Image<S>> {
    bbox.ensure_within(image.width(), image.height())?;
    let mut values = Vec::with_capacity(bbox.area() as usize * 3);
    let row = image.width() as usize * 3;
    for y in bbox.y0..bbox.y1 {
        let start = y as usize * row + bbox.x0 as usize * 3;
        values.extend_from_slice(&image.values()[start..start + bbox.width() as usize * 3]);
    }
    Image::new(bbox.width(), bbox.height(), values)
}

/// Smallest box containing `bbox` whose extents are multiples of `multiple`,
/// grown symmetrically and shifted back inside the image when it overflows.
pub fn pad_to_multiple(
    bbox: &BoundingBox,
    multiple: u32,
    image_w: u32,
    image_h: u32,
) -> Result<BoundingBox> {
    pad_aligned(bbox, multiple, 1, image_w, image_h)
}

/// [`pad_to_multiple`] whose result additionally starts and ends on multiples
/// of `align` (the codec factor), so it maps to whole latent cells.
///
/// `align` must divide `multiple`. Growth is split as evenly as the `align`
/// granularity allows, with the odd unit going right/bottom.
pub fn pad_aligned(
    bbox: &BoundingBox,
    multiple: u32,
    align: u32,
    image_w: u32,
    image_h: u32,
) -> Result<BoundingBox> {
    if multiple == 0 || align == 0 || !multiple.is_multiple_of(align) {
        return Err(CoreError::Config(format!(
            "padding multiple {multiple} must be a positive multiple of alignment {align}"
        )));
    }
    if image_w < multiple || image_h < multiple {
        return Err(CoreError::Unsatisfiable(format!(
            "{image_w}x{image_h} image is smaller than the padding multiple {multiple}"
        )));
    }
    if !image_w.is_multiple_of(align) || !image_h.is_multiple_of(align) {
        return Err(CoreError::Unsatisfiable(format!(
            "{image_w}x{image_h} image is not divisible by alignment {align}"
        )));
    }
    bbox.ensure_within(image_w, image_h)?;
    let (x0, x1) = pad_axis(bbox.x0, bbox.x1, multiple, align, image_w);
    let (y0, y1) = pad_axis(bbox.y0, bbox.y1, multiple, align, image_h);
    BoundingBox::new(x0, y0, x1, y1)
}

fn pad_axis(lo: u32, hi: u32, multiple: u32, align: u32, extent: u32) -> (u32, u32) {
    let (m, a, extent) = (multiple as i64, align as i64, extent as i64);
    let lo = (lo as i64).div_euclid(a) * a;
    let hi = (hi as i64 + a - 1).div_euclid(a) * a;
    let len = hi - lo;
    let cap = extent / m * m;
    let target = ((len + m - 1) / m * m).min(cap);
    let units = (target - len) / a;
    let mut new_lo = lo - units.div_euclid(2) * a;
    let mut new_hi = new_lo + target;
    if new_lo < 0 {
        new_lo = 0;
        new_hi = target;
    }
    if new_hi > extent {
        new_hi = extent;
        new_lo = extent - target;
    }
    (new_lo as u32, new_hi as u32)
}

/// A latent cell is set iff its `vae_factor × vae_factor` pixel footprint
/// intersects the box.
pub fn box_to_latent_mask(
    bbox: &BoundingBox,
    vae_factor: u32,
    latent_h: usize,
    latent_w: usize,
) -> Result<LatentMask> {
    if vae_factor == 0 {
        return Err(CoreError::Config("vae factor must be positive".into()));
    }
    let f = vae_factor as usize;
    if bbox.x1 as usize > latent_w * f || bbox.y1 as usize > latent_h * f {
        return Err(CoreError::Bounds {
            bbox: bbox.to_string(),
            width: (latent_w * f) as u32,
            height: (latent_h * f) as u32,
        });
    }
    let mut mask = LatentMask::zeros(latent_h, latent_w);
    let (cx0, cx1) = (bbox.x0 as usize / f, (bbox.x1 as usize).div_ceil(f));
    let (cy0, cy1) = (bbox.y0 as usize / f, (bbox.y1 as usize).div_ceil(f));
    for y in cy0..cy1 {
        for x in cx0..cx1 {
            mask.bits[y * latent_w + x] = true;
        }
    }
    Ok(mask)
}

fn latent_window(bbox: &BoundingBox, vae_factor: u32) -> Result<(usize, usize, usize, usize)> {
    if vae_factor == 0 || !bbox.is_aligned(vae_factor) {
        return Err(CoreError::InvalidBox(format!(
            "{bbox} is not aligned to codec factor {vae_factor}"
        )));
    }
    let f = vae_factor;
    Ok((
        (bbox.x0 / f) as usize,
        (bbox.y0 / f) as usize,
        (bbox.width() / f) as usize,
        (bbox.height() / f) as usize,
    ))
}

/// The latent cells under an `f`-aligned box.
pub fn crop_latent<S: Scalar>(z: &Grid<S>, bbox: &BoundingBox, vae_factor: u32) -> Result<Grid<S>> {
    let (cx, cy, w, h) = latent_window(bbox, vae_factor)?;
    let shape = z.shape();
    if cx + w > shape.width || cy + h > shape.height {
        return Err(CoreError::Bounds {
            bbox: bbox.to_string(),
            width: (shape.width as u32) * vae_factor,
            height: (shape.height as u32) * vae_factor,
        });
    }
    Grid::from_fn(Shape::new(shape.channels, h, w)?, |c, y, x| {
        z.get(c, cy + y, cx + x)
    })
}

/// Places a region latent at its box's latent offset on a zero canvas.
pub fn place<S: Scalar>(
    region: &Grid<S>,
    bbox: &BoundingBox,
    vae_factor: u32,
    canvas: Shape,
) -> Result<Grid<S>> {
    let (cx, cy, w, h) = latent_window(bbox, vae_factor)?;
    let rs = region.shape();
    if rs.channels != canvas.channels || rs.height != h || rs.width != w {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{}x{h}x{w} region for box {bbox}", canvas.channels),
            actual: rs.to_string(),
        });
    }
    if cx + w > canvas.width || cy + h > canvas.height {
        return Err(CoreError::Bounds {
            bbox: bbox.to_string(),
            width: (canvas.width as u32) * vae_factor,
            height: (canvas.height as u32) * vae_factor,
        });
    }
    let mut out = Grid::zeros(canvas);
    for c in 0..rs.channels {
        for y in 0..h {
            for x in 0..w {
                out.set(c, cy + y, cx + x, region.get(c, y, x));
            }
        }
    }
    Ok(out)
}

/// Cellwise OR. An empty list yields the all-zero mask of the given size.
pub fn mask_union(masks: &[LatentMask], height: usize, width: usize) -> Result<LatentMask> {
    let mut out = LatentMask::zeros(height, width);
    for m in masks {
        if m.height != height || m.width != width {
            return Err(CoreError::ShapeMismatch {
                expected: format!("mask {height}x{width}"),
                actual: format!("mask {}x{}", m.height, m.width),
            });
        }
        for (o, &b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= b;
        }
    }
    Ok(out)
}

/// One grounded sub-edit: referent, sub-instruction, padded box, its latent
/// mask, and the clean crop that conditions the region branch.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionInstance<S> {
    pub referring_expression: String,
    pub sub_instruction: String,
    pub bbox: BoundingBox,
    pub mask: LatentMask,
    pub crop_image: Image<S>,
}

impl<S: Scalar> RegionInstance<S> {
    /// Pads `raw_box` to whole patches, rasterizes it onto the latent grid and
    /// crops the reference.
    pub fn build(
        reference: &Image<S>,
        referring_expression: impl Into<String>,
        sub_instruction: impl Into<String>,
        raw_box: &BoundingBox,
        vae_factor: u32,
        patch: u32,
    ) -> Result<Self> {
        let bbox = pad_aligned(
            raw_box,
            vae_factor * patch,
            vae_factor,
            reference.width(),
            reference.height(),
        )?;
        let f = vae_factor as usize;
        let mask = box_to_latent_mask(
            &bbox,
            vae_factor,
            reference.height() as usize / f,
            reference.width() as usize / f,
        )?;
        Ok(Self {
            referring_expression: referring_expression.into(),
            sub_instruction: sub_instruction.into(),
            crop_image: crop(reference, &bbox)?,
            bbox,
            mask,
        })
    }
}
