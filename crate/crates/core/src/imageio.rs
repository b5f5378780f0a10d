//! PNG load/save. Channels are quantized with `round(v * 255)`.

use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;
use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{CoreError, Result};
use crate::metrics::PixelMask;
use crate::scalar::Scalar;
use crate::tensor::Image;

fn codec_err(e: image::ImageError) -> CoreError {
    CoreError::Codec(e.to_string())
}

pub fn quantize<S: Scalar>(v: S) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8<S: Scalar>(img: &Image<S>) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| Rgb(img.pixel(x, y).map(quantize)))
}

pub fn from_rgb8<S: Scalar>(rgb: &RgbImage) -> Result<Image<S>> {
    Image::from_fn(rgb.width(), rgb.height(), |x, y| {
        rgb.get_pixel(x, y).0.map(|b| S::of(b as f64 / 255.0))
    })
}

pub fn load_png<S: Scalar>(path: &Path) -> Result<Image<S>> {
    let img = image::open(path).map_err(|e| CoreError::Codec(format!("{}: {e}", path.display())))?;
    from_rgb8(&img.to_rgb8())
}

pub fn save_png<S: Scalar>(img: &Image<S>, path: &Path) -> Result<()> {
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| CoreError::Codec(format!("{}: {e}", path.display())))
}

pub fn encode_png<S: Scalar>(img: &Image<S>) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    to_rgb8(img).write_to(&mut buf, ImageFormat::Png).map_err(codec_err)?;
    Ok(buf.into_inner())
}

pub fn decode_png<S: Scalar>(bytes: &[u8]) -> Result<Image<S>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(codec_err)?;
    from_rgb8(&img.to_rgb8())
}

pub fn png_base64<S: Scalar>(img: &Image<S>) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(encode_png(img)?))
}

pub fn image_from_base64<S: Scalar>(text: &str) -> Result<Image<S>> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text.trim())
        .map_err(|e| CoreError::Codec(e.to_string()))?;
    decode_png(&bytes)
}

/// Grayscale PNG, nonzero means inside.
pub fn mask_from_png_bytes(bytes: &[u8]) -> Result<PixelMask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(codec_err)?;
    let l = img.to_luma8();
    PixelMask::new(l.width(), l.height(), l.pixels().map(|p| p.0[0] > 0).collect())
}

pub fn load_mask(path: &Path) -> Result<PixelMask> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))?;
    mask_from_png_bytes(&bytes)
}

pub fn mask_to_png_bytes(mask: &PixelMask) -> Result<Vec<u8>> {
    let l = image::GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        image::Luma([if mask.get(x, y) { 255 } else { 0 }])
    });
    let mut buf = Cursor::new(Vec::new());
    l.write_to(&mut buf, ImageFormat::Png).map_err(codec_err)?;
    Ok(buf.into_inner())
}

pub fn save_mask(mask: &PixelMask, path: &Path) -> Result<()> {
    std::fs::write(path, mask_to_png_bytes(mask)?)
        .map_err(|e| CoreError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    #[test]
    fn quantized_images_roundtrip_exactly() {
        let img: Image<f64> =
            Image::from_fn(5, 3, |x, y| [x as f64 * 51.0 / 255.0, y as f64 * 100.0 / 255.0, 1.0]).unwrap();
        let back: Image<f64> = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let b64 = png_base64(&img).unwrap();
        assert_eq!(image_from_base64::<f64>(&b64).unwrap(), img);
    }

    #[test]
    fn quantize_rounds() {
        assert_eq!(quantize(0.5f64), 128);
        assert_eq!(quantize(1.0f32), 255);
        assert_eq!(quantize(0.0019f64), 0);
        assert_eq!(quantize(0.002f64), 1);
    }

    #[test]
    fn mask_roundtrip() {
        let m = PixelMask::from_box(6, 4, &BoundingBox::new(1, 1, 3, 4).unwrap()).unwrap();
        assert_eq!(mask_from_png_bytes(&mask_to_png_bytes(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn garbage_is_codec_error() {
        assert!(matches!(decode_png::<f64>(b"nope"), Err(CoreError::Codec(_))));
    }
}
