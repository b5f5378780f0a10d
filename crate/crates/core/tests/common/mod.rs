#![allow(dead_code)]

use mirage_core::geometry::RegionInstance;
use mirage_core::{BoundingBox, Image};

pub const BACKGROUND: [f64; 3] = [0.8, 0.8, 0.8];
pub const SQUARE: [f64; 3] = [0.2, 0.4, 0.6];

/// 64x64 canvas with three 12x12 squares in a row. Values are k/255 so the
/// image survives PNG quantization unchanged.
pub fn three_squares() -> (Image<f64>, [BoundingBox; 3]) {
    let q = |v: f64| (v * 255.0).round() / 255.0;
    let boxes = [
        BoundingBox::new(4, 26, 16, 38).unwrap(),
        BoundingBox::new(26, 26, 38, 38).unwrap(),
        BoundingBox::new(48, 26, 60, 38).unwrap(),
    ];
    let img = Image::from_fn(64, 64, |x, y| {
        let inside = boxes.iter().any(|b| x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1);
        let base = if inside { SQUARE } else { BACKGROUND };
        // A faint gradient so the background is not constant.
        let g = ((x + 2 * y) % 16) as f64 / 255.0;
        [q(base[0] - g), q(base[1]), q(base[2] + g * 0.5)]
    })
    .unwrap();
    (img, boxes)
}

pub fn region(img: &Image<f64>, b: &BoundingBox, sub: &str, patch: u32) -> RegionInstance<f64> {
    RegionInstance::build(img, "the square", sub, b, 1, patch).unwrap()
}

pub fn inside_any(boxes: &[BoundingBox], x: u32, y: u32) -> bool {
    boxes.iter().any(|b| x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1)
}

pub fn max_region_error(out: &Image<f64>, b: &BoundingBox, color: [f64; 3]) -> f64 {
    let mut e: f64 = 0.0;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            let p = out.pixel(x, y);
            for c in 0..3 {
                e = e.max((p[c] - color[c]).abs());
            }
        }
    }
    e
}
