//! Synthetic scenes with known ground truth: flat-colored rectangles on a
//! flat background. Boxes are multiples of 8 so every codec factor in use
//! keeps them aligned.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mirage_core::{BoundingBox, Image};

use crate::error::{Result, VlmError};
use crate::grammar::Candidate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    pub color: [f64; 3],
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub background: [f64; 3],
    pub objects: Vec<SceneObject>,
}

/// Named colors used by the generator, all exactly representable in 8 bits.
pub fn named_color(name: &str) -> Option<[f64; 3]> {
    let c = |r: u8, g: u8, b: u8| [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0];
    Some(match name {
        "red" => c(220, 40, 40),
        "green" => c(40, 160, 60),
        "blue" => c(40, 70, 200),
        "yellow" => c(230, 200, 40),
        "purple" => c(130, 60, 170),
        "orange" => c(240, 140, 30),
        "brown" => c(120, 80, 40),
        "gray" | "grey" => c(110, 110, 110),
        _ => return None,
    })
}

pub const ATTRIBUTE_COLORS: [&str; 5] = ["red", "green", "blue", "yellow", "purple"];

impl Scene {
    /// 64x64, three 16x16 squares in a row.
    pub fn three_squares() -> Self {
        let q = |v: u8| v as f64 / 255.0;
        let square = [q(51), q(102), q(153)];
        let objects = [0u32, 24, 48]
            .into_iter()
            .map(|x0| SceneObject {
                category: "square".into(),
                color: square,
                bbox: BoundingBox::new(x0, 24, x0 + 16, 40).expect("static box"),
            })
            .collect();
        Self {
            width: 64,
            height: 64,
            background: [q(204), q(204), q(204)],
            objects,
        }
    }

    /// `count` instances of `category` in a row, colored by `attributes`, and
    /// one object per extra target above them.
    pub fn row(category: &str, attributes: &[String], extras: &[String]) -> Result<Self> {
        let count = attributes.len();
        if count == 0 || count > 5 || extras.len() > 2 {
            return Err(VlmError::Config(format!(
                "scene row needs 1-5 instances and at most 2 extras, got {count} and {}",
                extras.len()
            )));
        }
        let (cell, gap) = (24u32, 16u32);
        let width = 16 + count as u32 * (cell + gap);
        let width = width.div_ceil(8) * 8;
        let height = 96;
        let mut objects = Vec::new();
        for (i, attr) in attributes.iter().enumerate() {
            let color_name = attr.split_whitespace().next().unwrap_or("gray");
            let x0 = 16 + i as u32 * (cell + gap);
            objects.push(SceneObject {
                category: category.into(),
                color: named_color(color_name).unwrap_or(named_color("gray").expect("gray")),
                bbox: BoundingBox::new(x0, 56, x0 + cell, 56 + cell)?,
            });
        }
        for (j, extra) in extras.iter().enumerate() {
            let x0 = 16 + j as u32 * 40;
            objects.push(SceneObject {
                category: extra.clone(),
                color: named_color(["orange", "brown"][j]).expect("static color"),
                bbox: BoundingBox::new(x0, 8, x0 + 16, 32)?,
            });
        }
        Ok(Self {
            width,
            height,
            background: [0.8, 0.8, 0.8].map(|v: f64| (v * 255.0).round() / 255.0),
            objects,
        })
    }

    pub fn render(&self) -> Result<Image<f64>> {
        Ok(Image::from_fn(self.width, self.height, |x, y| {
            self.objects
                .iter()
                .rev()
                .find(|o| x >= o.bbox.x0 && x < o.bbox.x1 && y >= o.bbox.y0 && y < o.bbox.y1)
                .map_or(self.background, |o| o.color)
        })?)
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.objects
            .iter()
            .map(|o| Candidate {
                category: Some(o.category.clone()),
                bbox: o.bbox,
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| VlmError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))
    }

    /// Sidecar location next to an image: `foo.png` → `foo.scene.json`.
    pub fn sidecar_path(image: &Path) -> std::path::PathBuf {
        image.with_extension("scene.json")
    }
}

/// Boxes of 4-connected regions that differ from the most common color.
pub fn detect_components(image: &Image<f64>) -> Vec<BoundingBox> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let key = |x: usize, y: usize| image.pixel(x as u32, y as u32).map(f64::to_bits);
    let mut counts: std::collections::HashMap<[u64; 3], usize> = std::collections::HashMap::new();
    for y in 0..h {
        for x in 0..w {
            *counts.entry(key(x, y)).or_default() += 1;
        }
    }
    let Some(bg) = counts.into_iter().max_by_key(|(k, n)| (*n, *k)).map(|(k, _)| k) else {
        return Vec::new();
    };
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[y * w + x] || key(x, y) == bg {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (x, y, x + 1, y + 1);
            let mut stack = vec![(x, y)];
            seen[y * w + x] = true;
            while let Some((cx, cy)) = stack.pop() {
                x0 = x0.min(cx);
                y0 = y0.min(cy);
                x1 = x1.max(cx + 1);
                y1 = y1.max(cy + 1);
                let mut push = |nx: usize, ny: usize| {
                    if !seen[ny * w + nx] && key(nx, ny) != bg {
                        seen[ny * w + nx] = true;
                        stack.push((nx, ny));
                    }
                };
                if cx > 0 {
                    push(cx - 1, cy);
                }
                if cx + 1 < w {
                    push(cx + 1, cy);
                }
                if cy > 0 {
                    push(cx, cy - 1);
                }
                if cy + 1 < h {
                    push(cx, cy + 1);
                }
            }
            if let Ok(b) = BoundingBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32) {
                boxes.push(b);
            }
        }
    }
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_squares_boxes_are_aligned_and_detected() {
        let s = Scene::three_squares();
        for o in &s.objects {
            assert!(o.bbox.is_aligned(8));
        }
        let img = s.render().unwrap();
        let mut found = detect_components(&img);
        found.sort_by_key(|b| b.x0);
        let truth: Vec<BoundingBox> = s.objects.iter().map(|o| o.bbox).collect();
        assert_eq!(found, truth);
    }

    #[test]
    fn row_layout() {
        let attrs: Vec<String> = ["red cup", "blue cup", "green cup"].map(String::from).to_vec();
        let s = Scene::row("cup", &attrs, &["lamp".into(), "plant".into()]).unwrap();
        assert_eq!(s.objects.len(), 5);
        assert_eq!(s.width % 8, 0);
        let img = s.render().unwrap();
        assert_eq!(detect_components(&img).len(), 5);
        assert!(Scene::row("cup", &[], &[]).is_err());
    }
}
