//! Background-preservation metrics and judge-score aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::tensor::Image;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Prompt following, consistency and perceptual quality, each in `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub pf: f64,
    pub cons: f64,
    pub pq: f64,
}

impl ScoreTriple {
    pub fn new(pf: f64, cons: f64, pq: f64) -> Result<Self> {
        for (name, v) in [("pf", pf), ("cons", cons), ("pq", pq)] {
            if !(0.0..=10.0).contains(&v) {
                return Err(CoreError::Metric(format!("{name} = {v} outside [0, 10]")));
            }
        }
        Ok(Self { pf, cons, pq })
    }

    pub fn overall(&self) -> f64 {
        overall_score(self)
    }
}

/// `sqrt(min(pf, cons) * pq)`.
pub fn overall_score(s: &ScoreTriple) -> f64 {
    (s.pf.min(s.cons) * s.pq).sqrt()
}

/// Componentwise mean of exactly `k` judge evaluations.
pub fn avg_at_k(samples: &[ScoreTriple], k: usize) -> Result<ScoreTriple> {
    if samples.is_empty() {
        return Err(CoreError::Metric("no judge evaluations to average".into()));
    }
    if samples.len() != k {
        return Err(CoreError::Metric(format!(
            "expected {k} evaluations, got {}",
            samples.len()
        )));
    }
    let n = k as f64;
    let mean = |f: fn(&ScoreTriple) -> f64| samples.iter().map(f).sum::<f64>() / n;
    Ok(ScoreTriple {
        pf: mean(|s| s.pf),
        cons: mean(|s| s.cons),
        pq: mean(|s| s.pq),
    })
}

/// Pixel-resolution binary bitmap, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(CoreError::Shape(format!(
                "{} mask bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_box(width: u32, height: u32, bbox: &BoundingBox) -> Result<Self> {
        bbox.ensure_within(width, height)?;
        let mut bits = vec![false; width as usize * height as usize];
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                bits[(y * width + x) as usize] = true;
            }
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Ground-truth target masks with their union cached.
#[derive(Debug, Clone)]
pub struct MaskSet {
    width: u32,
    height: u32,
    masks: Vec<PixelMask>,
    union: Vec<bool>,
}

impl MaskSet {
    pub fn new(width: u32, height: u32, masks: Vec<PixelMask>) -> Result<Self> {
        let mut union = vec![false; width as usize * height as usize];
        for (i, m) in masks.iter().enumerate() {
            if m.width != width || m.height != height {
                return Err(CoreError::Shape(format!(
                    "mask {i} is {}x{}, image is {width}x{height}",
                    m.width, m.height
                )));
            }
            for (u, b) in union.iter_mut().zip(&m.bits) {
                *u |= *b;
            }
        }
        Ok(Self {
            width,
            height,
            masks,
            union,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            masks: Vec::new(),
            union: vec![false; width as usize * height as usize],
        }
    }

    pub fn masks(&self) -> &[PixelMask] {
        &self.masks
    }

    pub fn in_union(&self, x: u32, y: u32) -> bool {
        self.union[(y * self.width + x) as usize]
    }

    pub fn background_count(&self) -> usize {
        self.union.iter().filter(|b| !**b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetricReport {
    pub psnr: f64,
    pub mse: f64,
    /// Absent when no 8x8 window lies entirely in the background.
    pub ssim: Option<f64>,
    pub pixel_count: usize,
    pub mask_id: String,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn luma<S: Scalar>(img: &Image<S>) -> Vec<f64> {
    img.values()
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0].to_f64_lossy() + LUMA[1] * p[1].to_f64_lossy() + LUMA[2] * p[2].to_f64_lossy())
        .collect()
}

fn window_ssim(a: &[f64], b: &[f64], width: usize, x0: usize, y0: usize) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cells = || {
        (y0..y0 + SSIM_WINDOW).flat_map(move |y| (x0..x0 + SSIM_WINDOW).map(move |x| y * width + x))
    };
    let mx = cells().map(|i| a[i]).sum::<f64>() / n;
    let my = cells().map(|i| b[i]).sum::<f64>() / n;
    let vx = cells().map(|i| (a[i] - mx) * (a[i] - mx)).sum::<f64>() / n;
    let vy = cells().map(|i| (b[i] - my) * (b[i] - my)).sum::<f64>() / n;
    let cxy = cells().map(|i| (a[i] - mx) * (b[i] - my)).sum::<f64>() / n;
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// PSNR, MSE and luma SSIM over the pixels outside every mask.
pub fn background_metrics<S: Scalar>(
    reference: &Image<S>,
    edited: &Image<S>,
    masks: &MaskSet,
    mask_id: impl Into<String>,
) -> Result<RegionMetricReport> {
    let (w, h) = (reference.width(), reference.height());
    if edited.width() != w || edited.height() != h {
        return Err(CoreError::Shape(format!(
            "reference is {w}x{h}, edited is {}x{}",
            edited.width(),
            edited.height()
        )));
    }
    if masks.width != w || masks.height != h {
        return Err(CoreError::Shape(format!(
            "masks are {}x{}, images are {w}x{h}",
            masks.width, masks.height
        )));
    }
    let pixel_count = masks.background_count();
    if pixel_count == 0 {
        return Err(CoreError::Metric("mask union covers the whole image".into()));
    }

    let (ra, ea) = (reference.values(), edited.values());
    let mut sq = 0.0;
    for (i, inside) in masks.union.iter().enumerate() {
        if *inside {
            continue;
        }
        for c in 0..3 {
            let d = ra[3 * i + c].to_f64_lossy() - ea[3 * i + c].to_f64_lossy();
            sq += d * d;
        }
    }
    let mse = sq / (3 * pixel_count) as f64;

    let ssim = if w as usize >= SSIM_WINDOW && h as usize >= SSIM_WINDOW {
        let (w, h) = (w as usize, h as usize);
        // Summed-area table of mask cells, so window validity is O(1).
        let mut sat = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                sat[(y + 1) * (w + 1) + x + 1] = masks.union[y * w + x] as u32
                    + sat[y * (w + 1) + x + 1]
                    + sat[(y + 1) * (w + 1) + x]
                    - sat[y * (w + 1) + x];
            }
        }
        let (la, le) = (luma(reference), luma(edited));
        let mut total = 0.0;
        let mut windows = 0usize;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (y1, x1) = (y0 + SSIM_WINDOW, x0 + SSIM_WINDOW);
                let covered = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0]
                    - sat[y0 * (w + 1) + x1]
                    - sat[y1 * (w + 1) + x0];
                if covered == 0 {
                    total += window_ssim(&la, &le, w, x0, y0);
                    windows += 1;
                }
            }
        }
        (windows > 0).then(|| total / windows as f64)
    } else {
        None
    };

    Ok(RegionMetricReport {
        psnr: psnr_from_mse(mse),
        mse,
        ssim,
        pixel_count,
        mask_id: mask_id.into(),
    })
}

/// Per-sample evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background: Option<RegionMetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreTriple>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

pub const BACKGROUND_COLUMNS: [&str; 8] = [
    "sample",
    "structure_distance",
    "psnr",
    "lpips",
    "mse",
    "ssim",
    "clip_whole",
    "clip_edited",
];

pub const SCORE_COLUMNS: [&str; 5] = ["sample", "pf", "cons", "pq", "overall"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Io(e.to_string())
}

/// Background table. Neural-feature columns are always empty.
pub fn write_background_csv<W: Write>(out: W, reports: &[SampleReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BACKGROUND_COLUMNS).map_err(csv_err)?;
    for r in reports {
        let Some(b) = &r.background else { continue };
        w.write_record([
            r.sample.clone(),
            String::new(),
            fmt_opt(Some(b.psnr)),
            String::new(),
            fmt_opt(Some(b.mse)),
            fmt_opt(b.ssim),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CoreError::Io(e.to_string()))
}

pub fn write_scores_csv<W: Write>(out: W, reports: &[SampleReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_COLUMNS).map_err(csv_err)?;
    for r in reports {
        let Some(s) = &r.scores else { continue };
        w.write_record([
            r.sample.clone(),
            fmt_opt(Some(s.pf)),
            fmt_opt(Some(s.cons)),
            fmt_opt(Some(s.pq)),
            fmt_opt(Some(s.overall())),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CoreError::Io(e.to_string()))
}
