use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mirage_core::fusion::Phase;
use mirage_core::imageio::{load_png, save_png};
use mirage_core::Image;

use crate::edit::{write_json, TraceManifest};

const BAND: u32 = 4;
const GAP: u32 = 2;
const REGION_COLOR: [f64; 3] = [0.95, 0.55, 0.1];
const GLOBAL_COLOR: [f64; 3] = [0.15, 0.35, 0.9];

#[derive(Debug, Serialize)]
pub struct LegendEntry {
    pub column: usize,
    pub index: usize,
    pub s: f64,
    pub phase: Phase,
}

#[derive(Debug, Serialize)]
pub struct Legend {
    pub layout: String,
    pub region_color: [f64; 3],
    pub global_color: [f64; 3],
    pub tiles: Vec<LegendEntry>,
}

pub struct ContactSheet {
    pub path: PathBuf,
    pub legend: Legend,
}

/// Lays the trace out as columns: fused tile, reference tile at the same `s`,
/// then a band in the phase colour whose filled width is proportional to `s`.
pub fn cmd_inspect(run_dir: &Path) -> Result<ContactSheet> {
    let trace_dir = run_dir.join("trace");
    let manifest_path = trace_dir.join("trace.json");
    if !manifest_path.exists() {
        bail!(
            "no trace in {}: rerun edit with `trace: true` in config.json (or --trace)",
            run_dir.display()
        );
    }
    let manifest: TraceManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    if manifest.tiles.is_empty() {
        bail!("trace in {} has no tiles", run_dir.display());
    }
    let mut columns = Vec::with_capacity(manifest.tiles.len());
    for t in &manifest.tiles {
        let fused: Image<f64> = load_png(&trace_dir.join(&t.fused))?;
        let reference: Image<f64> = load_png(&trace_dir.join(&t.reference))?;
        columns.push((t, fused, reference));
    }
    let (w, h) = (columns[0].1.width(), columns[0].1.height());
    let sheet_w = columns.len() as u32 * (w + GAP) - GAP;
    let sheet_h = 2 * h + GAP + BAND;
    let mut sheet = Image::filled(sheet_w, sheet_h, [1.0; 3])?;
    let mut tiles = Vec::new();
    for (col, (t, fused, reference)) in columns.iter().enumerate() {
        let x0 = col as u32 * (w + GAP);
        sheet.paste(fused, x0, 0)?;
        sheet.paste(reference, x0, h + GAP)?;
        let color = match t.phase {
            Phase::Region => REGION_COLOR,
            Phase::Global => GLOBAL_COLOR,
        };
        let filled = (t.s * w as f64).round() as u32;
        let band = Image::from_fn(w, BAND, |x, y| if y < BAND / 2 || x < filled { color } else { [1.0; 3] })?;
        sheet.paste(&band, x0, 2 * h + GAP)?;
        tiles.push(LegendEntry {
            column: col,
            index: t.index,
            s: t.s,
            phase: t.phase,
        });
    }
    let path = run_dir.join("contact_sheet.png");
    save_png(&sheet, &path)?;
    let legend = Legend {
        layout: "row 1 fused latent, row 2 reference latent at the same s, band: phase colour over s-proportional bar".into(),
        region_color: REGION_COLOR,
        global_color: GLOBAL_COLOR,
        tiles,
    };
    write_json(&run_dir.join("contact_sheet.json"), &legend)?;
    Ok(ContactSheet { path, legend })
}
