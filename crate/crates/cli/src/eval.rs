use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use mirage_core::imageio::{load_mask, load_png};
use mirage_core::metrics::{background_metrics, write_background_csv, write_scores_csv, SampleReport};
use mirage_core::{Image, MaskSet, PixelMask};
use mirage_vlm::bench::Manifest;
use mirage_vlm::judge::{judge_scores, mask_out, JUDGE_REPEATS};

use crate::clients::{make_client, Role};
use crate::config::RunConfig;
use crate::edit::write_json;
use crate::exit::PartialBatch;

struct Loaded {
    manifest: Manifest,
    reference: Image<f64>,
    edited: Image<f64>,
    masks: MaskSet,
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub evaluated: usize,
    pub skipped: usize,
    pub judged: usize,
    pub reports: Vec<SampleReport>,
}

/// Sample directories under `manifest_dir`, or the directory itself if it
/// holds a `manifest.json`.
fn manifests(manifest_dir: &Path) -> Result<Vec<PathBuf>> {
    if manifest_dir.join("manifest.json").exists() {
        return Ok(vec![manifest_dir.join("manifest.json")]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(manifest_dir)
        .with_context(|| format!("reading {}", manifest_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join("manifest.json")))
        .filter(|p| p.exists())
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no manifest.json found under {}", manifest_dir.display());
    }
    Ok(out)
}

/// `<results>/<id>/output.png` as written by `edit`, else `<results>/<id>.png`.
pub fn edited_path(results_dir: &Path, id: &str) -> Option<PathBuf> {
    [results_dir.join(id).join("output.png"), results_dir.join(format!("{id}.png"))]
        .into_iter()
        .find(|p| p.exists())
}

fn load(manifest_path: &Path, results_dir: &Path) -> Result<Loaded> {
    let manifest = Manifest::load(manifest_path)?;
    let sample_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let reference: Image<f64> = load_png(&sample_dir.join(&manifest.image_path)).context("reference image")?;
    let edited_file = edited_path(results_dir, &manifest.id).context("edited image missing")?;
    let edited: Image<f64> = load_png(&edited_file).context("edited image")?;
    let masks: Vec<PixelMask> = manifest
        .mask_paths
        .iter()
        .map(|m| load_mask(&sample_dir.join(m)).with_context(|| format!("mask {m}")))
        .collect::<Result<_>>()?;
    let masks = MaskSet::new(reference.width(), reference.height(), masks)?;
    Ok(Loaded {
        manifest,
        reference,
        edited,
        masks,
    })
}

/// Background metrics for every sample and, with `judge`, avg@3 scores.
/// Writes `<out>/<id>.json`, `background.csv`, `scores.csv` (judge only) and
/// `summary.json`.
pub fn cmd_eval(manifest_dir: &Path, results_dir: &Path, cfg: &RunConfig, judge: bool) -> Result<EvalSummary> {
    let paths = manifests(manifest_dir)?;
    let loaded: Vec<(String, Result<Loaded>)> = paths
        .par_iter()
        .map(|p| {
            let id = p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (id, load(p, results_dir))
        })
        .collect();

    let mut reports: Vec<SampleReport> = loaded
        .par_iter()
        .map(|(id, l)| match l {
            Ok(l) => {
                let background = background_metrics(&l.reference, &l.edited, &l.masks, "background");
                match background {
                    Ok(b) => SampleReport {
                        sample: l.manifest.id.clone(),
                        background: Some(b),
                        scores: None,
                        overall: None,
                        skipped: None,
                    },
                    Err(e) => skipped(id, format!("{e}")),
                }
            }
            Err(e) => skipped(id, format!("{e:#}")),
        })
        .collect();

    let mut judge_failures = 0;
    if judge {
        let client = make_client(cfg, Role::Judge, None).context("judge client")?;
        for (report, (_, l)) in reports.iter_mut().zip(&loaded) {
            let (Ok(l), None) = (l, &report.skipped) else { continue };
            let masked = mask_out(&l.reference, &l.masks)?;
            let instruction = l.manifest.instructions.join("; ");
            match judge_scores(&l.reference, &masked, &l.edited, &instruction, client.as_ref(), &cfg.judge, JUDGE_REPEATS) {
                Ok(o) => {
                    report.overall = Some(o.scores.overall());
                    report.scores = Some(o.scores);
                }
                Err(e) => {
                    log::warn!("{}: judge unavailable: {e}", report.sample);
                    judge_failures += 1;
                }
            }
        }
    }

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    for r in &reports {
        write_json(&cfg.out.join(format!("{}.json", r.sample)), r)?;
    }
    write_background_csv(File::create(cfg.out.join("background.csv"))?, &reports)?;
    if judge {
        write_scores_csv(File::create(cfg.out.join("scores.csv"))?, &reports)?;
    }
    let skipped_n = reports.iter().filter(|r| r.skipped.is_some()).count();
    let summary = EvalSummary {
        evaluated: reports.len() - skipped_n,
        skipped: skipped_n,
        judged: reports.iter().filter(|r| r.scores.is_some()).count(),
        reports,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    for r in summary.reports.iter().filter(|r| r.skipped.is_some()) {
        log::warn!("{} skipped: {}", r.sample, r.skipped.as_deref().unwrap_or_default());
    }
    if summary.evaluated == 0 {
        bail!("every sample was skipped");
    }
    if skipped_n + judge_failures > 0 {
        return Err(PartialBatch {
            failed: skipped_n + judge_failures,
            total: summary.reports.len(),
        }
        .into());
    }
    Ok(summary)
}

fn skipped(id: &str, reason: String) -> SampleReport {
    SampleReport {
        sample: id.to_string(),
        background: None,
        scores: None,
        overall: None,
        skipped: Some(reason),
    }
}
