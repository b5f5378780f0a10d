use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mirage_core::bridge::BridgeBackend;
use mirage_core::fusion::{Phase, RunReport};
use mirage_core::imageio::{load_png, save_png};
use mirage_core::oracle::Codec;
use mirage_core::{BoundingBox, DenoiserBackend, EditSession, Image, OracleBackend, RegionInstance};
use mirage_vlm::grammar::Pair;
use mirage_vlm::{decompose, ground, Scene};

use crate::clients::{make_client, Role};
use crate::config::{BackendChoice, RunConfig};

/// Instantiates the configured backend and returns it with its materialized
/// factors written back into `cfg`.
pub fn open_backend(cfg: &mut RunConfig) -> Result<Box<dyn DenoiserBackend<f64>>> {
    match &cfg.backend {
        BackendChoice::Oracle => {
            let codec = Codec::from_factor(cfg.vae_factor)?;
            Ok(Box::new(
                OracleBackend::new(codec, cfg.patch).with_commitment_level(cfg.commitment_level),
            ))
        }
        BackendChoice::Bridge { url } => {
            let token = std::env::var(&cfg.bridge_token_env).ok().filter(|t| !t.is_empty());
            let bridge = BridgeBackend::connect(url, token, std::time::Duration::from_secs(cfg.bridge_timeout_s))?;
            let d = DenoiserBackend::<f64>::descriptor(&bridge);
            cfg.vae_factor = d.vae_factor;
            cfg.patch = d.patch;
            Ok(Box::new(bridge))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRetries {
    pub decompose: usize,
    pub ground: Vec<usize>,
}

/// `report.json`: what was parsed and grounded, then the engine's report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub instruction: String,
    pub pairs: Vec<Pair>,
    pub grounded_boxes: Vec<BoundingBox>,
    pub client_retries: ClientRetries,
    #[serde(flatten)]
    pub run: RunReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceTile {
    pub index: usize,
    pub s: f64,
    pub phase: Phase,
    pub fused: String,
    pub reference: String,
    pub branch_tokens: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceManifest {
    pub rho: f64,
    pub strategy: mirage_core::Strategy,
    pub tiles: Vec<TraceTile>,
}

pub struct EditOutput {
    pub image_path: PathBuf,
    pub image: Image<f64>,
    pub report: EditReport,
}

/// An instruction made only of `noop` clauses edits nothing and skips parsing.
fn is_noop(instruction: &str) -> bool {
    instruction
        .split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .all(|c| c.eq_ignore_ascii_case("noop"))
}

/// Parses, grounds, runs the engine and writes `output.png`, `report.json`,
/// `config.json` and, if enabled, the trace under `cfg.out`.
pub fn cmd_edit(image_path: &Path, instruction: &str, cfg: &RunConfig) -> Result<EditOutput> {
    let total = Instant::now();
    let mut cfg = cfg.clone();
    cfg.validate().context("config")?;
    let reference: Image<f64> = load_png(image_path).with_context(|| format!("load: {}", image_path.display()))?;
    let backend = open_backend(&mut cfg).context("backend")?;

    let parse_started = Instant::now();
    let (pairs, decompose_retries) = if is_noop(instruction) {
        (Vec::new(), 0)
    } else {
        let parser = make_client(&cfg, Role::Parser, None).context("parser client")?;
        let d = decompose(instruction, parser.as_ref(), &cfg.parser).context("decompose")?;
        (d.value.pairs.clone(), d.retries())
    };
    let parse_s = parse_started.elapsed().as_secs_f64();

    let detect_started = Instant::now();
    let sidecar = Scene::sidecar_path(image_path);
    let scene = if sidecar.exists() { Some(Scene::load(&sidecar).context("scene sidecar")?) } else { None };
    let grounder = make_client(&cfg, Role::Grounder, scene).context("grounder client")?;
    let mut boxes = Vec::new();
    let mut ground_retries = Vec::new();
    for p in &pairs {
        let b = ground(&reference, &p.refer, grounder.as_ref(), &cfg.grounder)
            .with_context(|| format!("ground {:?}", p.refer))?;
        boxes.push(b.value);
        ground_retries.push(b.retries());
    }
    let detect_s = detect_started.elapsed().as_secs_f64();

    let regions = pairs
        .iter()
        .zip(&boxes)
        .map(|(p, b)| RegionInstance::build(&reference, &p.refer, &p.edit, b, cfg.vae_factor, cfg.patch))
        .collect::<mirage_core::Result<Vec<_>>>()
        .context("regions")?;

    let session_cfg = cfg.session();
    let mut session = EditSession::new(reference.clone(), instruction, regions, &session_cfg, backend.as_ref())
        .context("session")?;
    let (image, mut run) = session.run().context("session")?;

    std::fs::create_dir_all(&cfg.out).with_context(|| format!("write: {}", cfg.out.display()))?;
    if cfg.trace {
        write_trace(&session, backend.as_ref(), &cfg.out.join("trace")).context("trace")?;
    }
    let out_png = cfg.out.join("output.png");
    save_png(&image, &out_png).context("write")?;

    run.timings.parse_s = Some(parse_s);
    run.timings.detect_s = Some(detect_s);
    run.timings.total_s = Some(total.elapsed().as_secs_f64());
    let report = EditReport {
        instruction: instruction.to_string(),
        pairs,
        grounded_boxes: boxes,
        client_retries: ClientRetries {
            decompose: decompose_retries,
            ground: ground_retries,
        },
        run,
    };
    write_json(&cfg.out.join("report.json"), &report).context("write")?;
    cfg.image = Some(image_path.to_path_buf());
    cfg.instruction = Some(instruction.to_string());
    write_json(&cfg.out.join("config.json"), &cfg).context("write")?;
    Ok(EditOutput {
        image_path: out_png,
        image,
        report,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One decoded fused latent per grid point, plus the reference latent at the
/// same noise level for comparison.
fn write_trace(session: &EditSession<'_, f64>, backend: &dyn DenoiserBackend<f64>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let entries = session.trace().context("session kept no trace")?;
    let mut tiles = Vec::with_capacity(entries.len());
    for e in entries {
        let fused = format!("fused_{:03}.png", e.index);
        let reference = format!("reference_{:03}.png", e.index);
        save_png(&backend.decode(&e.fused)?, &dir.join(&fused))?;
        save_png(&backend.decode(&session.reference_at(e.s)?)?, &dir.join(&reference))?;
        tiles.push(TraceTile {
            index: e.index,
            s: e.s,
            phase: e.phase,
            fused,
            reference,
            branch_tokens: e.branch_tokens.clone(),
        });
    }
    write_json(
        &dir.join("trace.json"),
        &TraceManifest {
            rho: session.policy().rho(),
            strategy: session.strategy(),
            tiles,
        },
    )
}
