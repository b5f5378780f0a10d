use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mirage_cli::config::{BackendChoice, MockMode, RunConfig};
use mirage_cli::{cmd_bench_build, cmd_edit, cmd_eval, cmd_inspect, exit};
use mirage_core::bridge::{run_conformance, BridgeBackend};
use mirage_core::Strategy;
use mirage_vlm::bench::BenchConfig;
use mirage_vlm::Scene;

#[derive(Parser)]
#[command(name = "mirage", version, about = "Multi-instance regional image editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `oracle` or a bridge URL.
    #[arg(long)]
    backend: Option<BackendChoice>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vae_factor: Option<u32>,
    #[arg(long)]
    patch: Option<u32>,
    /// Keep per-step latents for `inspect`.
    #[arg(long)]
    trace: bool,
    /// Offline chat clients; with a directory, scripted transcripts from it.
    #[arg(long, num_args = 0..=1, value_name = "TRANSCRIPT_DIR")]
    mock: Option<Option<PathBuf>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(b) = &self.backend {
            cfg.backend = b.clone();
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.vae_factor {
            cfg.vae_factor = v;
        }
        if let Some(v) = self.patch {
            cfg.patch = v;
        }
        if self.trace {
            cfg.trace = true;
        }
        match &self.mock {
            Some(None) => cfg.mock = MockMode::Stub,
            Some(Some(dir)) => cfg.mock = MockMode::Transcripts { dir: dir.clone() },
            None => {}
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Edit one image with a multi-instance instruction.
    Edit {
        /// Input PNG; defaults to `image` from --config.
        image: Option<PathBuf>,
        /// Defaults to `instruction` from --config.
        instruction: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Background metrics (and optional judge scores) over a benchmark.
    Eval {
        manifest_dir: PathBuf,
        results_dir: PathBuf,
        /// Elicit PF/Cons/PQ from the judge client.
        #[arg(long)]
        judge: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Generate benchmark samples.
    BenchBuild {
        #[arg(long, short)]
        n: usize,
        #[arg(long, default_value_t = BenchConfig::default().resample_budget)]
        resample_budget: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Contact sheet of a traced run.
    Inspect { run_dir: PathBuf },
    /// Write a synthetic scene PNG and its object sidecar.
    Scene {
        /// `three-squares`, or a category name for a row scene.
        kind: String,
        /// Row scene instance colours, comma separated.
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<String>,
        /// Row scene extra objects, comma separated.
        #[arg(long, value_delimiter = ',')]
        extras: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a bridge against the wire protocol.
    Conformance {
        url: String,
        #[arg(long, default_value_t = 30)]
        timeout_s: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Edit { image, instruction, common } => {
            let cfg = common.resolve()?;
            let image = image.or(cfg.image.clone()).context("no input image given")?;
            let instruction = instruction.or(cfg.instruction.clone()).context("no instruction given")?;
            let out = cmd_edit(&image, &instruction, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.report)?);
            eprintln!("wrote {}", out.image_path.display());
        }
        Command::Eval { manifest_dir, results_dir, judge, common } => {
            let cfg = common.resolve()?;
            let summary = cmd_eval(&manifest_dir, &results_dir, &cfg, judge)?;
            eprintln!(
                "evaluated {} samples ({} judged) into {}",
                summary.evaluated,
                summary.judged,
                cfg.out.display()
            );
        }
        Command::BenchBuild { n, resample_budget, common } => {
            let cfg = common.resolve()?;
            let bench = BenchConfig {
                resample_budget,
                ..BenchConfig::default()
            };
            let manifests = cmd_bench_build(n, &cfg, &bench)?;
            for m in &manifests {
                println!("{}\t{}\t{} instances", m.id, m.pair.category, m.instance_count);
            }
        }
        Command::Inspect { run_dir } => {
            let sheet = cmd_inspect(&run_dir)?;
            println!("{}", sheet.path.display());
        }
        Command::Scene { kind, attributes, extras, out } => {
            let scene = if kind == "three-squares" {
                Scene::three_squares()
            } else {
                Scene::row(&kind, &attributes, &extras)?
            };
            mirage_core::imageio::save_png(&scene.render()?, &out)?;
            scene.save(&Scene::sidecar_path(&out))?;
            println!("{}", out.display());
        }
        Command::Conformance { url, timeout_s } => {
            let token = std::env::var("MIRAGE_BRIDGE_TOKEN").ok().filter(|t| !t.is_empty());
            let bridge = BridgeBackend::connect(&url, token, Duration::from_secs(timeout_s))?;
            let checks = run_conformance(&bridge);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(exit::ExternalFailure(format!("{failed} conformance checks failed")).into());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit::exit_code(&e));
    }
}
