use anyhow::{Context, Result};

use mirage_vlm::bench::{build_bench, BenchConfig, Manifest};

use crate::clients::{make_client, Role};
use crate::config::RunConfig;

/// Builds `n` samples under `cfg.out`. The parser client generates and the
/// judge client screens.
pub fn cmd_bench_build(n: usize, cfg: &RunConfig, bench: &BenchConfig) -> Result<Vec<Manifest>> {
    let generator = make_client(cfg, Role::Parser, None).context("generator client")?;
    let judge = make_client(cfg, Role::Judge, None).context("judge client")?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let manifests = build_bench(n, &cfg.out, generator.as_ref(), judge.as_ref(), &cfg.parser, bench)
        .context("bench")?;
    Ok(manifests)
}
