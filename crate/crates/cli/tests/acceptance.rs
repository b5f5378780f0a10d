//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fail.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mirage_cli::config::{MockMode, RunConfig};
use mirage_cli::{cmd_bench_build, cmd_edit};
use mirage_core::fusion::TokenReport;
use mirage_core::imageio::{decode_png, load_png};
use mirage_core::metrics::{background_metrics, overall_score};
use mirage_core::scheduler::region_phase_steps;
use mirage_core::{BoundingBox, Image, MaskSet, PixelMask, ScoreTriple, Strategy, SwitchPolicy, TimeGrid};
use mirage_vlm::bench::BenchConfig;
use mirage_vlm::client::{ChatClientConfig, Sampling};
use mirage_vlm::grammar::{stub_decompose, Decomposition, Pair};
use mirage_vlm::{decompose, Scene, ScriptedChatClient, VlmError};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const TWO_CLAUSE: &str = "set_color the leftmost square to (1,0,0); set_color the rightmost square to (0,0,1)";
const RED: [f64; 3] = [1.0, 0.0, 0.0];
const BLUE: [f64; 3] = [0.0, 0.0, 1.0];

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    image: PathBuf,
    reference: Image<f64>,
    /// Ground-truth boxes of the left and right squares.
    edited: [BoundingBox; 2],
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let scene = Scene::three_squares();
    let image = root.join("squares.png");
    mirage_core::imageio::save_png(&scene.render().unwrap(), &image).unwrap();
    scene.save(&Scene::sidecar_path(&image)).unwrap();
    let reference = load_png(&image).unwrap();
    Fixture {
        _dir: dir,
        root,
        image,
        reference,
        edited: [scene.objects[0].bbox, scene.objects[2].bbox],
    }
}

fn config(out: &Path, rho: f64, strategy: Strategy, seed: u64) -> RunConfig {
    RunConfig {
        steps: 50,
        rho,
        strategy,
        seed,
        vae_factor: 1,
        patch: 2,
        mock: MockMode::Stub,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn inside(boxes: &[BoundingBox], x: u32, y: u32) -> bool {
    boxes.iter().any(|b| x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1)
}

fn background_bits_equal(a: &Image<f64>, b: &Image<f64>, edited: &[BoundingBox]) -> bool {
    (0..a.height()).all(|y| {
        (0..a.width()).all(|x| inside(edited, x, y) || a.pixel(x, y).map(f64::to_bits) == b.pixel(x, y).map(f64::to_bits))
    })
}

fn region_error(img: &Image<f64>, b: &BoundingBox, rgb: [f64; 3]) -> f64 {
    let mut e: f64 = 0.0;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            for (v, t) in img.pixel(x, y).iter().zip(rgb) {
                e = e.max((v - t).abs());
            }
        }
    }
    e
}

fn background_exactness(f: &Fixture) -> Outcome {
    let out = f.root.join("bg");
    let started = Instant::now();
    let run = cmd_edit(&f.image, TWO_CLAUSE, &config(&out, 0.6, Strategy::Both, 0)).map_err(|e| format!("{e:#}"))?;
    let elapsed = started.elapsed().as_secs_f64();
    let boxes: Vec<BoundingBox> = run.report.run.regions.iter().map(|r| r.bbox).collect();
    if boxes != f.edited {
        return Err(format!("regions {boxes:?} differ from ground truth {:?}", f.edited));
    }
    let pre = background_bits_equal(&f.reference, &run.image, &f.edited);
    let input = decode_png::<f64>(&std::fs::read(&f.image).unwrap()).unwrap();
    let written = decode_png::<f64>(&std::fs::read(&run.image_path).unwrap()).unwrap();
    let in_rgb = mirage_core::imageio::to_rgb8(&input);
    let out_rgb = mirage_core::imageio::to_rgb8(&written);
    let post = (0..64u32).all(|y| (0..64u32).all(|x| inside(&f.edited, x, y) || in_rgb.get_pixel(x, y) == out_rgb.get_pixel(x, y)));
    check(
        pre && post && elapsed < 1.0,
        format!("K=2, T=50, rho=0.6: background bit-exact pre-quantization and byte-exact in PNG, {elapsed:.3} s"),
        format!("pre {pre}, post {post}, runtime {elapsed:.3} s"),
    )
}

fn regional_fidelity(f: &Fixture) -> Outcome {
    let started = Instant::now();
    let run = cmd_edit(&f.image, TWO_CLAUSE, &config(&f.root.join("fid"), 0.6, Strategy::Both, 0)).map_err(|e| format!("{e:#}"))?;
    let elapsed = started.elapsed().as_secs_f64();
    let e = region_error(&run.image, &f.edited[0], RED).max(region_error(&run.image, &f.edited[1], BLUE));
    check(
        e <= 1e-9 && elapsed < 1.0,
        format!("max-abs error inside masks {e:.3e} <= 1e-9, {elapsed:.3} s"),
        format!("max-abs error {e:.3e}, runtime {elapsed:.3} s"),
    )
}

fn realized(f: &Fixture, img: &Image<f64>) -> [bool; 2] {
    [
        region_error(img, &f.edited[0], RED) <= 1e-9,
        region_error(img, &f.edited[1], BLUE) <= 1e-9,
    ]
}

fn baseline_over_editing(f: &Fixture) -> Outcome {
    let global = cmd_edit(&f.image, TWO_CLAUSE, &config(&f.root.join("base"), 1.0, Strategy::NoBackground, 0))
        .map_err(|e| format!("{e:#}"))?;
    let ours = cmd_edit(&f.image, TWO_CLAUSE, &config(&f.root.join("ours"), 0.6, Strategy::Both, 0))
        .map_err(|e| format!("{e:#}"))?;
    let g = realized(f, &global.image);
    let m = realized(f, &ours.image);
    let g_count = g.iter().filter(|r| **r).count();
    let m_count = m.iter().filter(|r| **r).count();
    check(
        g_count == 1 && m_count == 2 && global.report.run.region_phase_steps == 0,
        format!("pure global (rho=1, no_background) realizes {g_count} of 2 clauses; defaults realize {m_count}"),
        format!("global realized {g:?}, defaults realized {m:?}"),
    )
}

fn overall_arithmetic() -> Outcome {
    let cases = [((8.086, 9.006, 8.808), 8.439), ((6.046, 8.646, 8.988), 7.372)];
    let mut detail = Vec::new();
    for ((pf, cons, pq), want) in cases {
        let got = overall_score(&ScoreTriple::new(pf, cons, pq).map_err(|e| e.to_string())?);
        if (got - want).abs() > 5e-4 {
            return Err(format!("({pf}, {cons}, {pq}) -> {got:.6}, expected {want} +/- 5e-4"));
        }
        detail.push(format!("{got:.4}"));
    }
    Ok(format!("overall = {} within 5e-4", detail.join(", ")))
}

fn rho_accounting(f: &Fixture) -> Outcome {
    let rhos = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let grid = TimeGrid::uniform(50).map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    for (i, rho) in rhos.into_iter().enumerate() {
        let planned = region_phase_steps(&grid, SwitchPolicy::new(rho).map_err(|e| e.to_string())?);
        let run = cmd_edit(&f.image, TWO_CLAUSE, &config(&f.root.join(format!("rho{i}")), rho, Strategy::Both, 0))
            .map_err(|e| format!("{e:#}"))?;
        if run.report.run.region_phase_steps != planned || run.report.run.global_phase_steps != 50 - planned {
            return Err(format!("rho {rho}: run reports {} region steps, plan {planned}", run.report.run.region_phase_steps));
        }
        counts.push(planned);
    }
    let mut sorted = counts.clone();
    sorted.sort();
    check(
        counts == [50, 40, 30, 20, 10, 0] && sorted == [0, 10, 20, 30, 40, 50],
        format!("T=50, rho 0..1 -> region-phase steps {counts:?}"),
        format!("region-phase steps {counts:?}"),
    )
}

fn token_savings(f: &Fixture) -> Outcome {
    let b = BoundingBox::new(384, 384, 640, 640).unwrap();
    let t = TokenReport::plan(1024, 1024, &[b], 8, 2, 20, 30, Strategy::Both);
    if t.region_phase != 20 * 256 || t.baseline_region_phase != 20 * 4096 {
        return Err(format!("{} vs {}", t.region_phase, t.baseline_region_phase));
    }
    // Sub-canvas region sets on a few canvases and factors.
    for (w, h, f_, p) in [(64u32, 64u32, 1u32, 2u32), (128, 96, 2, 2), (1024, 768, 8, 2)] {
        let m = f_ * p;
        let (cw, ch) = (w / m, h / m);
        for k in 1..=3u32 {
            let boxes: Vec<BoundingBox> = (0..k)
                .map(|i| BoundingBox::new(i * m, 0, (i + 1) * m, ch.min(2 + i) * m).unwrap())
                .collect();
            let area: u32 = boxes.iter().map(|b| b.width() * b.height()).sum();
            assert!(area < w * h && k < cw);
            let t = TokenReport::plan(w, h, &boxes, f_, p, 10, 5, Strategy::Both);
            if t.region_phase >= t.baseline_region_phase {
                return Err(format!("{w}x{h} f={f_} p={p} K={k}: {} >= {}", t.region_phase, t.baseline_region_phase));
            }
        }
    }
    let run = cmd_edit(&f.image, TWO_CLAUSE, &config(&f.root.join("tok"), 0.6, Strategy::Both, 0)).map_err(|e| format!("{e:#}"))?;
    let r = &run.report.run.tokens;
    check(
        r.region_phase < r.baseline_region_phase,
        format!("1024^2 with one 256^2 region: 20*256 = {} < 20*4096 = {}; run report {} < {}", 20 * 256, 20 * 4096, r.region_phase, r.baseline_region_phase),
        format!("run report {} >= {}", r.region_phase, r.baseline_region_phase),
    )
}

fn strategy_ablation(f: &Fixture) -> Outcome {
    let mut lines = Vec::new();
    for (name, strategy) in [("both", Strategy::Both), ("no_target", Strategy::NoTarget), ("no_background", Strategy::NoBackground)] {
        let run = cmd_edit(&f.image, TWO_CLAUSE, &config(&f.root.join(name), 0.6, strategy, 11)).map_err(|e| format!("{e:#}"))?;
        let fidelity = realized(f, &run.image) == [true, true];
        let background = background_bits_equal(&f.reference, &run.image, &f.edited);
        let ok = match strategy {
            Strategy::Both => fidelity && background,
            Strategy::NoTarget => !fidelity && background,
            Strategy::NoBackground => fidelity,
        };
        if !ok {
            return Err(format!("{name}: fidelity {fidelity}, background {background}"));
        }
        lines.push(format!("{name} fidelity={fidelity} background={background}"));
    }
    Ok(lines.join("; "))
}

fn metrics_suite() -> Outcome {
    let img = Scene::three_squares().render().map_err(|e| e.to_string())?;
    let same = background_metrics(&img, &img, &MaskSet::empty(64, 64), "all").map_err(|e| e.to_string())?;
    if !(same.mse == 0.0 && same.psnr == 100.0 && same.ssim == Some(1.0)) {
        return Err(format!("identical: {same:?}"));
    }
    let flat = Image::filled(32, 32, [0.5; 3]).unwrap();
    let shifted = Image::filled(32, 32, [0.6; 3]).unwrap();
    let s = background_metrics(&flat, &shifted, &MaskSet::empty(32, 32), "all").map_err(|e| e.to_string())?;
    if (s.psnr - 20.0).abs() > 1e-9 || (s.mse - 0.01).abs() > 1e-12 {
        return Err(format!("shift: psnr {} mse {}", s.psnr, s.mse));
    }
    let b = Scene::three_squares().objects[1].bbox;
    let masks = MaskSet::new(64, 64, vec![PixelMask::from_box(64, 64, &b).unwrap()]).unwrap();
    let mut edited = img.clone();
    edited.paste(&Image::filled(b.width(), b.height(), [1.0, 0.0, 0.0]).unwrap(), b.x0, b.y0).unwrap();
    let inside = background_metrics(&img, &edited, &masks, "bg").map_err(|e| e.to_string())?;
    let reference = background_metrics(&img, &img, &masks, "bg").map_err(|e| e.to_string())?;
    check(
        inside == reference && inside.psnr == 100.0 && inside.mse == 0.0,
        format!("identical -> mse 0, psnr 100, ssim 1; +0.1 shift -> {:.9} dB; masked edit -> identical-image values", s.psnr),
        format!("masked edit {inside:?} vs {reference:?}"),
    )
}

#[derive(serde::Deserialize)]
struct Case {
    instruction: String,
    pairs: Vec<Pair>,
}

fn parser_properties() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../vlm/tests/data/grammar_corpus.json");
    let corpus: Vec<Case> = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if corpus.len() != 50 {
        return Err(format!("corpus has {} cases", corpus.len()));
    }
    let cfg = ChatClientConfig::default();
    for c in &corpus {
        let stub = stub_decompose(&c.instruction).map_err(|e| format!("{}: {e}", c.instruction))?;
        let reply = serde_json::to_string(&Decomposition { pairs: c.pairs.clone() }).unwrap();
        let mock = ScriptedChatClient::new([reply]);
        let mocked = decompose(&c.instruction, &mock, &cfg).map_err(|e| e.to_string())?.value;
        if stub.pairs != c.pairs || mocked != stub {
            return Err(format!("disagreement on {:?}", c.instruction));
        }
        if !stub.pairs.iter().all(|p| c.instruction.contains(&p.refer)) {
            return Err(format!("referent not a substring in {:?}", c.instruction));
        }
    }
    for max_retries in 0..4usize {
        let cfg = ChatClientConfig {
            max_retries,
            escalation: (0..max_retries).map(|i| Sampling { temperature: 0.4 + 0.2 * i as f64, top_p: 0.95 }).collect(),
            ..ChatClientConfig::default()
        };
        let mock = ScriptedChatClient::new(std::iter::repeat_n("not json", 10));
        match decompose("remove the left cat", &mock, &cfg) {
            Err(VlmError::Exhausted { attempts, .. }) if attempts == max_retries + 1 && mock.requests().len() == max_retries + 1 => {}
            other => return Err(format!("max_retries {max_retries}: {other:?}")),
        }
    }
    Ok("50-case corpus: stub == mock == constructed pairs, referents verbatim; retries capped at max_retries for 0..=3".into())
}

fn bench_policy(f: &Fixture) -> Outcome {
    let out = f.root.join("bench");
    let cfg = RunConfig {
        mock: MockMode::Stub,
        out: out.clone(),
        ..RunConfig::default()
    };
    let manifests = cmd_bench_build(8, &cfg, &BenchConfig::default()).map_err(|e| format!("{e:#}"))?;
    let hist = [3, 4, 5].map(|c| manifests.iter().filter(|m| m.instance_count == c).count());
    for m in &manifests {
        if m.instructions.len() != 5 {
            return Err(format!("{} has {} instructions", m.id, m.instructions.len()));
        }
        let scene = Scene::load(&out.join(&m.id).join("image.scene.json")).map_err(|e| e.to_string())?;
        let mut xs: Vec<u32> = scene.objects.iter().filter(|o| o.category == m.pair.category).map(|o| o.bbox.x0).collect();
        xs.sort();
        if (0..m.instance_count).any(|k| m.boxes[k].x0 != xs[k]) {
            return Err(format!("{}: instructions not bound left to right", m.id));
        }
    }
    check(
        hist == [4, 2, 2],
        "n=8 -> {3:4, 4:2, 5:2}, 5 instructions each, left-to-right binding",
        format!("histogram {hist:?}"),
    )
}

fn without_timings(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn determinism(f: &Fixture) -> Outcome {
    let a = f.root.join("det_a");
    let b = f.root.join("det_b");
    cmd_edit(&f.image, TWO_CLAUSE, &config(&a, 0.6, Strategy::Both, 5)).map_err(|e| format!("{e:#}"))?;
    cmd_edit(&f.image, TWO_CLAUSE, &config(&b, 0.6, Strategy::Both, 5)).map_err(|e| format!("{e:#}"))?;
    let same_png = std::fs::read(a.join("output.png")).unwrap() == std::fs::read(b.join("output.png")).unwrap();
    let same_report = without_timings(&a.join("report.json")) == without_timings(&b.join("report.json"));
    check(
        same_png && same_report,
        "two runs: output.png byte-identical, report.json identical without timings",
        format!("png {same_png}, report {same_report}"),
    )
}

fn main() {
    let f = fixture();
    let criteria: Vec<Criterion<'_>> = vec![
        ("background exactness", Box::new(|| background_exactness(&f))),
        ("regional fidelity", Box::new(|| regional_fidelity(&f))),
        ("baseline over-editing", Box::new(|| baseline_over_editing(&f))),
        ("overall-score arithmetic", Box::new(overall_arithmetic)),
        ("rho-phase accounting", Box::new(|| rho_accounting(&f))),
        ("token savings", Box::new(|| token_savings(&f))),
        ("strategy ablation", Box::new(|| strategy_ablation(&f))),
        ("metrics suite", Box::new(metrics_suite)),
        ("parser properties", Box::new(parser_properties)),
        ("bench policy", Box::new(|| bench_policy(&f))),
        ("determinism", Box::new(|| determinism(&f))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
