//! Benchmark construction: unique (category, scene) pairs, verified
//! descriptions, five bound instructions per sample, and a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mirage_core::imageio::{save_mask, save_png};
use mirage_core::{BoundingBox, PixelMask};

use crate::client::{ChatClient, ChatClientConfig, Sampling};
use crate::decompose::decompose;
use crate::error::{Result, VlmError};
use crate::grammar::{parse_referent, resolve};
use crate::prompts::PromptId;
use crate::scene::{Scene, ATTRIBUTE_COLORS};
use crate::structured::{ask, Ask};

pub const INSTRUCTIONS_PER_SAMPLE: usize = 5;
pub const MAX_REFINEMENT_ROUNDS: usize = 4;
pub const EDIT_TYPES: [&str; 5] = [
    "addition",
    "removal",
    "replacement",
    "color modification",
    "material modification",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Regenerations allowed while looking for one unique pair.
    pub resample_budget: usize,
    /// Times a sample may restart after its description fails every round.
    pub sample_restarts: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resample_budget: 8,
            sample_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenePair {
    pub category: String,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub repeated_category: String,
    pub instance_count: usize,
    /// Left-to-right attribute descriptors.
    pub ordered_instances: Vec<String>,
    pub extra_targets: Vec<String>,
}

impl SlotPlan {
    pub fn validate(&self) -> Result<()> {
        if !(3..=5).contains(&self.instance_count) {
            return Err(VlmError::Config(format!("instance_count {} not in 3..=5", self.instance_count)));
        }
        if self.ordered_instances.len() != self.instance_count {
            return Err(VlmError::Config("ordered_instances length differs from instance_count".into()));
        }
        if self.extra_targets.len() > 2 || self.instance_count + self.extra_targets.len() != INSTRUCTIONS_PER_SAMPLE {
            return Err(VlmError::Config(format!(
                "{} instances and {} extras cannot carry {INSTRUCTIONS_PER_SAMPLE} instructions",
                self.instance_count,
                self.extra_targets.len()
            )));
        }
        Ok(())
    }
}

/// Instance counts for `n` samples: half with three, a quarter each with four
/// and five, rounding toward the smaller counts.
pub fn instance_mix(n: usize) -> Vec<usize> {
    let n3 = n.div_ceil(2);
    let n4 = (n - n3).div_ceil(2);
    let n5 = n - n3 - n4;
    [(3, n3), (4, n4), (5, n5)]
        .into_iter()
        .flat_map(|(c, k)| std::iter::repeat_n(c, k))
        .collect()
}

pub fn plan_for(pair: &ScenePair, instance_count: usize) -> SlotPlan {
    let ordered_instances = ATTRIBUTE_COLORS[..instance_count]
        .iter()
        .map(|c| format!("{c} {}", pair.category))
        .collect();
    let extra_targets = crate::mock::STUB_EXTRAS
        .iter()
        .filter(|e| **e != pair.category)
        .take(INSTRUCTIONS_PER_SAMPLE - instance_count)
        .map(|e| e.to_string())
        .collect();
    SlotPlan {
        repeated_category: pair.category.clone(),
        instance_count,
        ordered_instances,
        extra_targets,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupDecision {
    Keep,
    Regenerate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupVerdict {
    pub candidate: usize,
    pub duplicate_of: Option<usize>,
    pub decision: DedupDecision,
}

impl DedupVerdict {
    pub fn new(candidate: usize, duplicate_of: Option<usize>) -> Self {
        let decision = if duplicate_of.is_some() {
            DedupDecision::Regenerate
        } else {
            DedupDecision::Keep
        };
        Self {
            candidate,
            duplicate_of,
            decision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairsOutcome {
    pub pairs: Vec<ScenePair>,
    pub verdicts: Vec<DedupVerdict>,
    /// Sampling used for every generation call, in order.
    pub samplings: Vec<Sampling>,
    pub regenerations: usize,
    pub retries: usize,
}

fn with_sampling(config: &ChatClientConfig, s: Sampling) -> ChatClientConfig {
    ChatClientConfig {
        temperature: s.temperature,
        top_p: s.top_p,
        ..config.clone()
    }
}

fn parse_pair(v: Value) -> Result<ScenePair, String> {
    let p: ScenePair = serde_json::from_value(v).map_err(|e| format!("schema violation: {e}"))?;
    if p.category.trim().is_empty() || p.scene.trim().is_empty() {
        return Err("empty category or scene".into());
    }
    Ok(ScenePair {
        category: p.category.trim().to_lowercase(),
        scene: p.scene.trim().to_string(),
    })
}

/// Generates `n` pairs no judge considers duplicates of each other. After a
/// duplicate the next call climbs one rung of the ladder; after an accepted
/// pair the default sampling is restored.
pub fn bench_generate_pairs<C, J>(
    n: usize,
    existing: &[ScenePair],
    client: &C,
    judge: &J,
    config: &ChatClientConfig,
    bench: &BenchConfig,
) -> Result<PairsOutcome>
where
    C: ChatClient + ?Sized,
    J: ChatClient + ?Sized,
{
    if n == 0 {
        return Err(VlmError::Config("n must be at least 1".into()));
    }
    let mut all: Vec<ScenePair> = existing.to_vec();
    let mut out = PairsOutcome {
        pairs: Vec::new(),
        verdicts: Vec::new(),
        samplings: Vec::new(),
        regenerations: 0,
        retries: 0,
    };
    let mut candidate_id = 0;
    while out.pairs.len() < n {
        let mut rung = 0;
        loop {
            let sampling = config.sampling_for_attempt(rung);
            out.samplings.push(sampling);
            let gen = ask(
                client,
                &with_sampling(config, sampling),
                Ask {
                    stage: "bench_pairs",
                    prompt: PromptId::BenchPairs,
                    input: json!({ "avoid": all }),
                    images: Vec::new(),
                    schema: r#"{"category": "...", "scene": "..."}"#,
                },
                parse_pair,
            )?;
            out.retries += gen.retries();
            let candidate = gen.value;
            let duplicate_of = match all.iter().position(|p| *p == candidate) {
                Some(i) => Some(i),
                None => {
                    let verdict = ask(
                        judge,
                        config,
                        Ask {
                            stage: "bench_dedup",
                            prompt: PromptId::BenchDedup,
                            input: json!({ "existing": all, "candidate": candidate }),
                            images: Vec::new(),
                            schema: r#"{"duplicate_of": <index or null>}"#,
                        },
                        |v| match v.get("duplicate_of") {
                            Some(Value::Null) => Ok(None),
                            Some(x) => x.as_u64().map(|i| Some(i as usize)).ok_or_else(|| format!("bad index {x}")),
                            None => Err("missing \"duplicate_of\"".into()),
                        },
                    )?;
                    out.retries += verdict.retries();
                    verdict.value
                }
            };
            let verdict = DedupVerdict::new(candidate_id, duplicate_of);
            candidate_id += 1;
            let keep = verdict.decision == DedupDecision::Keep;
            out.verdicts.push(verdict);
            if keep {
                all.push(candidate.clone());
                out.pairs.push(candidate);
                break;
            }
            out.regenerations += 1;
            rung += 1;
            if rung > bench.resample_budget {
                return Err(VlmError::Budget {
                    stage: "bench_pairs".into(),
                    cap: bench.resample_budget,
                });
            }
            log::info!("pair candidate rejected as duplicate; resampling (rung {rung})");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    pub description: String,
    pub pass: bool,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DescriptionOutcome {
    Accepted { text: String, rounds: Vec<Round> },
    /// Still failing after every refinement round; restart the sample.
    Regenerate { rounds: Vec<Round> },
}

/// Round 0 writes the description; up to four refinement rounds fix the
/// issues the judge reports.
pub fn bench_generate_description<C, J>(
    pair: &ScenePair,
    plan: &SlotPlan,
    accepted: &[String],
    client: &C,
    judge: &J,
    config: &ChatClientConfig,
) -> Result<(DescriptionOutcome, usize)>
where
    C: ChatClient + ?Sized,
    J: ChatClient + ?Sized,
{
    let mut rounds = Vec::new();
    let mut retries = 0;
    let mut previous: Option<(String, Vec<String>)> = None;
    for round in 0..=MAX_REFINEMENT_ROUNDS {
        let mut input = json!({ "pair": pair, "plan": plan });
        if let Some((text, issues)) = &previous {
            input["previous"] = json!(text);
            input["issues"] = json!(issues);
        }
        let d = ask(
            client,
            config,
            Ask {
                stage: "bench_description",
                prompt: PromptId::BenchDescription,
                input,
                images: Vec::new(),
                schema: r#"{"description": "..."}"#,
            },
            |v| {
                v.get("description")
                    .and_then(Value::as_str)
                    .filter(|s| !s.trim().is_empty())
                    .map(str::to_string)
                    .ok_or_else(|| "missing \"description\"".into())
            },
        )?;
        retries += d.retries();
        let check = ask(
            judge,
            config,
            Ask {
                stage: "bench_verify",
                prompt: PromptId::BenchVerify,
                input: json!({ "plan": plan, "description": d.value, "accepted": accepted }),
                images: Vec::new(),
                schema: r#"{"pass": true|false, "issues": ["..."]}"#,
            },
            |v| {
                let pass = v.get("pass").and_then(Value::as_bool).ok_or("missing \"pass\"")?;
                let issues: Vec<String> = v
                    .get("issues")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                    .unwrap_or_default();
                Ok((pass, issues))
            },
        )?;
        retries += check.retries();
        let (pass, issues) = check.value;
        rounds.push(Round {
            round,
            description: d.value.clone(),
            pass,
            issues: issues.clone(),
        });
        if pass {
            return Ok((DescriptionOutcome::Accepted { text: d.value, rounds }, retries));
        }
        previous = Some((d.value, issues));
    }
    Ok((DescriptionOutcome::Regenerate { rounds }, retries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchInstruction {
    pub instruction: String,
    pub edit_type: String,
    pub target: String,
}

fn parse_instructions(v: Value) -> Result<Vec<BenchInstruction>, String> {
    let list: Vec<BenchInstruction> = serde_json::from_value(v).map_err(|e| format!("schema violation: {e}"))?;
    if list.len() != INSTRUCTIONS_PER_SAMPLE {
        return Err(format!("expected exactly {INSTRUCTIONS_PER_SAMPLE} instructions, got {}", list.len()));
    }
    for (i, ins) in list.iter().enumerate() {
        if !EDIT_TYPES.contains(&ins.edit_type.as_str()) {
            return Err(format!("instruction {i}: unknown edit type {:?}", ins.edit_type));
        }
        if ins.instruction.trim().is_empty() {
            return Err(format!("instruction {i} is empty"));
        }
    }
    Ok(list)
}

/// One instruction with its extracted referent and the scene object it binds to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bound {
    pub instruction: BenchInstruction,
    pub referent: String,
    pub object: usize,
}

/// Five instructions; the first `instance_count` bind left to right to the
/// repeated instances and the rest to the extras, checked against `scene`.
pub fn bench_generate_instructions<C: ChatClient + ?Sized>(
    plan: &SlotPlan,
    scene: &Scene,
    client: &C,
    config: &ChatClientConfig,
) -> Result<(Vec<Bound>, usize)> {
    plan.validate()?;
    let image = scene.render()?;
    let listed = ask(
        client,
        config,
        Ask {
            stage: "bench_instructions",
            prompt: PromptId::BenchInstructions,
            input: json!({ "plan": plan }),
            images: vec![mirage_core::imageio::png_base64(&image)?],
            schema: r#"[{"instruction": "...", "edit_type": "...", "target": "..."}] (exactly 5)"#,
        },
        parse_instructions,
    )?;
    let mut retries = listed.retries();
    let candidates = scene.candidates();
    let mut bound = Vec::new();
    for (i, ins) in listed.value.into_iter().enumerate() {
        let d = decompose(&ins.instruction, client, config)?;
        retries += d.retries();
        let referent = d.value.pairs[0].refer.clone();
        // Instances come first in the scene, left to right, then extras.
        let expected = i;
        let got = parse_referent(&referent).and_then(|r| resolve(&r, &candidates));
        if got != Some(expected) {
            return Err(VlmError::Unresolved(format!(
                "{referent} (instruction {i} should bind to object {expected}, got {got:?})"
            )));
        }
        bound.push(Bound {
            instruction: ins,
            referent,
            object: expected,
        });
    }
    Ok((bound, retries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Review {
    #[default]
    Pending,
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub retries: usize,
    pub regenerations: usize,
    pub rounds: Vec<Round>,
    pub prompt_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub pair: ScenePair,
    pub description: String,
    pub image_path: String,
    pub instance_count: usize,
    pub instructions: Vec<String>,
    pub edit_types: Vec<String>,
    pub referents: Vec<String>,
    pub boxes: Vec<BoundingBox>,
    pub mask_paths: Vec<String>,
    pub provenance: Provenance,
    pub review: Review,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))
    }
}

fn io<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> VlmError + '_ {
    move |e| VlmError::Io(format!("{}: {e}", path.display()))
}

fn hashes(ids: &[PromptId]) -> BTreeMap<String, String> {
    ids.iter().map(|p| (p.task().to_string(), p.sha256())).collect()
}

/// Builds `n` samples under `out_dir/sample_XXX/` and returns their manifests.
pub fn build_bench<C, J>(
    n: usize,
    out_dir: &Path,
    client: &C,
    judge: &J,
    config: &ChatClientConfig,
    bench: &BenchConfig,
) -> Result<Vec<Manifest>>
where
    C: ChatClient + ?Sized,
    J: ChatClient + ?Sized,
{
    let counts = instance_mix(n);
    let first = bench_generate_pairs(n, &[], client, judge, config, bench)?;
    let mut pairs = first.pairs.clone();
    let mut accepted: Vec<String> = Vec::new();
    let mut manifests = Vec::new();
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;

    for (i, &count) in counts.iter().enumerate() {
        let mut retries = if i == 0 { first.retries } else { 0 };
        let mut regenerations = if i == 0 { first.regenerations } else { 0 };
        let mut pair = pairs[i].clone();
        let mut restarts = 0;
        let (description, rounds) = loop {
            let plan = plan_for(&pair, count);
            let (outcome, r) = bench_generate_description(&pair, &plan, &accepted, client, judge, config)?;
            retries += r;
            match outcome {
                DescriptionOutcome::Accepted { text, rounds } => break (text, rounds),
                DescriptionOutcome::Regenerate { .. } => {
                    restarts += 1;
                    regenerations += 1;
                    if restarts > bench.sample_restarts {
                        return Err(VlmError::Budget {
                            stage: "bench_description".into(),
                            cap: bench.sample_restarts,
                        });
                    }
                    let fresh = bench_generate_pairs(1, &pairs, client, judge, config, bench)?;
                    retries += fresh.retries;
                    pair = fresh.pairs[0].clone();
                    pairs[i] = pair.clone();
                }
            }
        };
        accepted.push(description.clone());

        let plan = plan_for(&pair, count);
        let scene = Scene::row(&pair.category, &plan.ordered_instances, &plan.extra_targets)?;
        let (bound, r) = bench_generate_instructions(&plan, &scene, client, config)?;
        retries += r;

        let id = format!("sample_{i:03}");
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let image = scene.render()?;
        save_png(&image, &dir.join("image.png"))?;
        scene.save(&dir.join("image.scene.json"))?;
        let mut mask_paths = Vec::new();
        let mut boxes = Vec::new();
        for (k, b) in bound.iter().enumerate() {
            let bbox = scene.objects[b.object].bbox;
            let name = format!("mask_{k}.png");
            save_mask(&PixelMask::from_box(scene.width, scene.height, &bbox)?, &dir.join(&name))?;
            mask_paths.push(name);
            boxes.push(bbox);
        }
        let manifest = Manifest {
            id: id.clone(),
            pair,
            description,
            image_path: "image.png".into(),
            instance_count: count,
            instructions: bound.iter().map(|b| b.instruction.instruction.clone()).collect(),
            edit_types: bound.iter().map(|b| b.instruction.edit_type.clone()).collect(),
            referents: bound.iter().map(|b| b.referent.clone()).collect(),
            boxes,
            mask_paths,
            provenance: Provenance {
                retries,
                regenerations,
                rounds,
                prompt_hashes: hashes(&[
                    PromptId::BenchPairs,
                    PromptId::BenchDedup,
                    PromptId::BenchDescription,
                    PromptId::BenchVerify,
                    PromptId::BenchInstructions,
                    PromptId::Decompose,
                    PromptId::Repair,
                ]),
            },
            review: Review::Pending,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| VlmError::Io(e.to_string()))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).map_err(io(&path))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_policy() {
        let hist = |n: usize| {
            let m = instance_mix(n);
            [3, 4, 5].map(|c| m.iter().filter(|x| **x == c).count())
        };
        assert_eq!(hist(4), [2, 1, 1]);
        assert_eq!(hist(8), [4, 2, 2]);
        assert_eq!(hist(1), [1, 0, 0]);
        assert_eq!(hist(3), [2, 1, 0]);
        for n in 1..50 {
            assert_eq!(instance_mix(n).len(), n);
        }
    }

    #[test]
    fn plans_are_valid() {
        let pair = ScenePair {
            category: "lamp".into(),
            scene: "a store".into(),
        };
        for c in 3..=5 {
            let p = plan_for(&pair, c);
            p.validate().unwrap();
            assert!(!p.extra_targets.contains(&"lamp".to_string()));
        }
    }

    #[test]
    fn verdict_invariant() {
        assert_eq!(DedupVerdict::new(0, None).decision, DedupDecision::Keep);
        assert_eq!(DedupVerdict::new(1, Some(0)).decision, DedupDecision::Regenerate);
    }
}
