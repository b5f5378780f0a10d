//! PF / Cons / PQ elicitation from a judge model.

use serde::Serialize;
use serde_json::{json, Value};

use mirage_core::imageio::png_base64;
use mirage_core::metrics::{avg_at_k, MaskSet, ScoreTriple};
use mirage_core::Image;

use crate::client::{ChatClient, ChatClientConfig};
use crate::error::Result;
use crate::prompts::PromptId;
use crate::structured::{ask, Ask};

pub const JUDGE_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeOutcome {
    pub scores: ScoreTriple,
    /// Individual `(pf, cons)` evaluations before averaging.
    pub evaluations: Vec<(f64, f64)>,
    pub retries: usize,
}

fn score(v: &Value, key: &str) -> Result<f64, String> {
    let x = v
        .get(key)
        .and_then(|x| x.as_f64().or_else(|| x.as_str().and_then(|s| s.trim().parse().ok())))
        .ok_or_else(|| format!("missing numeric \"{key}\""))?;
    if (0.0..=10.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{key} = {x} outside [0, 10]"))
    }
}

/// The original with every target mask filled with mid gray.
pub fn mask_out(original: &Image<f64>, masks: &MaskSet) -> Result<Image<f64>> {
    Ok(Image::from_fn(original.width(), original.height(), |x, y| {
        if masks.in_union(x, y) {
            [0.5; 3]
        } else {
            original.pixel(x, y)
        }
    })?)
}

/// PF and Cons averaged over `repeats` evaluations of (masked original,
/// edited); PQ from a single (original, edited) evaluation.
pub fn judge_scores<C: ChatClient + ?Sized>(
    original: &Image<f64>,
    masked_original: &Image<f64>,
    edited: &Image<f64>,
    instruction: &str,
    client: &C,
    config: &ChatClientConfig,
    repeats: usize,
) -> Result<JudgeOutcome> {
    let edited_png = png_base64(edited)?;
    let masked_png = png_base64(masked_original)?;
    let mut evaluations = Vec::with_capacity(repeats);
    let mut retries = 0;
    for i in 0..repeats {
        let r = ask(
            client,
            config,
            Ask {
                stage: "judge_pf_cons",
                prompt: PromptId::JudgePfCons,
                input: json!({ "instruction": instruction, "evaluation": i }),
                images: vec![masked_png.clone(), edited_png.clone()],
                schema: r#"{"pf": <0-10>, "cons": <0-10>}"#,
            },
            |v| Ok((score(&v, "pf")?, score(&v, "cons")?)),
        )?;
        retries += r.retries();
        evaluations.push(r.value);
    }
    let pq = ask(
        client,
        config,
        Ask {
            stage: "judge_pq",
            prompt: PromptId::JudgePq,
            input: json!({ "instruction": instruction }),
            images: vec![png_base64(original)?, edited_png],
            schema: r#"{"pq": <0-10>}"#,
        },
        |v| score(&v, "pq"),
    )?;
    retries += pq.retries();
    let triples: Vec<ScoreTriple> = evaluations
        .iter()
        .map(|&(pf, cons)| ScoreTriple { pf, cons, pq: pq.value })
        .collect();
    Ok(JudgeOutcome {
        scores: avg_at_k(&triples, repeats)?,
        evaluations,
        retries,
    })
}
