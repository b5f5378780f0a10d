//! Versioned prompt assets. Their hashes are pinned in tests so that any
//! wording change is a deliberate, visible edit.

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptId {
    Decompose,
    Ground,
    Repair,
    BenchPairs,
    BenchDedup,
    BenchDescription,
    BenchVerify,
    BenchInstructions,
    JudgePfCons,
    JudgePq,
}

impl PromptId {
    pub const ALL: [PromptId; 10] = [
        Self::Decompose,
        Self::Ground,
        Self::Repair,
        Self::BenchPairs,
        Self::BenchDedup,
        Self::BenchDescription,
        Self::BenchVerify,
        Self::BenchInstructions,
        Self::JudgePfCons,
        Self::JudgePq,
    ];

    /// Task marker on the first line of the asset.
    pub fn task(self) -> &'static str {
        match self {
            Self::Decompose => "decompose",
            Self::Ground => "ground",
            Self::Repair => "repair",
            Self::BenchPairs => "bench_pairs",
            Self::BenchDedup => "bench_dedup",
            Self::BenchDescription => "bench_description",
            Self::BenchVerify => "bench_verify",
            Self::BenchInstructions => "bench_instructions",
            Self::JudgePfCons => "judge_pf_cons",
            Self::JudgePq => "judge_pq",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Self::Decompose => include_str!("../prompts/decompose.v1.txt"),
            Self::Ground => include_str!("../prompts/ground.v1.txt"),
            Self::Repair => include_str!("../prompts/repair.v1.txt"),
            Self::BenchPairs => include_str!("../prompts/bench_pairs.v1.txt"),
            Self::BenchDedup => include_str!("../prompts/bench_dedup.v1.txt"),
            Self::BenchDescription => include_str!("../prompts/bench_description.v1.txt"),
            Self::BenchVerify => include_str!("../prompts/bench_verify.v1.txt"),
            Self::BenchInstructions => include_str!("../prompts/bench_instructions.v1.txt"),
            Self::JudgePfCons => include_str!("../prompts/judge_pf_cons.v1.txt"),
            Self::JudgePq => include_str!("../prompts/judge_pq.v1.txt"),
        }
    }

    pub fn version(self) -> u32 {
        1
    }

    pub fn sha256(self) -> String {
        Sha256::digest(self.text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn from_task(task: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.task() == task)
    }
}

pub const INPUT_MARKER: &str = "\nINPUT:\n";

/// Prompt text followed by the JSON input block.
pub fn render(id: PromptId, input: &serde_json::Value) -> String {
    format!("{}{INPUT_MARKER}{input}", id.text().trim_end())
}

/// Recovers `(task, input)` from a rendered prompt.
pub fn parse_rendered(text: &str) -> Option<(PromptId, serde_json::Value)> {
    let task = text
        .lines()
        .find_map(|l| l.strip_prefix("TASK: "))
        .and_then(|t| PromptId::from_task(t.trim()))?;
    let (_, input) = text.rsplit_once(INPUT_MARKER)?;
    let input = serde_json::from_str(input.trim()).ok()?;
    Some((task, input))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_asset_carries_its_marker() {
        for p in PromptId::ALL {
            let first = p.text().lines().next().unwrap();
            assert_eq!(first, format!("TASK: {}", p.task()));
            assert!(p.text().contains(&format!("VERSION: {}", p.version())));
        }
    }

    #[test]
    fn render_roundtrip() {
        let input = serde_json::json!({ "instruction": "remove the left cup" });
        let (id, back) = parse_rendered(&render(PromptId::Decompose, &input)).unwrap();
        assert_eq!(id, PromptId::Decompose);
        assert_eq!(back, input);
    }
}
