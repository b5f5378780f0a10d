//! Offline chat clients: a transcript replayer and a deterministic stub that
//! answers every shipped prompt from its INPUT block.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mirage_core::imageio::image_from_base64;
use mirage_core::Image;

use crate::client::{ChatClient, ChatRequest};
use crate::error::{Result, VlmError};
use crate::grammar::{parse_referent, resolve, stub_decompose, Candidate, ORDINALS};
use crate::prompts::{parse_rendered, PromptId};
use crate::scene::{detect_components, Scene};

/// Replays canned replies in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedChatClient {
    replies: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<ChatRequest>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptFile {
    Plain(Vec<String>),
    Wrapped { replies: Vec<String> },
}

impl ScriptedChatClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Reads `["reply", ...]` or `{"replies": [...]}`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VlmError::Io(format!("{}: {e}", path.display())))?;
        let file: TranscriptFile =
            serde_json::from_str(&text).map_err(|e| VlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(Self::new(match file {
            TranscriptFile::Plain(r) | TranscriptFile::Wrapped { replies: r } => r,
        }))
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("reply queue poisoned").len()
    }
}

impl ChatClient for ScriptedChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.requests.lock().expect("request log poisoned").push(request.clone());
        self.replies
            .lock()
            .expect("reply queue poisoned")
            .pop_front()
            .ok_or_else(|| VlmError::Transcript("transcript exhausted".into()))
    }
}

/// Knobs for failure-path tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubBehavior {
    pub pf: f64,
    pub cons: f64,
    pub pq: f64,
    /// Dedup judge flags every candidate as a duplicate of entry 0.
    pub always_duplicate: bool,
    /// The first this-many description checks fail.
    pub failing_verifications: usize,
    /// Instructions emitted per bench sample.
    pub instruction_count: usize,
}

impl Default for StubBehavior {
    fn default() -> Self {
        Self {
            pf: 8.0,
            cons: 9.0,
            pq: 8.5,
            always_duplicate: false,
            failing_verifications: 0,
            instruction_count: 5,
        }
    }
}

pub const STUB_PAIRS: [(&str, &str); 12] = [
    ("cup", "a kitchen counter"),
    ("bird", "a telephone wire"),
    ("apple", "a wooden table"),
    ("car", "a parking lot"),
    ("chair", "a classroom"),
    ("bottle", "a bar shelf"),
    ("book", "a library desk"),
    ("lamp", "a furniture store"),
    ("vase", "a window sill"),
    ("boat", "a harbor"),
    ("shoe", "a shop display"),
    ("candle", "a dinner table"),
];

pub const STUB_EXTRAS: [&str; 4] = ["lamp", "plant", "clock", "vase"];

/// Edit templates per edit type: (verb phrase before the referent, text after).
const EDITS: [(&str, &str, &str); 5] = [
    ("color modification", "recolor", " to red"),
    ("removal", "remove", ""),
    ("replacement", "replace", " with a lemon"),
    ("material modification", "make", " out of wood"),
    ("addition", "add a small hat to", ""),
];

/// Answers every shipped prompt deterministically.
#[derive(Debug, Default)]
pub struct StubChatClient {
    behavior: StubBehavior,
    scene: Option<Scene>,
    calls: AtomicUsize,
    verifications: AtomicUsize,
}

impl StubChatClient {
    pub fn new(behavior: StubBehavior) -> Self {
        Self {
            behavior,
            ..Self::default()
        }
    }

    /// Grounds against known objects instead of detecting components.
    pub fn with_scene(mut self, scene: Scene) -> Self {
        self.scene = Some(scene);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn ground(&self, input: &Value, request: &ChatRequest) -> String {
        let expression = input["expression"].as_str().unwrap_or_default();
        let Some(referent) = parse_referent(expression) else {
            return format!("I could not understand the expression {expression:?}.");
        };
        let candidates: Vec<Candidate> = match &self.scene {
            Some(s) => s.candidates(),
            None => {
                let Some(img) = request
                    .images()
                    .next()
                    .and_then(|png| image_from_base64::<f64>(png).ok())
                else {
                    return "No image was attached.".into();
                };
                components(&img)
            }
        };
        match resolve(&referent, &candidates) {
            Some(i) => {
                let b = candidates[i].bbox;
                json!({ "box": [b.x0, b.y0, b.x1, b.y1] }).to_string()
            }
            None => format!("There is no object matching {expression:?}."),
        }
    }

    fn pair(&self, input: &Value) -> String {
        let avoid: Vec<(String, String)> = input["avoid"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|p| Some((p["category"].as_str()?.to_string(), p["scene"].as_str()?.to_string())))
                    .collect()
            })
            .unwrap_or_default();
        STUB_PAIRS
            .iter()
            .find(|(c, s)| !avoid.iter().any(|(ac, as_)| ac == c && as_ == s))
            .or(STUB_PAIRS.first())
            .map(|(c, s)| json!({ "category": c, "scene": s }).to_string())
            .unwrap_or_default()
    }

    fn description(input: &Value) -> String {
        let plan = &input["plan"];
        let category = plan["repeated_category"].as_str().unwrap_or("object");
        let instances: Vec<&str> = plan["ordered_instances"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let extras: Vec<&str> = plan["extra_targets"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let scene = input["pair"]["scene"].as_str().unwrap_or("a plain room");
        let mut text = format!(
            "A photo of {scene} with exactly {} {category}s standing in a row, from left to right: {}.",
            instances.len(),
            instances.join(", ")
        );
        if !extras.is_empty() {
            text.push_str(&format!(" Above the row: {}.", extras.join(" and ")));
        }
        text.push_str(" Soft daylight, flat light-gray background, sharp focus.");
        json!({ "description": text }).to_string()
    }

    fn instructions(&self, input: &Value) -> String {
        let plan = &input["plan"];
        let category = plan["repeated_category"].as_str().unwrap_or("object");
        let count = plan["instance_count"].as_u64().unwrap_or(0) as usize;
        let extras: Vec<&str> = plan["extra_targets"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let mut out = Vec::new();
        for i in 0..self.behavior.instruction_count {
            let (edit_type, verb, rest) = EDITS[i % EDITS.len()];
            let (referent, target) = if i < count {
                (
                    format!("the {} {category} from the left", ORDINALS[i.min(4)]),
                    format!("instance {}", i + 1),
                )
            } else {
                let extra = extras.get(i - count).copied().unwrap_or("lamp");
                (format!("the top {extra}"), extra.to_string())
            };
            out.push(json!({
                "instruction": format!("{verb} {referent}{rest}"),
                "edit_type": edit_type,
                "target": target,
            }));
        }
        Value::Array(out).to_string()
    }

    fn respond(&self, request: &ChatRequest) -> String {
        let Some((task, input)) = parse_rendered(&request.all_text()) else {
            return "I am not sure what you are asking.".into();
        };
        match task {
            PromptId::Decompose => match stub_decompose(input["instruction"].as_str().unwrap_or_default()) {
                Ok(d) => serde_json::to_string(&d).unwrap_or_default(),
                Err(e) => format!("Sorry, I cannot split this instruction: {e}"),
            },
            PromptId::Ground => self.ground(&input, request),
            PromptId::BenchPairs => self.pair(&input),
            PromptId::BenchDedup => {
                let dup = self.behavior.always_duplicate.then_some(0);
                json!({ "duplicate_of": dup }).to_string()
            }
            PromptId::BenchDescription => Self::description(&input),
            PromptId::BenchVerify => {
                let n = self.verifications.fetch_add(1, Ordering::SeqCst);
                if n < self.behavior.failing_verifications {
                    json!({ "pass": false, "issues": ["instance attributes are ambiguous"] }).to_string()
                } else {
                    json!({ "pass": true, "issues": [] }).to_string()
                }
            }
            PromptId::BenchInstructions => self.instructions(&input),
            PromptId::JudgePfCons => json!({ "pf": self.behavior.pf, "cons": self.behavior.cons }).to_string(),
            PromptId::JudgePq => json!({ "pq": self.behavior.pq }).to_string(),
            PromptId::Repair => "{}".into(),
        }
    }
}

fn components(img: &Image<f64>) -> Vec<Candidate> {
    detect_components(img)
        .into_iter()
        .map(|bbox| Candidate { category: None, bbox })
        .collect()
}

impl ChatClient for StubChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.respond(request))
    }
}
