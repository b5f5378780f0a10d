//! Instruction decomposition and referring-expression grounding.

use serde_json::{json, Value};

use mirage_core::imageio::png_base64;
use mirage_core::{BoundingBox, Image};

use crate::client::{ChatClient, ChatClientConfig};
use crate::error::{Result, VlmError};
use crate::grammar::{Decomposition, Pair};
use crate::prompts::PromptId;
use crate::structured::{ask, Ask, Structured};

pub const DECOMPOSITION_SCHEMA: &str = r#"[{"refer": "<verbatim span of the instruction>", "edit": "<non-empty edit>"}, ...]"#;
pub const BOX_SCHEMA: &str = r#"{"box": [x0, y0, x1, y1]}"#;

/// Pixels a grounded box may overshoot the image before it is rejected.
pub const CLAMP_TOLERANCE_PX: f64 = 2.0;

fn validate_pairs(instruction: &str, v: Value) -> Result<Decomposition, String> {
    let pairs: Vec<Pair> = serde_json::from_value(v).map_err(|e| format!("schema violation: {e}"))?;
    if pairs.is_empty() {
        return Err("empty pair list".into());
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.refer.trim().is_empty() || p.edit.trim().is_empty() {
            return Err(format!("pair {i} has an empty field"));
        }
        if !instruction.contains(&p.refer) {
            return Err(format!("pair {i}: refer {:?} is not copied verbatim from the instruction", p.refer));
        }
    }
    Ok(Decomposition { pairs })
}

/// `D(I)`: the model's decomposition, validated against the span-copy rule.
pub fn decompose<C: ChatClient + ?Sized>(
    instruction: &str,
    client: &C,
    config: &ChatClientConfig,
) -> Result<Structured<Decomposition>> {
    if instruction.trim().is_empty() {
        return Err(VlmError::Empty("instruction".into()));
    }
    ask(
        client,
        config,
        Ask {
            stage: "decompose",
            prompt: PromptId::Decompose,
            input: json!({ "instruction": instruction }),
            images: Vec::new(),
            schema: DECOMPOSITION_SCHEMA,
        },
        |v| validate_pairs(instruction, v),
    )
}

/// Turns a raw model box into a valid half-open pixel box.
///
/// All-≤1 coordinates are read as normalized and rescaled; overshoot of up to
/// two pixels is clamped; anything else out of bounds, inverted or empty fails.
pub fn validate_box(raw: [f64; 4], width: u32, height: u32) -> Result<BoundingBox, String> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    let (w, h) = (width as f64, height as f64);
    let mut b = raw;
    if b.iter().all(|v| (0.0..=1.0).contains(v)) && b.iter().any(|v| v.fract() != 0.0) {
        log::warn!("box {raw:?} looks normalized; rescaling to {width}x{height}");
        b = [b[0] * w, b[1] * h, b[2] * w, b[3] * h];
    }
    let mut b = b.map(f64::round);
    for (i, limit) in [(0, w), (1, h), (2, w), (3, h)] {
        if b[i] < -CLAMP_TOLERANCE_PX || b[i] > limit + CLAMP_TOLERANCE_PX {
            return Err(format!("coordinate {} = {} outside the {width}x{height} image", i, b[i]));
        }
        if b[i] < 0.0 || b[i] > limit {
            log::warn!("clamping box coordinate {i} = {} into [0, {limit}]", b[i]);
            b[i] = b[i].clamp(0.0, limit);
        }
    }
    if b[0] >= b[2] || b[1] >= b[3] {
        return Err(format!("degenerate or inverted box {b:?}"));
    }
    BoundingBox::new(b[0] as u32, b[1] as u32, b[2] as u32, b[3] as u32).map_err(|e| e.to_string())
}

fn parse_box_reply(v: Value, width: u32, height: u32) -> Result<BoundingBox, String> {
    let arr = v
        .get("box")
        .and_then(Value::as_array)
        .ok_or_else(|| "schema violation: expected {\"box\": [x0, y0, x1, y1]}".to_string())?;
    if arr.len() != 4 {
        return Err(format!("box has {} coordinates, expected 4", arr.len()));
    }
    let mut raw = [0.0; 4];
    for (slot, c) in raw.iter_mut().zip(arr) {
        *slot = c.as_f64().ok_or_else(|| format!("coordinate {c} is not a number"))?;
    }
    validate_box(raw, width, height)
}

/// `b = L(x, r)`: box of the single object `expression` refers to.
pub fn ground<C: ChatClient + ?Sized>(
    image: &Image<f64>,
    expression: &str,
    client: &C,
    config: &ChatClientConfig,
) -> Result<Structured<BoundingBox>> {
    if expression.trim().is_empty() {
        return Err(VlmError::Empty("referring expression".into()));
    }
    let (w, h) = (image.width(), image.height());
    ask(
        client,
        config,
        Ask {
            stage: "ground",
            prompt: PromptId::Ground,
            input: json!({ "expression": expression, "width": w, "height": h }),
            images: vec![png_base64(image)?],
            schema: BOX_SCHEMA,
        },
        |v| parse_box_reply(v, w, h),
    )
}
