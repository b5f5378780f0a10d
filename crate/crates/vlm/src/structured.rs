//! Ask for JSON, validate it, and re-ask with a repair prompt on failure.

use serde::Serialize;
use serde_json::Value;

use crate::client::{ChatClient, ChatClientConfig, ChatRequest, Message, Role, Sampling};
use crate::error::{Result, VlmError};
use crate::prompts::{render, PromptId};

/// One call and what the validator made of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub sampling: Sampling,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Structured<T> {
    pub value: T,
    pub attempts: Vec<Attempt>,
}

impl<T> Structured<T> {
    pub fn retries(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }
}

/// First JSON value embedded in `text`, tolerating prose and code fences.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let start = text
        .find(['[', '{'])
        .ok_or_else(|| "no JSON object or array in reply".to_string())?;
    let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
    match stream.next() {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(format!("invalid JSON: {e}")),
        None => Err("empty JSON".into()),
    }
}

pub struct Ask<'a> {
    pub stage: &'a str,
    pub prompt: PromptId,
    pub input: Value,
    pub images: Vec<String>,
    /// Shown to the model in the repair prompt.
    pub schema: &'a str,
}

/// Runs the ask/validate/repair loop. At most `1 + max_retries` calls are made;
/// retry `n` uses rung `n` of the escalation ladder.
pub fn ask<C, T>(
    client: &C,
    config: &ChatClientConfig,
    request: Ask<'_>,
    validate: impl Fn(Value) -> Result<T, String>,
) -> Result<Structured<T>>
where
    C: ChatClient + ?Sized,
{
    let mut first = Message::text(Role::User, render(request.prompt, &request.input));
    for png in &request.images {
        first = first.with_image(png.clone());
    }
    let mut messages = vec![first];
    let mut attempts: Vec<Attempt> = Vec::new();
    for n in 0..=config.max_retries {
        let sampling = config.sampling_for_attempt(n);
        let chat = ChatRequest {
            model: config.model.clone(),
            messages: messages.clone(),
            sampling,
            max_tokens: config.max_tokens,
        };
        let output = client.complete(&chat)?;
        let verdict = extract_json(&output).and_then(&validate);
        match verdict {
            Ok(value) => {
                attempts.push(Attempt { sampling, output, error: None });
                if n > 0 {
                    log::info!("{}: valid output after {n} retries", request.stage);
                }
                return Ok(Structured { value, attempts });
            }
            Err(e) => {
                log::warn!("{}: attempt {} rejected: {e}", request.stage, n + 1);
                let repair = PromptId::Repair
                    .text()
                    .replace("{schema}", request.schema)
                    .replace("{error}", &e);
                messages.push(Message::text(Role::Assistant, output.clone()));
                messages.push(Message::text(Role::User, repair));
                attempts.push(Attempt {
                    sampling,
                    output,
                    error: Some(e),
                });
            }
        }
    }
    let last = attempts.last().expect("at least one attempt");
    Err(VlmError::Exhausted {
        stage: request.stage.into(),
        attempts: attempts.len(),
        last_error: last.error.clone().unwrap_or_default(),
        last_output: last.output.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_from_fences_and_prose() {
        assert_eq!(extract_json("```json\n[1, 2]\n```").unwrap(), serde_json::json!([1, 2]));
        assert_eq!(
            extract_json("Sure! Here it is: {\"a\": 1} hope that helps").unwrap(),
            serde_json::json!({"a": 1})
        );
        assert!(extract_json("no idea").is_err());
        assert!(extract_json("[1, 2").is_err());
    }
}
