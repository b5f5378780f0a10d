use std::path::Path;

use anyhow::{Context, Result};

use mirage_vlm::{ChatClient, ChatClientConfig, HttpChatClient, Scene, ScriptedChatClient, StubBehavior, StubChatClient};

use crate::config::{MockMode, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Parser,
    Grounder,
    Judge,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Self::Parser => "parser",
            Self::Grounder => "grounder",
            Self::Judge => "judge",
        }
    }

    pub fn config(self, cfg: &RunConfig) -> &ChatClientConfig {
        match self {
            Self::Parser => &cfg.parser,
            Self::Grounder => &cfg.grounder,
            Self::Judge => &cfg.judge,
        }
    }
}

fn stub(dir: Option<&Path>, scene: Option<Scene>) -> Result<StubChatClient> {
    let behavior = match dir.map(|d| d.join("stub.json")).filter(|p| p.exists()) {
        Some(p) => {
            let text = std::fs::read_to_string(&p)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => StubBehavior::default(),
    };
    let client = StubChatClient::new(behavior);
    Ok(match scene {
        Some(s) => client.with_scene(s),
        None => client,
    })
}

/// A fresh client for `role`. `scene` lets stub grounding use known object
/// boxes instead of detecting them.
pub fn make_client(cfg: &RunConfig, role: Role, scene: Option<Scene>) -> Result<Box<dyn ChatClient>> {
    Ok(match &cfg.mock {
        MockMode::Off => Box::new(HttpChatClient::new(role.config(cfg).clone())?),
        MockMode::Stub => Box::new(stub(None, scene)?),
        MockMode::Transcripts { dir } => {
            let file = dir.join(format!("{}.json", role.name()));
            if file.exists() {
                log::info!("{} replies scripted from {}", role.name(), file.display());
                Box::new(ScriptedChatClient::from_file(&file)?)
            } else {
                Box::new(stub(Some(dir), scene)?)
            }
        }
    })
}
