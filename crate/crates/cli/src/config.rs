use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mirage_core::{SessionConfig, Strategy};
use mirage_vlm::ChatClientConfig;

/// Where velocities come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Oracle,
    Bridge { url: String },
}

impl std::str::FromStr for BackendChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            Ok(Self::Oracle)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::Bridge { url: s.to_string() })
        } else if let Some(url) = s.strip_prefix("bridge=") {
            Ok(Self::Bridge { url: url.to_string() })
        } else {
            bail!("backend must be `oracle` or a bridge URL, got {s:?}")
        }
    }
}

/// How chat clients are provided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockMode {
    /// Real chat-completions endpoints.
    #[default]
    Off,
    /// Deterministic in-process stubs for every role.
    Stub,
    /// Scripted replies from `<dir>/<role>.json`; roles without a file fall
    /// back to the stub, configured by `<dir>/stub.json` when present.
    Transcripts { dir: PathBuf },
}

/// Everything a command needs. Serialized verbatim as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub steps: usize,
    pub rho: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub vae_factor: u32,
    pub patch: u32,
    pub commitment_level: f64,
    pub bridge_timeout_s: u64,
    /// Environment variable holding the bridge bearer token.
    pub bridge_token_env: String,
    pub parser: ChatClientConfig,
    pub grounder: ChatClientConfig,
    pub judge: ChatClientConfig,
    pub mock: MockMode,
    pub trace: bool,
    pub out: PathBuf,
    /// Present in a run directory's echo so the run can be repeated from it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let session = SessionConfig::default();
        Self {
            backend: BackendChoice::Oracle,
            steps: session.steps,
            rho: session.rho,
            strategy: session.strategy,
            seed: session.seed,
            vae_factor: 1,
            patch: 2,
            commitment_level: mirage_core::oracle::DEFAULT_COMMITMENT_LEVEL,
            bridge_timeout_s: 30,
            bridge_token_env: "MIRAGE_BRIDGE_TOKEN".into(),
            parser: ChatClientConfig::default(),
            grounder: ChatClientConfig::default(),
            judge: ChatClientConfig::default(),
            mock: MockMode::Off,
            trace: false,
            out: PathBuf::from("mirage-out"),
            image: None,
            instruction: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            bail!("steps must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            bail!("rho must lie in [0, 1], got {}", self.rho);
        }
        if self.vae_factor == 0 || self.patch == 0 {
            bail!("vae_factor and patch must be positive");
        }
        if !(0.0..1.0).contains(&self.commitment_level) {
            bail!("commitment_level must lie in [0, 1)");
        }
        if self.mock == MockMode::Off {
            for (name, c) in [("parser", &self.parser), ("grounder", &self.grounder), ("judge", &self.judge)] {
                c.validate().with_context(|| format!("{name} client"))?;
            }
        }
        Ok(())
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            steps: self.steps,
            rho: self.rho,
            strategy: self.strategy,
            seed: self.seed,
            trace: self.trace,
        }
    }
}
