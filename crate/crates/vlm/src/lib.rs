//! Vision-language orchestration: instruction decomposition, grounding,
//! judge scoring and benchmark construction over a chat-completions client.

pub mod bench;
pub mod client;
pub mod decompose;
pub mod error;
pub mod grammar;
pub mod judge;
pub mod mock;
pub mod prompts;
pub mod scene;
pub mod structured;

pub use client::{ChatClient, ChatClientConfig, HttpChatClient, Sampling};
pub use decompose::{decompose, ground};
pub use error::{Result, VlmError};
pub use grammar::{stub_decompose, Decomposition, Pair};
pub use mock::{ScriptedChatClient, StubBehavior, StubChatClient};
pub use scene::Scene;
