//! The capability every denoiser backend provides to the fusion engine.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::{Grid, Image};

/// What a branch is conditioned on: a clean image and an instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition<S> {
    pub image: Image<S>,
    pub instruction: String,
}

impl<S: Scalar> Condition<S> {
    pub fn new(image: Image<S>, instruction: impl Into<String>) -> Result<Self> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(CoreError::Config("condition instruction is empty".into()));
        }
        Ok(Self { image, instruction })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Uniform,
    Shifted {
        shift: f64,
    },
}

/// Static facts about a backend. Mirrors the bridge `/descriptor` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub vae_factor: u32,
    pub patch: u32,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_true")]
    pub supports_variable_size: bool,
    /// Fixed `[width, height]` canvas when variable sizes are unsupported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<[u32; 2]>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    /// Max-abs error the backend guarantees for `decode(encode(x))`.
    #[serde(default)]
    pub roundtrip_tolerance: f64,
}

fn default_true() -> bool {
    true
}

fn default_dtype() -> String {
    "f32".into()
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.vae_factor == 0 || self.patch == 0 {
            return Err(CoreError::Backend(format!(
                "descriptor factors must be positive (vae_factor {}, patch {})",
                self.vae_factor, self.patch
            )));
        }
        if !self.supports_variable_size && self.canvas.is_none() {
            return Err(CoreError::Backend(
                "fixed-size backend must report its canvas".into(),
            ));
        }
        Ok(())
    }

    /// Pixel multiple every region box is padded to.
    pub fn padding_multiple(&self) -> u32 {
        self.vae_factor * self.patch
    }
}

/// One-step velocity predictor plus the codec it operates through.
///
/// Implementations must be callable from several threads at once; region
/// branches are advanced in parallel.
pub trait DenoiserBackend<S: Scalar>: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn encode(&self, image: &Image<S>) -> Result<Grid<S>>;

    fn decode(&self, latent: &Grid<S>) -> Result<Image<S>>;

    /// Velocity at normalized time `s` for a branch in state `latent`.
    ///
    /// `noise` is the noise the branch started from at `s = 1`. Backends that
    /// have no use for it ignore it; the result must have the latent's shape.
    fn predict_velocity(
        &self,
        latent: &Grid<S>,
        s: f64,
        condition: &Condition<S>,
        noise: Option<&Grid<S>>,
    ) -> Result<Grid<S>>;
}
