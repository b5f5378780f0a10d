//! Multi-instance regional editing on top of a one-step velocity backend.
//!
//! The engine is generic over the scalar type; [`f64`] is the working
//! precision and the aliases below name the common instantiations.

pub mod backend;
pub mod bridge;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod imageio;
pub mod metrics;
pub mod oracle;
pub mod scalar;
pub mod scheduler;
pub mod tensor;

pub use backend::{BackendDescriptor, Condition, DenoiserBackend, ScheduleKind};
pub use error::{CoreError, Result};
pub use fusion::{EditSession, RunReport, SessionConfig, Strategy, TokenReport};
pub use geometry::{BoundingBox, LatentMask, RegionInstance};
pub use metrics::{MaskSet, PixelMask, RegionMetricReport, ScoreTriple};
pub use oracle::OracleBackend;
pub use scalar::Scalar;
pub use scheduler::{SwitchPolicy, TimeGrid};
pub use tensor::{Grid, Image, NoiseField, Shape};

pub type LatentGrid = Grid<f64>;
pub type PixelImage = Image<f64>;
pub type Region = RegionInstance<f64>;
pub type Session<'b> = EditSession<'b, f64>;
pub type LatentGrid32 = Grid<f32>;
pub type PixelImage32 = Image<f32>;
