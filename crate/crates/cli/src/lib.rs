//! Command implementations behind the `mirage` binary.

pub mod bench;
pub mod clients;
pub mod config;
pub mod edit;
pub mod eval;
pub mod exit;
pub mod inspect;

pub use bench::cmd_bench_build;
pub use config::{BackendChoice, MockMode, RunConfig};
pub use edit::{cmd_edit, EditOutput, EditReport};
pub use eval::cmd_eval;
pub use exit::exit_code;
pub use inspect::cmd_inspect;
