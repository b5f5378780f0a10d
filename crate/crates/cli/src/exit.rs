use mirage_core::CoreError;
use mirage_vlm::VlmError;

pub const OK: i32 = 0;
pub const VALIDATION: i32 = 2;
pub const EXTERNAL: i32 = 3;
pub const PARTIAL: i32 = 4;

/// Raised when a batch finished but some items failed.
#[derive(Debug)]
pub struct PartialBatch {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for PartialBatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} items failed", self.failed, self.total)
    }
}

impl std::error::Error for PartialBatch {}

/// A remote service answered but failed a check.
#[derive(Debug)]
pub struct ExternalFailure(pub String);

impl std::fmt::Display for ExternalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ExternalFailure {}

fn core_is_external(e: &CoreError) -> bool {
    matches!(e, CoreError::BridgeConnection(_) | CoreError::BridgeStatus { .. })
}

/// Maps an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<PartialBatch>().is_some() {
            return PARTIAL;
        }
        if cause.downcast_ref::<ExternalFailure>().is_some() {
            return EXTERNAL;
        }
        if let Some(e) = cause.downcast_ref::<VlmError>() {
            if e.is_external() || matches!(e, VlmError::Core(c) if core_is_external(c)) {
                return EXTERNAL;
            }
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            if core_is_external(e) {
                return EXTERNAL;
            }
        }
    }
    VALIDATION
}
