use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const PLACEMENT: i32 = 3;
    pub const INFEASIBLE_LAYOUT: i32 = 4;
    pub const BUDGET_EXHAUSTED: i32 = 5;
    pub const CODEC: i32 = 6;
    pub const INTERNAL: i32 = 1;
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(exit::VALIDATION, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(exit::INTERNAL, message)
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::internal(format!("{}: {e}", path.display()))
    }
}
