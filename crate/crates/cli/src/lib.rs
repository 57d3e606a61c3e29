//! Command-line front end and interactive simulation service.

pub mod commands;
pub mod protocol;
pub mod serve;
pub mod settings;

use std::fmt;

pub use settings::{ServeConfig, Settings};

/// Bad arguments or configuration. Reported with exit status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for an error returned by a subcommand.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

/// One-line JSON description of a failure, suitable for scripts.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = if exit_code(err) == 2 { "usage" } else { "runtime" };
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    serde_json::json!({ "error": { "kind": kind, "message": chain.join(": ") } }).to_string()
}
