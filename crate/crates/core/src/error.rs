use thiserror::Error;

/// Errors raised across the detector, environment and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not ready: {0}")]
    NotReady(&'static str),

    #[error("size limit exceeded: n = {n}, maximum is {max}")]
    SizeLimit { n: usize, max: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unknown label {0}")]
    UnknownLabel(u32),

    #[error("unknown task {0}")]
    UnknownTask(u32),

    #[error("probe failed: {0}")]
    Probe(String),

    #[error("{}", format_config_errors(.0))]
    Config(Vec<ConfigIssue>),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One configuration problem. `line` is 0 when the key is missing entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: usize,
    pub msg: String,
}

fn format_config_errors(issues: &[ConfigIssue]) -> String {
    let mut out = String::from("invalid configuration:");
    for issue in issues {
        if issue.line == 0 {
            out.push_str(&format!("\n  {}", issue.msg));
        } else {
            out.push_str(&format!("\n  line {}: {}", issue.line, issue.msg));
        }
    }
    out
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
