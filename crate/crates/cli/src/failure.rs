use std::fmt;

/// Why a command stopped, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    /// Malformed config or input files. Exit 2, no report written.
    Schema(String),
    /// A method's precondition does not hold. Exit 3.
    Precondition { method: String, cause: String },
    /// Output could not be written.
    Output(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Schema(_) | Failure::Output(_) => 2,
            Failure::Precondition { .. } => 3,
        }
    }

    pub fn precondition(method: &str, cause: impl fmt::Display) -> Self {
        Failure::Precondition {
            method: method.to_string(),
            cause: cause.to_string(),
        }
    }

    /// Input-loading errors: parse problems are schema failures, the rest
    /// (inconsistent but well-formed data) are too, since no method ran.
    pub fn input(what: &str, e: finitepop::Error) -> Self {
        Failure::Schema(format!("{what}: {e}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Schema(msg) => write!(f, "schema error: {msg}"),
            Failure::Precondition { method, cause } => {
                write!(f, "method `{method}` failed: {cause}")
            }
            Failure::Output(msg) => write!(f, "output error: {msg}"),
        }
    }
}
