use std::fmt;

/// CLI failure, mapped to the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// A checked invariant failed (exit 1).
    Invariant(String),
    /// Missing or invalid configuration (exit 2).
    Config(String),
    /// A numerical routine failed (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invariant(m) => write!(f, "invariant failure: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<kpz_stationary::Error> for CliError {
    fn from(e: kpz_stationary::Error) -> Self {
        use kpz_stationary::Error as E;
        match e {
            E::Domain(_) | E::Invalid(_) | E::Admissibility(_) | E::SizeGuard { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}
