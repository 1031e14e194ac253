use std::fmt;

use crate::resource::BlockKey;
use crate::space::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid supernet spec: {0}")]
    InvalidSpec(String),

    #[error("invalid subnet structure: {}", ViolationList(.0))]
    InvalidStructure(Vec<Violation>),

    #[error("structure space has {size} members, above the enumeration cap of {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("latency table has no entry for block {0}")]
    MissingBlock(BlockKey),

    #[error("no latency table loaded with id `{0}`")]
    UnknownTable(String),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("constraint {t} has no in-window candidates and cannot be sampled from marginals")]
    Unsampleable { t: usize },

    #[error("no in-window structure found for constraint {t} after {attempts} attempts")]
    AttemptsExhausted { t: usize, attempts: u64 },

    #[error("pool {t} is empty")]
    EmptyPool { t: usize },

    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("batch-norm statistics do not match the subnet: {0}")]
    BnMismatch(String),

    #[error("{0}")]
    Data(String),

    #[error("{what}:{line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }

    /// Errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidStructure(_)
                | Error::InvalidConstraint(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::UnknownTable(_)
        )
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
