use thiserror::Error;

use crate::network::{ChargerType, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("missing {table} entry for ({from}, {to})")]
    MissingCost {
        table: &'static str,
        from: NodeId,
        to: NodeId,
    },

    #[error("duplicate facility at lot {0}")]
    DuplicateLot(NodeId),

    #[error("unknown {kind} {key}")]
    Lookup { kind: &'static str, key: String },

    #[error("no such charger pool: lot {lot}, {kind:?} chargers")]
    NoSuchPool { lot: NodeId, kind: ChargerType },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("micro-scenario too large: {size} joint schedules exceeds the limit of {limit}")]
    OracleTooLarge { size: u128, limit: u128 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
