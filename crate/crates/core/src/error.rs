use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    /// A target refused to run an action.
    #[error("scheduling error at action {action} ({kind}): {reason}")]
    Scheduling {
        action: usize,
        kind: String,
        reason: String,
    },

    /// The lane runtime observed a read or write outside a subgroup's
    /// ownership window.
    #[error("consistency violation at action {action} ({kind}): {reason}")]
    Consistency {
        action: usize,
        kind: String,
        reason: String,
    },

    #[error("invalid timeline: {0}")]
    InvalidTimeline(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
