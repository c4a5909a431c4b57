//! Exit-code contract: 0 success, 1 runtime failure, 2 usage or config error.

use cdp_core::Error;

pub const OK: u8 = 0;
pub const RUNTIME: u8 = 1;
pub const USAGE: u8 = 2;

/// A bad argument or input file, reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidConfig(_)
                | Error::InvalidState(_)
                | Error::ShapeMismatch { .. }
                | Error::ZeroWidthRange
                | Error::EmptyDataset
                | Error::Format(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_) => USAGE,
                Error::RotationDomain { .. }
                | Error::StepOutOfRange { .. }
                | Error::Infeasible { .. }
                | Error::EmptySet
                | Error::NonFinite(_)
                | Error::NonConvergence { .. } => RUNTIME,
            };
        }
    }
    RUNTIME
}
