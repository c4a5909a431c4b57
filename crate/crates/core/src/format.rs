use crate::error::{Error, Result};

/// Version tag written into every file this crate produces.
pub const FORMAT_VERSION: &str = "1.0";

/// Accepts any version sharing the current major number.
pub fn check_format_version(found: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match (major(found), major(FORMAT_VERSION)) {
        (Some(a), Some(b)) if a == b => Ok(()),
        _ => Err(Error::Format(format!(
            "format_version {found:?} not supported (expected {FORMAT_VERSION})"
        ))),
    }
}
