use crate::error::{Error, Result};

/// Identifiers double as directory names in the store and in archives.
pub(crate) fn check(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{kind} id `{id}` must be 1-128 characters of [A-Za-z0-9._-] and not start with '.'"
        )))
    }
}
