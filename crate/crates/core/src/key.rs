//! Canonical flat key encoding: `algorithm_name|config_tag|time_frame|kind|id`.

use alloc::format;
use alloc::string::String;

use crate::types::{EmbeddingTypeId, EmbeddingVersion, EntityId, EntityKind};
use crate::{CoreError, Result};

pub fn canonical_key(version: &EmbeddingVersion, entity: &EntityId) -> String {
    format!("{}|{}", version_key(version), entity)
}

/// `algorithm_name|config_tag|time_frame`, used to key vectors in index dumps.
pub fn version_key(version: &EmbeddingVersion) -> String {
    format!(
        "{}|{}|{}",
        version.type_id.algorithm_name(),
        version.type_id.config_tag(),
        version.time_frame
    )
}

/// Splits a canonical key back into its parts. The dimension is not part of
/// the key and must be supplied by the caller's type registry.
pub fn parse_canonical_key(
    key: &str,
    dimension: usize,
) -> Result<(EmbeddingVersion, EntityId)> {
    let bad = || CoreError::InvalidIdentifier(String::from(key));
    let mut parts = key.split('|');
    let (Some(algo), Some(config), Some(tf), Some(kind), Some(id), None) = (
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
    ) else {
        return Err(bad());
    };
    let time_frame: u64 = tf.parse().map_err(|_| bad())?;
    let kind: EntityKind = kind.parse()?;
    let type_id = EmbeddingTypeId::new(algo, config, dimension)?;
    Ok((type_id.at(time_frame), EntityId::new(kind, id)?))
}
