//! JSON helpers shared by the file formats and line protocols.

use std::collections::BTreeMap;

use embserve_core::{CoreError, EntityId, ScoredResult, WeightedAttributes};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// `{"algo": .., "config": ..}`; the dimension comes from the registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRef {
    pub algo: String,
    pub config: String,
}

/// Attribute maps on the wire are keyed by [`EntityId::short_form`]: bare
/// ids are attributes, `item:..` / `user:..` name other entities.
pub fn attrs_from_map(map: &BTreeMap<String, f64>) -> Result<WeightedAttributes, CoreError> {
    WeightedAttributes::from_entries(
        map.iter()
            .map(|(k, w)| Ok((EntityId::parse_short(k)?, *w)))
            .collect::<Result<Vec<_>, CoreError>>()?,
    )
}

pub fn attrs_to_map(attrs: &WeightedAttributes) -> BTreeMap<String, f64> {
    attrs.iter().map(|(e, w)| (e.short_form(), w)).collect()
}

pub fn result_json(r: &ScoredResult) -> Value {
    json!({
        "item": r.item_id,
        "score": r.score,
        "mode": r.mode.as_str(),
        "tf": r.version_used.as_ref().map(|v| v.time_frame),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribute_maps_round_trip() {
        let map: BTreeMap<String, f64> = [("sports".to_string(), 0.5), ("item:i3".to_string(), 1.0)].into();
        let attrs = attrs_from_map(&map).unwrap();
        assert_eq!(attrs.get(&EntityId::item("i3").unwrap()), Some(1.0));
        assert_eq!(attrs.get(&EntityId::attribute("sports").unwrap()), Some(0.5));
        assert_eq!(attrs_to_map(&attrs), map);
    }
}
