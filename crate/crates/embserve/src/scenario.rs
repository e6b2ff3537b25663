//! Scenario files: the entity universe, embedding types, cadences, request
//! stream and fault plan for one simulated deployment.
//!
//! A scenario is JSON. The universe is either listed explicitly
//! (`universe`) or generated from a seed (`synthetic`). See the README for
//! the full schema.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use embserve_core::hash::SplitMix64;
use embserve_core::{EmbeddingTypeId, EntityId, EntityKind, ModelKind, WeightedAttributes};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::IndexMode;
use crate::indexer::{CatalogItem, IndexedType};
use crate::serving::PublisherRules;
use crate::trainer::{EmbeddingSource, Fixtures, TrainerConfig};
use crate::wire::attrs_from_map;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKindSpec {
    DirectDirect,
    IndirectDirect,
    IndirectIndirect,
}

impl From<ModelKindSpec> for ModelKind {
    fn from(s: ModelKindSpec) -> Self {
        match s {
            ModelKindSpec::DirectDirect => ModelKind::DirectDirect,
            ModelKindSpec::IndirectDirect => ModelKind::IndirectDirect,
            ModelKindSpec::IndirectIndirect => ModelKind::IndirectIndirect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexModeSpec {
    Shadow,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub algo: String,
    pub config: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSpec {
    pub id: String,
    pub provider: String,
    #[serde(default)]
    pub geo: Vec<String>,
    #[serde(default)]
    pub attrs: BTreeMap<String, f64>,
    /// First indexing cycle whose catalog contains the item.
    #[serde(default)]
    pub added_at_cycle: u64,
    /// First indexing cycle whose catalog no longer contains the item.
    #[serde(default)]
    pub deleted_at_cycle: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: String,
    pub geo: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    #[serde(default)]
    pub items: Vec<ItemSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub items: usize,
    pub users: usize,
    pub attributes: usize,
    #[serde(default = "default_providers")]
    pub providers: usize,
    #[serde(default = "default_regions")]
    pub regions: Vec<String>,
    #[serde(default = "default_attrs_per_entity")]
    pub attrs_per_entity: usize,
    #[serde(default)]
    pub geo_targeted_fraction: f64,
    /// Fraction of items that join the catalog after cycle 0.
    #[serde(default)]
    pub late_item_fraction: f64,
    /// Fraction of items that are later deleted.
    #[serde(default)]
    pub deleted_item_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_providers() -> usize {
    5
}

fn default_regions() -> Vec<String> {
    vec!["US".into(), "FR".into(), "DE".into()]
}

fn default_attrs_per_entity() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub kind: String,
    pub id: String,
    pub vec: Vec<f64>,
    /// Restricts the fixture to one time frame.
    #[serde(default)]
    pub tf: Option<u64>,
    /// Restricts the fixture to one type; all types otherwise.
    #[serde(default)]
    pub algo: Option<String>,
    #[serde(default)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSpec {
    Hashed,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub source: SourceSpec,
    /// Scheduler opportunities between cycles.
    pub cadence: u64,
    pub cycles: u64,
    pub coverage: f64,
    pub seed: u64,
    /// First scheduler opportunity at which the actor may run.
    #[serde(default)]
    pub start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EoSpec {
    #[serde(default = "default_poll_cadence")]
    pub poll_cadence: u64,
    #[serde(default = "default_cache_capacity")]
    pub cache_capacity: usize,
}

impl Default for EoSpec {
    fn default() -> Self {
        Self {
            poll_cadence: default_poll_cadence(),
            cache_capacity: default_cache_capacity(),
        }
    }
}

fn default_poll_cadence() -> u64 {
    10
}

fn default_cache_capacity() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexerSpec {
    pub cadence: u64,
    /// Cycles that must complete; aborted attempts do not count.
    pub cycles: u64,
    #[serde(default)]
    pub shadow_index_both_versions: bool,
    #[serde(default)]
    pub start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub count: u64,
    pub k: usize,
    #[serde(default)]
    pub start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublisherSpec {
    pub id: String,
    #[serde(default)]
    pub blocked: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultTarget {
    Eo,
    Engine,
}

/// Makes `target` unavailable during one step of one indexing attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// Zero-based indexing attempt, counting aborted attempts.
    pub cycle: u64,
    /// Zero-based step position within that attempt.
    pub step: u64,
    pub target: FaultTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model_kind: ModelKindSpec,
    pub types: Vec<TypeSpec>,
    pub index_mode: IndexModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe: Option<UniverseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub fixtures: Vec<FixtureSpec>,
    pub trainer: TrainerSpec,
    #[serde(default)]
    pub eo: EoSpec,
    pub indexer: IndexerSpec,
    pub requests: RequestSpec,
    #[serde(default)]
    pub publishers: Vec<PublisherSpec>,
    #[serde(default = "default_fallback_weight")]
    pub fallback_weight: f64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub interleaving_seed: u64,
}

fn default_fallback_weight() -> f64 {
    1.0
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn index_mode(&self) -> IndexMode {
        match self.index_mode {
            IndexModeSpec::Shadow => IndexMode::Shadow,
            IndexModeSpec::Incremental => IndexMode::Incremental,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniverseItem {
    pub catalog: CatalogItem,
    pub added_at_cycle: u64,
    pub deleted_at_cycle: Option<u64>,
}

impl UniverseItem {
    pub fn live_at(&self, cycle: u64) -> bool {
        self.added_at_cycle <= cycle && self.deleted_at_cycle.is_none_or(|d| cycle < d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniverseUser {
    pub id: String,
    pub geo: String,
    pub attributes: WeightedAttributes,
}

/// A validated scenario with its universe materialized.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub model_kind: ModelKind,
    pub mode: IndexMode,
    pub types: Vec<IndexedType>,
    pub items: Vec<UniverseItem>,
    pub users: Vec<UniverseUser>,
    pub attributes: Vec<String>,
    pub publishers: Vec<PublisherRules>,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        let model_kind: ModelKind = scenario.model_kind.into();
        if scenario.name.is_empty() {
            return Err(invalid("name must not be empty"));
        }
        if scenario.types.is_empty() {
            return Err(invalid("at least one embedding type is required"));
        }
        let mut types = Vec::new();
        let mut names = BTreeSet::new();
        for t in &scenario.types {
            let type_id = EmbeddingTypeId::new(t.algo.as_str(), t.config.as_str(), t.dim)
                .map_err(|e| invalid(format!("type {}|{}: {e}", t.algo, t.config)))?;
            if !names.insert((t.algo.clone(), t.config.clone())) {
                return Err(invalid(format!("type {}|{} declared twice", t.algo, t.config)));
            }
            types.push(IndexedType { type_id, model_kind });
        }
        let tr = &scenario.trainer;
        if !(0.0..=1.0).contains(&tr.coverage) {
            return Err(invalid("trainer.coverage must be in [0, 1]"));
        }
        if tr.cadence == 0 || scenario.indexer.cadence == 0 || scenario.eo.poll_cadence == 0 {
            return Err(invalid("cadences must be at least 1"));
        }
        if scenario.requests.k == 0 {
            return Err(invalid("requests.k must be at least 1"));
        }
        if !scenario.fallback_weight.is_finite() {
            return Err(invalid("fallback_weight must be finite"));
        }
        let (items, users, attributes) = match (&scenario.universe, &scenario.synthetic) {
            (Some(u), None) => explicit_universe(u)?,
            (None, Some(s)) => synthetic_universe(s, model_kind)?,
            _ => return Err(invalid("exactly one of `universe` or `synthetic` is required")),
        };
        if scenario.requests.count > 0 && users.is_empty() {
            return Err(invalid("requests need at least one user"));
        }
        let item_ids: BTreeSet<&str> = items.iter().map(|i| i.catalog.item_id.as_str()).collect();
        if item_ids.len() != items.len() {
            return Err(invalid("item ids must be unique"));
        }
        let user_ids: BTreeSet<&str> = users.iter().map(|u| u.id.as_str()).collect();
        if user_ids.len() != users.len() {
            return Err(invalid("user ids must be unique"));
        }
        let attr_ids: BTreeSet<&str> = attributes.iter().map(String::as_str).collect();
        let known = |e: &EntityId| match e.kind() {
            EntityKind::Item => item_ids.contains(e.id()),
            EntityKind::User => user_ids.contains(e.id()),
            EntityKind::Attribute => attr_ids.contains(e.id()),
        };
        for item in &items {
            for (e, _) in item.catalog.attributes.iter() {
                if e.kind() != EntityKind::Attribute || !known(e) {
                    return Err(invalid(format!("item {} references unknown attribute {}", item.catalog.item_id, e.short_form())));
                }
            }
        }
        for user in &users {
            for (e, _) in user.attributes.iter() {
                if !known(e) {
                    return Err(invalid(format!("user {} references unknown entity {}", user.id, e.short_form())));
                }
            }
        }
        for f in &scenario.fixtures {
            let kind: EntityKind = f.kind.parse().map_err(|_| invalid(format!("fixture kind {:?}", f.kind)))?;
            let entity = EntityId::new(kind, f.id.as_str()).map_err(|e| invalid(e.to_string()))?;
            if !known(&entity) {
                return Err(invalid(format!("fixture for unknown entity {}", entity.short_form())));
            }
            if !model_kind.emits(kind) {
                return Err(invalid(format!("{} models never embed {kind} entities", model_kind.as_str())));
            }
            let targets = types.iter().filter(|t| fixture_applies(f, &t.type_id));
            for t in targets {
                if f.vec.len() != t.type_id.dimension() || f.vec.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(format!("fixture {} does not fit type {}", entity.short_form(), t.type_id)));
                }
            }
        }
        let publishers = scenario
            .publishers
            .iter()
            .map(|p| PublisherRules {
                publisher_id: p.id.clone(),
                blocked_providers: p.blocked.iter().cloned().collect(),
            })
            .collect();
        Ok(Self {
            mode: scenario.index_mode(),
            scenario,
            model_kind,
            types,
            items,
            users,
            attributes,
            publishers,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::new(Scenario::load(path)?)
    }

    /// Every entity the trainer may embed.
    pub fn entities(&self) -> Vec<EntityId> {
        let users = self.users.iter().filter_map(|u| EntityId::user(u.id.as_str()).ok());
        let items = self.items.iter().filter_map(|i| EntityId::item(i.catalog.item_id.as_str()).ok());
        let attrs = self.attributes.iter().filter_map(|a| EntityId::attribute(a.as_str()).ok());
        users.chain(items).chain(attrs).collect()
    }

    pub fn catalog_at(&self, cycle: u64) -> Vec<CatalogItem> {
        self.items.iter().filter(|i| i.live_at(cycle)).map(|i| i.catalog.clone()).collect()
    }

    pub fn trainer_config(&self, type_id: &EmbeddingTypeId) -> TrainerConfig {
        let tr = &self.scenario.trainer;
        let source = match tr.source {
            SourceSpec::Hashed => EmbeddingSource::Hashed,
            SourceSpec::Fixture => {
                let mut fixtures = Fixtures::default();
                for f in self.scenario.fixtures.iter().filter(|f| fixture_applies(f, type_id)) {
                    if let Ok(entity) = f.kind.parse().and_then(|k| EntityId::new(k, f.id.as_str())) {
                        fixtures.insert(entity, f.tf, f.vec.clone());
                    }
                }
                EmbeddingSource::Fixture(fixtures)
            }
        };
        TrainerConfig {
            model_kind: self.model_kind,
            type_id: type_id.clone(),
            source,
            coverage_fraction: tr.coverage,
            seed: tr.seed,
        }
    }

    /// Every trained entity is covered in every cycle, so an item that was
    /// ever embedded stays embeddable at every later version.
    pub fn full_coverage(&self) -> bool {
        self.scenario.trainer.coverage >= 1.0 && self.scenario.trainer.source == SourceSpec::Hashed
    }
}

fn fixture_applies(f: &FixtureSpec, type_id: &EmbeddingTypeId) -> bool {
    f.algo.as_deref().is_none_or(|a| a == type_id.algorithm_name())
        && f.config.as_deref().is_none_or(|c| c == type_id.config_tag())
}

type Universe = (Vec<UniverseItem>, Vec<UniverseUser>, Vec<String>);

fn explicit_universe(u: &UniverseSpec) -> Result<Universe, ScenarioError> {
    let mut items = Vec::new();
    for i in &u.items {
        let attributes = attrs_from_map(&i.attrs).map_err(|e| invalid(format!("item {}: {e}", i.id)))?;
        EntityId::item(i.id.as_str()).map_err(|e| invalid(e.to_string()))?;
        if i.deleted_at_cycle.is_some_and(|d| d <= i.added_at_cycle) {
            return Err(invalid(format!("item {} is deleted before it is added", i.id)));
        }
        items.push(UniverseItem {
            catalog: CatalogItem {
                item_id: i.id.clone(),
                provider_id: i.provider.clone(),
                geo_targets: i.geo.iter().cloned().collect(),
                attributes,
            },
            added_at_cycle: i.added_at_cycle,
            deleted_at_cycle: i.deleted_at_cycle,
        });
    }
    let mut users = Vec::new();
    for s in &u.users {
        EntityId::user(s.id.as_str()).map_err(|e| invalid(e.to_string()))?;
        users.push(UniverseUser {
            id: s.id.clone(),
            geo: s.geo.clone(),
            attributes: attrs_from_map(&s.attrs).map_err(|e| invalid(format!("user {}: {e}", s.id)))?,
        });
    }
    for a in &u.attributes {
        EntityId::attribute(a.as_str()).map_err(|e| invalid(e.to_string()))?;
    }
    Ok((items, users, u.attributes.clone()))
}

fn pick_distinct(rng: &mut SplitMix64, n: usize, count: usize) -> Vec<usize> {
    let mut chosen = BTreeSet::new();
    let count = count.min(n);
    while chosen.len() < count {
        chosen.insert(rng.below(n as u64) as usize);
    }
    chosen.into_iter().collect()
}

fn weight(rng: &mut SplitMix64) -> f64 {
    (rng.below(100) + 1) as f64 / 100.0
}

fn synthetic_universe(s: &SyntheticSpec, model_kind: ModelKind) -> Result<Universe, ScenarioError> {
    if s.providers == 0 || s.regions.is_empty() {
        return Err(invalid("synthetic universe needs providers and regions"));
    }
    for f in [s.geo_targeted_fraction, s.late_item_fraction, s.deleted_item_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid("synthetic fractions must be in [0, 1]"));
        }
    }
    let mut rng = SplitMix64::new(s.seed);
    let attributes: Vec<String> = (0..s.attributes).map(|i| format!("a{i:03}")).collect();
    let attr_entity = |i: usize| EntityId::attribute(attributes[i].as_str()).expect("generated id");
    let mut items = Vec::with_capacity(s.items);
    for n in 0..s.items {
        let provider_id = format!("p{}", rng.below(s.providers as u64));
        let mut geo_targets = BTreeSet::new();
        if rng.unit() < s.geo_targeted_fraction {
            let count = 1 + rng.below(2) as usize;
            for r in pick_distinct(&mut rng, s.regions.len(), count) {
                geo_targets.insert(s.regions[r].clone());
            }
        }
        let mut attrs = WeightedAttributes::new();
        for a in pick_distinct(&mut rng, s.attributes, s.attrs_per_entity) {
            attrs.insert(attr_entity(a), weight(&mut rng)).expect("finite");
        }
        let added_at_cycle = if rng.unit() < s.late_item_fraction { 1 + rng.below(2) } else { 0 };
        let deleted_at_cycle = (rng.unit() < s.deleted_item_fraction).then(|| added_at_cycle + 1 + rng.below(2));
        items.push(UniverseItem {
            catalog: CatalogItem {
                item_id: format!("i{n:03}"),
                provider_id,
                geo_targets,
                attributes: attrs,
            },
            added_at_cycle,
            deleted_at_cycle,
        });
    }
    let mut users = Vec::with_capacity(s.users);
    for n in 0..s.users {
        let geo = s.regions[rng.below(s.regions.len() as u64) as usize].clone();
        let mut attrs = WeightedAttributes::new();
        for a in pick_distinct(&mut rng, s.attributes, s.attrs_per_entity) {
            attrs.insert(attr_entity(a), weight(&mut rng)).expect("finite");
        }
        if model_kind == ModelKind::IndirectDirect {
            for i in pick_distinct(&mut rng, s.items, 3) {
                let item = EntityId::item(format!("i{i:03}")).expect("generated id");
                attrs.insert(item, 1.0).expect("finite");
            }
        }
        users.push(UniverseUser {
            id: format!("u{n:03}"),
            geo,
            attributes: attrs,
        });
    }
    Ok((items, users, attributes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "name": "t",
            "model_kind": "DirectDirect",
            "types": [{"algo": "mf", "config": "base", "dim": 2}],
            "index_mode": "shadow",
            "synthetic": {"items": 10, "users": 4, "attributes": 6, "seed": 3},
            "trainer": {"source": "hashed", "cadence": 5, "cycles": 2, "coverage": 0.8, "seed": 1},
            "indexer": {"cadence": 5, "cycles": 2},
            "requests": {"count": 10, "k": 3}
        })
    }

    #[test]
    fn synthetic_world_is_deterministic() {
        let a = World::new(serde_json::from_value(base()).unwrap()).unwrap();
        let b = World::new(serde_json::from_value(base()).unwrap()).unwrap();
        assert_eq!(a.items, b.items);
        assert_eq!(a.users, b.users);
        assert_eq!(a.items.len(), 10);
        assert_eq!(a.entities().len(), 10 + 4 + 6);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut v = base();
        v["trainer"]["coverage"] = 1.5.into();
        assert!(World::new(serde_json::from_value(v).unwrap()).is_err());
        let mut v = base();
        v["universe"] = serde_json::json!({"items": []});
        assert!(World::new(serde_json::from_value(v).unwrap()).is_err());
        let mut v = base();
        v["fixtures"] = serde_json::json!([{"kind": "attribute", "id": "a000", "vec": [1.0, 0.0]}]);
        assert!(World::new(serde_json::from_value(v).unwrap()).is_err());
        let mut v = base();
        v["bogus"] = 1.into();
        assert!(serde_json::from_value::<Scenario>(v).is_err());
    }

    #[test]
    fn catalog_follows_add_and_delete_cycles() {
        let item = UniverseItem {
            catalog: CatalogItem {
                item_id: "i".into(),
                provider_id: "p".into(),
                geo_targets: BTreeSet::new(),
                attributes: WeightedAttributes::new(),
            },
            added_at_cycle: 1,
            deleted_at_cycle: Some(3),
        };
        assert_eq!((0..4).map(|c| item.live_at(c)).collect::<Vec<_>>(), [false, true, true, false]);
    }
}
