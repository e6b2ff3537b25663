use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{CoreError, Result};

/// Separator of the canonical flat key. Never allowed inside identifiers.
pub const KEY_SEPARATOR: char = '|';

fn check_identifier(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(KEY_SEPARATOR) || s.contains('\n') {
        return Err(CoreError::InvalidIdentifier(s.to_string()));
    }
    Ok(())
}

/// An embedding algorithm together with one hyperparameter configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmbeddingTypeId {
    algorithm_name: String,
    config_tag: String,
    dimension: usize,
}

impl EmbeddingTypeId {
    pub fn new(
        algorithm_name: impl Into<String>,
        config_tag: impl Into<String>,
        dimension: usize,
    ) -> Result<Self> {
        let algorithm_name = algorithm_name.into();
        let config_tag = config_tag.into();
        check_identifier(&algorithm_name)?;
        check_identifier(&config_tag)?;
        if dimension == 0 {
            return Err(CoreError::ZeroDimension);
        }
        Ok(Self {
            algorithm_name,
            config_tag,
            dimension,
        })
    }

    pub fn algorithm_name(&self) -> &str {
        &self.algorithm_name
    }

    pub fn config_tag(&self) -> &str {
        &self.config_tag
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `(algorithm_name, config_tag)` identifies a type within a deployment.
    pub fn name_pair(&self) -> (&str, &str) {
        (&self.algorithm_name, &self.config_tag)
    }

    pub fn at(&self, time_frame: u64) -> EmbeddingVersion {
        EmbeddingVersion {
            type_id: self.clone(),
            time_frame,
        }
    }
}

impl fmt::Display for EmbeddingTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.algorithm_name, self.config_tag)
    }
}

/// A trained embedding batch: type plus training time frame. Larger time
/// frames are fresher.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmbeddingVersion {
    pub type_id: EmbeddingTypeId,
    pub time_frame: u64,
}

impl EmbeddingVersion {
    pub fn new(type_id: EmbeddingTypeId, time_frame: u64) -> Self {
        Self {
            type_id,
            time_frame,
        }
    }
}

impl fmt::Display for EmbeddingVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.type_id, self.time_frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Attribute,
    Item,
    User,
}

impl EntityKind {
    pub const ALL: [EntityKind; 3] = [EntityKind::Attribute, EntityKind::Item, EntityKind::User];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Attribute => "attribute",
            EntityKind::Item => "item",
            EntityKind::User => "user",
        }
    }
}

impl FromStr for EntityKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(EntityKind::Attribute),
            "item" => Ok(EntityKind::Item),
            "user" => Ok(EntityKind::User),
            other => Err(CoreError::InvalidIdentifier(other.to_string())),
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A user, item or attribute. Ordering is by kind name, then id, which is
/// the ascending canonical order used for aggregation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    kind: EntityKind,
    id: String,
}

impl EntityId {
    pub fn new(kind: EntityKind, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        check_identifier(&id)?;
        Ok(Self { kind, id })
    }

    pub fn user(id: impl Into<String>) -> Result<Self> {
        Self::new(EntityKind::User, id)
    }

    pub fn item(id: impl Into<String>) -> Result<Self> {
        Self::new(EntityKind::Item, id)
    }

    pub fn attribute(id: impl Into<String>) -> Result<Self> {
        Self::new(EntityKind::Attribute, id)
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Short form used in attribute maps: attributes are written bare,
    /// other kinds as `kind:id`.
    pub fn short_form(&self) -> String {
        let prefixed = EntityKind::ALL
            .iter()
            .any(|k| self.id.starts_with(k.as_str()) && self.id[k.as_str().len()..].starts_with(':'));
        if self.kind == EntityKind::Attribute && !prefixed {
            self.id.clone()
        } else {
            alloc::format!("{}:{}", self.kind, self.id)
        }
    }

    /// Inverse of [`EntityId::short_form`].
    pub fn parse_short(s: &str) -> Result<Self> {
        if let Some((prefix, rest)) = s.split_once(':') {
            if let Ok(kind) = prefix.parse::<EntityKind>() {
                return Self::new(kind, rest);
            }
        }
        Self::attribute(s)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.kind, self.id)
    }
}

/// One stored vector: `(version, entity) -> vector`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub version: EmbeddingVersion,
    pub entity: EntityId,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(version: EmbeddingVersion, entity: EntityId, vector: Vec<f64>) -> Result<Self> {
        let record = Self {
            version,
            entity,
            vector,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        check_vector(self.version.type_id.dimension(), &self.vector)
    }
}

/// Checks length against the declared dimension and that every component is
/// finite.
pub fn check_vector(dimension: usize, vector: &[f64]) -> Result<()> {
    if vector.len() != dimension {
        return Err(CoreError::DimensionMismatch {
            expected: dimension,
            actual: vector.len(),
        });
    }
    match vector.iter().position(|c| !c.is_finite()) {
        Some(index) => Err(CoreError::NonFiniteComponent { index }),
        None => Ok(()),
    }
}

/// Which sides of the model are embedded under their own identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    /// Users and items both embedded directly.
    DirectDirect,
    /// Items embedded directly; users are sums of consumed item vectors.
    IndirectDirect,
    /// Only attributes are embedded; both sides are aggregated.
    IndirectIndirect,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::DirectDirect => "DirectDirect",
            ModelKind::IndirectDirect => "IndirectDirect",
            ModelKind::IndirectIndirect => "IndirectIndirect",
        }
    }

    /// Entity kinds the trainer writes records for.
    pub fn emits(self, kind: EntityKind) -> bool {
        matches!(
            (self, kind),
            (ModelKind::DirectDirect, EntityKind::User | EntityKind::Item)
                | (ModelKind::IndirectDirect, EntityKind::Item)
                | (ModelKind::IndirectIndirect, EntityKind::Attribute)
        )
    }

    pub fn items_direct(self) -> bool {
        self != ModelKind::IndirectIndirect
    }

    pub fn users_direct(self) -> bool {
        self == ModelKind::DirectDirect
    }
}

impl FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DirectDirect" => Ok(ModelKind::DirectDirect),
            "IndirectDirect" => Ok(ModelKind::IndirectDirect),
            "IndirectIndirect" => Ok(ModelKind::IndirectIndirect),
            other => Err(CoreError::InvalidIdentifier(other.to_string())),
        }
    }
}

/// Entity -> finite weight, iterated in ascending entity order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedAttributes {
    entries: BTreeMap<EntityId, f64>,
}

impl WeightedAttributes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (EntityId, f64)>) -> Result<Self> {
        let mut attrs = Self::new();
        for (entity, weight) in entries {
            attrs.insert(entity, weight)?;
        }
        Ok(attrs)
    }

    pub fn insert(&mut self, entity: EntityId, weight: f64) -> Result<Option<f64>> {
        if !weight.is_finite() {
            return Err(CoreError::NonFiniteWeight(entity.short_form()));
        }
        Ok(self.entries.insert(entity, weight))
    }

    pub fn get(&self, entity: &EntityId) -> Option<f64> {
        self.entries.get(entity).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, f64)> + '_ {
        self.entries.iter().map(|(e, w)| (e, *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_entries(self.iter().map(|(e, w)| (e.clone(), w * factor)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers_reject_separator_and_empty() {
        assert!(EmbeddingTypeId::new("mf", "a|b", 2).is_err());
        assert!(EmbeddingTypeId::new("", "x", 2).is_err());
        assert_eq!(
            EmbeddingTypeId::new("mf", "x", 0),
            Err(CoreError::ZeroDimension)
        );
        assert!(EntityId::item("").is_err());
        assert!(EntityId::item("a|b").is_err());
    }

    #[test]
    fn record_validation() {
        let t = EmbeddingTypeId::new("mf", "base", 2).unwrap();
        let e = EntityId::item("i1").unwrap();
        assert!(EmbeddingRecord::new(t.at(1), e.clone(), vec![1.0, 0.0]).is_ok());
        assert_eq!(
            EmbeddingRecord::new(t.at(1), e.clone(), vec![1.0]),
            Err(CoreError::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        );
        assert_eq!(
            EmbeddingRecord::new(t.at(1), e, vec![1.0, f64::NAN]),
            Err(CoreError::NonFiniteComponent { index: 1 })
        );
    }

    #[test]
    fn short_form_round_trips() {
        for e in [
            EntityId::attribute("sports").unwrap(),
            EntityId::item("i1").unwrap(),
            EntityId::user("u:1").unwrap(),
            EntityId::attribute("item:x").unwrap(),
        ] {
            assert_eq!(EntityId::parse_short(&e.short_form()).unwrap(), e);
        }
        assert_eq!(EntityId::attribute("tech").unwrap().short_form(), "tech");
        assert_eq!(EntityId::item("i9").unwrap().short_form(), "item:i9");
    }

    #[test]
    fn model_kind_discipline() {
        use EntityKind::*;
        assert!(ModelKind::DirectDirect.emits(User) && ModelKind::DirectDirect.emits(Item));
        assert!(!ModelKind::DirectDirect.emits(Attribute));
        assert!(ModelKind::IndirectDirect.emits(Item) && !ModelKind::IndirectDirect.emits(User));
        assert!(ModelKind::IndirectIndirect.emits(Attribute));
        assert!(!ModelKind::IndirectIndirect.emits(Item) && !ModelKind::IndirectIndirect.emits(User));
    }

    #[test]
    fn weights_must_be_finite() {
        let mut w = WeightedAttributes::new();
        assert!(w.insert(EntityId::attribute("a").unwrap(), f64::INFINITY).is_err());
        assert!(w.is_empty());
    }
}
