use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::types::{check_vector, EmbeddingTypeId, EmbeddingVersion, WeightedAttributes};
use crate::{CoreError, Result};

/// One item as stored in the index: filter fields, fallback attributes and
/// zero or more versioned vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDocument {
    pub item_id: String,
    pub provider_id: String,
    /// Empty means untargeted.
    pub geo_targets: BTreeSet<String>,
    pub attributes: WeightedAttributes,
    pub vectors: BTreeMap<EmbeddingVersion, Vec<f64>>,
}

impl IndexedDocument {
    pub fn new(item_id: impl Into<String>, provider_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            provider_id: provider_id.into(),
            geo_targets: BTreeSet::new(),
            attributes: WeightedAttributes::new(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (version, v) in &self.vectors {
            check_vector(version.type_id.dimension(), v)?;
        }
        Ok(())
    }

    /// Versions held for one embedding type.
    pub fn versions_of<'a>(
        &'a self,
        type_id: &'a EmbeddingTypeId,
    ) -> impl Iterator<Item = &'a EmbeddingVersion> + 'a {
        self.vectors.keys().filter(move |v| &v.type_id == type_id)
    }

    pub fn is_eligible(&self, user_geo: &str, blocked_providers: &BTreeSet<String>) -> bool {
        !blocked_providers.contains(&self.provider_id)
            && (self.geo_targets.is_empty() || self.geo_targets.contains(user_geo))
    }
}

/// The user-side embedding: a vector and the exact version it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEmbedding {
    pub version: EmbeddingVersion,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationQuery {
    pub type_id: EmbeddingTypeId,
    pub user: Option<UserEmbedding>,
    pub user_attributes: WeightedAttributes,
    pub user_geo: String,
    pub blocked_providers: BTreeSet<String>,
    pub k: usize,
}

impl RecommendationQuery {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(CoreError::ZeroBudget);
        }
        if let Some(user) = &self.user {
            if user.version.type_id != self.type_id {
                return Err(CoreError::TypeMismatch);
            }
            check_vector(self.type_id.dimension(), &user.vector)?;
        }
        Ok(())
    }

    pub fn user_version(&self) -> Option<&EmbeddingVersion> {
        self.user.as_ref().map(|u| &u.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMode {
    Embedding,
    Fallback,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Embedding => "embedding",
            ScoreMode::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResult {
    pub item_id: String,
    pub score: f64,
    pub mode: ScoreMode,
    /// Key of the document vector the score was computed from.
    pub version_used: Option<EmbeddingVersion>,
}

impl ScoredResult {
    /// Ranking order: higher score first, then ascending item id.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.item_id.cmp(&other.item_id))
    }
}

/// Counters collected while scoring one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreAudit {
    pub candidates: u64,
    pub embedding_scored: u64,
    pub fallback_scored: u64,
    /// Inner products whose document vector version differed from the query
    /// version. Must always be zero.
    pub cross_version: u64,
    /// Fallback scores for documents that hold a vector of the query type,
    /// but under a different version.
    pub version_miss_fallback: u64,
}

impl core::ops::AddAssign for ScoreAudit {
    fn add_assign(&mut self, rhs: Self) {
        self.candidates += rhs.candidates;
        self.embedding_scored += rhs.embedding_scored;
        self.fallback_scored += rhs.fallback_scored;
        self.cross_version += rhs.cross_version;
        self.version_miss_fallback += rhs.version_miss_fallback;
    }
}

pub(crate) fn inner_product(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

/// `sum over shared attributes of min(user weight, item weight)`, in
/// ascending attribute order.
pub(crate) fn attribute_overlap(user: &WeightedAttributes, item: &WeightedAttributes) -> f64 {
    let mut acc = 0.0;
    for (entity, wu) in user.iter() {
        if let Some(wi) = item.get(entity) {
            acc += wu.min(wi);
        }
    }
    acc
}

/// Scores one eligible document against the query.
pub(crate) fn score_document(
    q: &RecommendationQuery,
    doc: &IndexedDocument,
    fallback_weight: f64,
    audit: &mut ScoreAudit,
) -> ScoredResult {
    audit.candidates += 1;
    if let Some(user) = &q.user {
        if let Some((key, v)) = doc.vectors.get_key_value(&user.version) {
            audit.embedding_scored += 1;
            if key != &user.version {
                audit.cross_version += 1;
            }
            return ScoredResult {
                item_id: doc.item_id.clone(),
                score: inner_product(&user.vector, v),
                mode: ScoreMode::Embedding,
                version_used: Some(key.clone()),
            };
        }
        if doc.versions_of(&q.type_id).next().is_some() {
            audit.version_miss_fallback += 1;
        }
    }
    audit.fallback_scored += 1;
    ScoredResult {
        item_id: doc.item_id.clone(),
        score: fallback_weight * attribute_overlap(&q.user_attributes, &doc.attributes),
        mode: ScoreMode::Fallback,
        version_used: None,
    }
}
