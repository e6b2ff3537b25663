//! The serving layer: resolves the user's in-use embedding through the
//! orchestrator, assembles the query with business-rule filters and runs it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use embserve_core::{EmbeddingTypeId, IndexGeneration, ModelKind, RecommendationQuery, ScoredResult, SearchOutcome, WeightedAttributes};

use crate::engine::SearchEngine;
use crate::error::ServingError;
use crate::orchestrator::{EoApi, ResolvedUser, UserRef};

#[derive(Debug, Clone, PartialEq)]
pub struct UserRequest {
    pub user_id: String,
    /// Profile weights; for indirect user models these also drive the
    /// aggregated user embedding.
    pub user_attributes: WeightedAttributes,
    pub user_geo: String,
    pub publisher_id: String,
    pub k: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PublisherRules {
    pub publisher_id: String,
    pub blocked_providers: BTreeSet<String>,
}

/// Pure query assembly. Fallback attributes are always carried so embedding
/// and fallback scores can be ranked together.
pub fn build_query(
    req: &UserRequest,
    type_id: &EmbeddingTypeId,
    eo_response: Option<&ResolvedUser>,
    rules: Option<&PublisherRules>,
) -> RecommendationQuery {
    RecommendationQuery {
        type_id: type_id.clone(),
        user: eo_response.map(|r| r.embedding.clone()),
        user_attributes: req.user_attributes.clone(),
        user_geo: req.user_geo.clone(),
        blocked_providers: rules.map(|r| r.blocked_providers.clone()).unwrap_or_default(),
        k: req.k,
    }
}

/// Everything one request saw, for auditing.
#[derive(Debug, Clone)]
pub struct ServedResponse {
    pub query: RecommendationQuery,
    pub generation: Arc<IndexGeneration>,
    pub outcome: SearchOutcome,
}

pub struct Serving {
    eo: Arc<dyn EoApi>,
    engine: Arc<SearchEngine>,
    model_kinds: BTreeMap<EmbeddingTypeId, ModelKind>,
    rules: BTreeMap<String, PublisherRules>,
}

impl Serving {
    pub fn new(
        eo: Arc<dyn EoApi>,
        engine: Arc<SearchEngine>,
        model_kinds: BTreeMap<EmbeddingTypeId, ModelKind>,
        rules: impl IntoIterator<Item = PublisherRules>,
    ) -> Self {
        Self {
            eo,
            engine,
            model_kinds,
            rules: rules.into_iter().map(|r| (r.publisher_id.clone(), r)).collect(),
        }
    }

    pub fn type_ids(&self) -> impl Iterator<Item = &EmbeddingTypeId> {
        self.model_kinds.keys()
    }

    /// Finds a served type by `(algorithm, config)` name.
    pub fn type_by_name(&self, algo: &str, config: &str) -> Option<&EmbeddingTypeId> {
        self.model_kinds.keys().find(|t| t.name_pair() == (algo, config))
    }

    fn user_ref(&self, req: &UserRequest, type_id: &EmbeddingTypeId) -> UserRef {
        match self.model_kinds.get(type_id) {
            Some(kind) if !kind.users_direct() => UserRef::Attributes(req.user_attributes.clone()),
            _ => UserRef::Id(req.user_id.clone()),
        }
    }

    pub fn recommend(&self, req: &UserRequest, type_id: &EmbeddingTypeId) -> Result<Vec<ScoredResult>, ServingError> {
        Ok(self.recommend_traced(req, type_id)?.outcome.results)
    }

    pub fn recommend_traced(&self, req: &UserRequest, type_id: &EmbeddingTypeId) -> Result<ServedResponse, ServingError> {
        let user = self.user_ref(req, type_id);
        let resolved = match &user {
            UserRef::Attributes(a) if a.is_empty() => None,
            _ => self.eo.get_user_embedding(type_id, &user)?,
        };
        let query = build_query(req, type_id, resolved.as_ref(), self.rules.get(&req.publisher_id));
        let generation = self.engine.snapshot();
        let outcome = self.engine.execute_on(&generation, &query)?;
        Ok(ServedResponse {
            query,
            generation,
            outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use embserve_core::{EmbeddingVersion, EntityId, UserEmbedding};

    fn ty() -> EmbeddingTypeId {
        EmbeddingTypeId::new("mf", "base", 2).unwrap()
    }

    fn req() -> UserRequest {
        UserRequest {
            user_id: "u1".into(),
            user_attributes: WeightedAttributes::from_entries([(EntityId::attribute("sports").unwrap(), 0.5)]).unwrap(),
            user_geo: "US".into(),
            publisher_id: "pub1".into(),
            k: 3,
        }
    }

    #[test]
    fn query_without_eo_response_is_pure_fallback() {
        let q = build_query(&req(), &ty(), None, None);
        assert!(q.user.is_none());
        assert_eq!(q.user_attributes.len(), 1);
        assert!(q.blocked_providers.is_empty());
    }

    #[test]
    fn query_carries_eo_version_verbatim() {
        let resolved = ResolvedUser {
            embedding: UserEmbedding {
                version: EmbeddingVersion::new(ty(), 2),
                vector: vec![0.25, 0.75],
            },
            misses: vec![],
        };
        let rules = PublisherRules {
            publisher_id: "pub1".into(),
            blocked_providers: ["p9".to_string()].into(),
        };
        let q = build_query(&req(), &ty(), Some(&resolved), Some(&rules));
        assert_eq!(q.user_version(), Some(&ty().at(2)));
        assert_eq!(q.user.unwrap().vector, vec![0.25, 0.75]);
        assert_eq!(q.blocked_providers, ["p9".to_string()].into());
    }
}
