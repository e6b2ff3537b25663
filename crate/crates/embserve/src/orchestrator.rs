//! The embeddings orchestrator: the only component that knows which
//! version the serving layer may use.
//!
//! Per embedding type it holds a `latest` version, advanced by polling the
//! store, and a `version in-use`, advanced only when the indexing layer
//! reports that every item carries that version. Serving never names a
//! version; it asks for the type and receives the in-use vector together
//! with the version it was resolved under, read in the same critical
//! section.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use embserve_core::{
    weighted_sum, Aggregate, EmbeddingTypeId, EmbeddingVersion, EntityId, ModelKind, UserEmbedding, VersionState,
    WeightedAttributes,
};
use lru::LruCache;
use parking_lot::{Mutex, RwLock};

use crate::error::EoError;
use crate::store::EmbeddingStore;

/// `(latest, in_use)` read atomically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VersionPair {
    pub latest: Option<EmbeddingVersion>,
    pub in_use: Option<EmbeddingVersion>,
}

/// How serving identifies the user: by id for direct user models, by
/// weighted attributes (features or consumed items) for indirect ones.
#[derive(Debug, Clone, PartialEq)]
pub enum UserRef {
    Id(String),
    Attributes(WeightedAttributes),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedUser {
    pub embedding: UserEmbedding,
    pub misses: Vec<EntityId>,
}

/// Orchestrator operations as seen by the indexing and serving layers.
pub trait EoApi: Send + Sync {
    fn poll(&self, type_id: &EmbeddingTypeId) -> Result<VersionPair, EoError>;
    fn states(&self, type_id: &EmbeddingTypeId) -> Result<VersionPair, EoError>;
    fn set_version_in_use(&self, version: &EmbeddingVersion) -> Result<VersionPair, EoError>;
    fn get_entity_embedding(
        &self,
        version: &EmbeddingVersion,
        entity: &EntityId,
    ) -> Result<Option<Vec<f64>>, EoError>;
    fn aggregate_embedding(
        &self,
        version: &EmbeddingVersion,
        attrs: &WeightedAttributes,
    ) -> Result<Aggregate, EoError>;
    fn get_user_embedding(
        &self,
        type_id: &EmbeddingTypeId,
        user: &UserRef,
    ) -> Result<Option<ResolvedUser>, EoError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

type VectorCache = Mutex<LruCache<(u64, EntityId), Vec<f64>>>;

struct TypeEntry {
    model_kind: ModelKind,
    state: RwLock<VersionState>,
    cache: Option<VectorCache>,
    hits: AtomicU64,
    misses: AtomicU64,
}

pub struct Orchestrator {
    store: Arc<EmbeddingStore>,
    types: RwLock<BTreeMap<(String, String), Arc<TypeEntry>>>,
    cache_capacity: usize,
}

impl Orchestrator {
    /// `cache_capacity` is the per-type entry cap; zero disables caching.
    pub fn new(store: Arc<EmbeddingStore>, cache_capacity: usize) -> Self {
        Self {
            store,
            types: RwLock::new(BTreeMap::new()),
            cache_capacity,
        }
    }

    pub fn store(&self) -> &Arc<EmbeddingStore> {
        &self.store
    }

    pub fn register_type(&self, type_id: EmbeddingTypeId, model_kind: ModelKind) -> Result<(), EoError> {
        self.store
            .register_type(&type_id)
            .map_err(|e| EoError::UnknownType(e.to_string()))?;
        let key = (type_id.algorithm_name().to_string(), type_id.config_tag().to_string());
        let entry = TypeEntry {
            model_kind,
            state: RwLock::new(VersionState::new(type_id)),
            cache: NonZeroUsize::new(self.cache_capacity).map(|cap| Mutex::new(LruCache::new(cap))),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        };
        self.types.write().entry(key).or_insert_with(|| Arc::new(entry));
        Ok(())
    }

    /// Resolves a type by its `(algorithm, config)` name.
    pub fn resolve_type(&self, algo: &str, config: &str) -> Result<EmbeddingTypeId, EoError> {
        let types = self.types.read();
        types
            .get(&(algo.to_string(), config.to_string()))
            .map(|e| e.state.read().type_id().clone())
            .ok_or_else(|| EoError::UnknownType(format!("{algo}|{config}")))
    }

    pub fn model_kind(&self, type_id: &EmbeddingTypeId) -> Result<ModelKind, EoError> {
        Ok(self.entry(type_id)?.model_kind)
    }

    pub fn type_ids(&self) -> Vec<EmbeddingTypeId> {
        self.types.read().values().map(|e| e.state.read().type_id().clone()).collect()
    }

    pub fn cache_stats(&self, type_id: &EmbeddingTypeId) -> Result<CacheStats, EoError> {
        let e = self.entry(type_id)?;
        Ok(CacheStats {
            hits: e.hits.load(Ordering::Relaxed),
            misses: e.misses.load(Ordering::Relaxed),
        })
    }

    fn entry(&self, type_id: &EmbeddingTypeId) -> Result<Arc<TypeEntry>, EoError> {
        let types = self.types.read();
        let entry = types
            .get(&(type_id.algorithm_name().to_string(), type_id.config_tag().to_string()))
            .filter(|e| e.state.read().type_id() == type_id)
            .ok_or_else(|| EoError::UnknownType(type_id.to_string()))?;
        Ok(Arc::clone(entry))
    }

    fn pair(state: &VersionState) -> VersionPair {
        VersionPair {
            latest: state.latest().cloned(),
            in_use: state.in_use().cloned(),
        }
    }

    /// Cached store read. Only hits are cached: an absent record at a
    /// version may still be written later.
    fn lookup(&self, entry: &TypeEntry, version: &EmbeddingVersion, entity: &EntityId) -> Option<Vec<f64>> {
        let key = (version.time_frame, entity.clone());
        if let Some(cache) = &entry.cache {
            if let Some(v) = cache.lock().get(&key) {
                entry.hits.fetch_add(1, Ordering::Relaxed);
                return Some(v.clone());
            }
        }
        entry.misses.fetch_add(1, Ordering::Relaxed);
        let found = self.store.get(version, entity)?;
        if let Some(cache) = &entry.cache {
            cache.lock().put(key, found.clone());
        }
        Some(found)
    }

    fn aggregate_with(&self, entry: &TypeEntry, version: &EmbeddingVersion, attrs: &WeightedAttributes) -> Result<Aggregate, EoError> {
        Ok(weighted_sum(version.type_id.dimension(), attrs, |e| self.lookup(entry, version, e))?)
    }
}

impl EoApi for Orchestrator {
    fn poll(&self, type_id: &EmbeddingTypeId) -> Result<VersionPair, EoError> {
        let entry = self.entry(type_id)?;
        let newest = self.store.max_time_frame(type_id);
        let mut state = entry.state.write();
        if let Some(tf) = newest {
            state.observe_latest(tf);
        }
        Ok(Self::pair(&state))
    }

    fn states(&self, type_id: &EmbeddingTypeId) -> Result<VersionPair, EoError> {
        let entry = self.entry(type_id)?;
        let state = entry.state.read();
        Ok(Self::pair(&state))
    }

    fn set_version_in_use(&self, version: &EmbeddingVersion) -> Result<VersionPair, EoError> {
        let entry = self.entry(&version.type_id)?;
        let mut state = entry.state.write();
        let unchanged = state.in_use() == Some(version);
        if !unchanged && !self.store.contains_version(version) {
            return Err(EoError::UnknownVersion(version.time_frame));
        }
        state.set_in_use(version)?;
        Ok(Self::pair(&state))
    }

    fn get_entity_embedding(
        &self,
        version: &EmbeddingVersion,
        entity: &EntityId,
    ) -> Result<Option<Vec<f64>>, EoError> {
        let entry = self.entry(&version.type_id)?;
        Ok(self.lookup(&entry, version, entity))
    }

    fn aggregate_embedding(
        &self,
        version: &EmbeddingVersion,
        attrs: &WeightedAttributes,
    ) -> Result<Aggregate, EoError> {
        let entry = self.entry(&version.type_id)?;
        self.aggregate_with(&entry, version, attrs)
    }

    fn get_user_embedding(
        &self,
        type_id: &EmbeddingTypeId,
        user: &UserRef,
    ) -> Result<Option<ResolvedUser>, EoError> {
        let entry = self.entry(type_id)?;
        // Held for the whole resolution so the returned version is the one
        // in use at the moment the vector was read.
        let state = entry.state.read();
        let Some(version) = state.in_use().cloned() else {
            return Ok(None);
        };
        let resolved = match (entry.model_kind.users_direct(), user) {
            (true, UserRef::Id(id)) => {
                let Ok(entity) = EntityId::user(id.as_str()) else {
                    return Ok(None);
                };
                self.lookup(&entry, &version, &entity).map(|vector| (vector, Vec::new()))
            }
            (false, UserRef::Attributes(attrs)) if !attrs.is_empty() => {
                let agg = self.aggregate_with(&entry, &version, attrs)?;
                agg.vector.map(|v| (v, agg.misses))
            }
            _ => None,
        };
        Ok(resolved.map(|(vector, misses)| ResolvedUser {
            embedding: UserEmbedding { version, vector },
            misses,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use embserve_core::EmbeddingRecord;

    fn ty() -> EmbeddingTypeId {
        EmbeddingTypeId::new("mf", "base", 2).unwrap()
    }

    fn setup(kind: ModelKind) -> Orchestrator {
        let eo = Orchestrator::new(Arc::new(EmbeddingStore::new()), 16);
        eo.register_type(ty(), kind).unwrap();
        eo
    }

    fn put(eo: &Orchestrator, tf: u64, e: EntityId, v: [f64; 2]) {
        eo.store()
            .put_batch(vec![EmbeddingRecord::new(ty().at(tf), e, v.to_vec()).unwrap()])
            .unwrap();
    }

    fn attr(s: &str) -> EntityId {
        EntityId::attribute(s).unwrap()
    }

    #[test]
    fn poll_advances_latest_only() {
        let eo = setup(ModelKind::DirectDirect);
        assert_eq!(eo.poll(&ty()).unwrap(), VersionPair::default());
        put(&eo, 1, EntityId::item("i1").unwrap(), [1.0, 0.0]);
        let p = eo.poll(&ty()).unwrap();
        assert_eq!((p.latest, p.in_use), (Some(ty().at(1)), None));
        eo.set_version_in_use(&ty().at(1)).unwrap();
        put(&eo, 3, EntityId::item("i1").unwrap(), [1.0, 0.0]);
        let p = eo.poll(&ty()).unwrap();
        assert_eq!((p.latest.clone(), p.in_use.clone()), (Some(ty().at(3)), Some(ty().at(1))));
        assert_eq!(eo.poll(&ty()).unwrap(), p);
    }

    #[test]
    fn set_in_use_validation() {
        let eo = setup(ModelKind::DirectDirect);
        put(&eo, 1, EntityId::item("i1").unwrap(), [1.0, 0.0]);
        put(&eo, 2, EntityId::item("i1").unwrap(), [1.0, 0.0]);
        assert_eq!(eo.set_version_in_use(&ty().at(1)), Err(EoError::UnknownVersion(1)));
        eo.poll(&ty()).unwrap();
        assert_eq!(eo.set_version_in_use(&ty().at(7)), Err(EoError::UnknownVersion(7)));
        eo.set_version_in_use(&ty().at(2)).unwrap();
        assert_eq!(
            eo.set_version_in_use(&ty().at(1)),
            Err(EoError::RegressingVersion { current: 2, requested: 1 })
        );
        assert_eq!(eo.set_version_in_use(&ty().at(2)).unwrap().in_use, Some(ty().at(2)));
    }

    #[test]
    fn entity_lookups_hit_the_cache() {
        let eo = setup(ModelKind::DirectDirect);
        let i1 = EntityId::item("i1").unwrap();
        put(&eo, 1, i1.clone(), [1.0, 0.0]);
        let first = eo.get_entity_embedding(&ty().at(1), &i1).unwrap().unwrap();
        let second = eo.get_entity_embedding(&ty().at(1), &i1).unwrap().unwrap();
        assert_eq!(first, vec![1.0, 0.0]);
        assert_eq!(first.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), second.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(eo.cache_stats(&ty()).unwrap(), CacheStats { hits: 1, misses: 1 });
        assert_eq!(eo.get_entity_embedding(&ty().at(1), &EntityId::item("i9").unwrap()).unwrap(), None);
    }

    #[test]
    fn aggregation_cases() {
        let eo = setup(ModelKind::IndirectIndirect);
        put(&eo, 1, attr("a"), [1.0, 0.0]);
        put(&eo, 1, attr("b"), [0.0, 3.0]);
        let v = ty().at(1);
        let w = WeightedAttributes::from_entries([(attr("a"), 2.0), (attr("b"), 1.0)]).unwrap();
        assert_eq!(eo.aggregate_embedding(&v, &w).unwrap().vector, Some(vec![2.0, 3.0]));
        let w = WeightedAttributes::from_entries([(attr("a"), 1.0), (attr("c"), 5.0)]).unwrap();
        let agg = eo.aggregate_embedding(&v, &w).unwrap();
        assert_eq!((agg.vector, agg.misses), (Some(vec![1.0, 0.0]), vec![attr("c")]));
        let w = WeightedAttributes::from_entries([(attr("c"), 5.0)]).unwrap();
        assert_eq!(eo.aggregate_embedding(&v, &w).unwrap().vector, None);
        assert_eq!(eo.aggregate_embedding(&v, &WeightedAttributes::new()), Err(EoError::EmptyAttributeSet));
    }

    #[test]
    fn user_embedding_follows_in_use() {
        let eo = setup(ModelKind::DirectDirect);
        let user = UserRef::Id("u1".into());
        assert_eq!(eo.get_user_embedding(&ty(), &user).unwrap(), None);
        put(&eo, 1, EntityId::user("u1").unwrap(), [0.5, 0.5]);
        eo.poll(&ty()).unwrap();
        assert_eq!(eo.get_user_embedding(&ty(), &user).unwrap(), None);
        eo.set_version_in_use(&ty().at(1)).unwrap();
        put(&eo, 2, EntityId::user("u1").unwrap(), [9.0, 9.0]);
        eo.poll(&ty()).unwrap();
        let r = eo.get_user_embedding(&ty(), &user).unwrap().unwrap();
        assert_eq!(r.embedding, UserEmbedding { version: ty().at(1), vector: vec![0.5, 0.5] });
        assert_eq!(eo.get_user_embedding(&ty(), &UserRef::Id("ghost".into())).unwrap(), None);
    }

    #[test]
    fn indirect_user_is_aggregated() {
        let eo = setup(ModelKind::IndirectIndirect);
        put(&eo, 1, attr("a"), [1.0, 0.0]);
        put(&eo, 1, attr("b"), [0.0, 1.0]);
        eo.poll(&ty()).unwrap();
        eo.set_version_in_use(&ty().at(1)).unwrap();
        let w = WeightedAttributes::from_entries([(attr("a"), 1.0), (attr("b"), 1.0)]).unwrap();
        let r = eo.get_user_embedding(&ty(), &UserRef::Attributes(w)).unwrap().unwrap();
        assert_eq!(r.embedding.version, ty().at(1));
        assert_eq!(r.embedding.vector, vec![1.0, 1.0]);
        assert_eq!(eo.get_user_embedding(&ty(), &UserRef::Id("u1".into())).unwrap(), None);
    }

    #[test]
    fn unknown_types_are_rejected() {
        let eo = setup(ModelKind::DirectDirect);
        let other = EmbeddingTypeId::new("fm", "x", 2).unwrap();
        assert!(matches!(eo.states(&other), Err(EoError::UnknownType(_))));
        let wrong_dim = EmbeddingTypeId::new("mf", "base", 3).unwrap();
        assert!(matches!(eo.states(&wrong_dim), Err(EoError::UnknownType(_))));
        assert_eq!(eo.resolve_type("mf", "base").unwrap(), ty());
    }

    #[test]
    fn concurrent_resolution_never_tears() {
        let eo = Arc::new(setup(ModelKind::DirectDirect));
        let u = EntityId::user("u1").unwrap();
        for tf in 1..=40u64 {
            put(&eo, tf, u.clone(), [tf as f64, 0.0]);
        }
        eo.poll(&ty()).unwrap();
        let writer = {
            let eo = Arc::clone(&eo);
            std::thread::spawn(move || {
                for tf in 1..=40u64 {
                    eo.set_version_in_use(&ty().at(tf)).unwrap();
                }
            })
        };
        for _ in 0..2000 {
            if let Some(r) = eo.get_user_embedding(&ty(), &UserRef::Id("u1".into())).unwrap() {
                assert_eq!(r.embedding.vector[0], r.embedding.version.time_frame as f64);
            }
        }
        writer.join().unwrap();
    }
}
