//! One generation of the search index: a forward store of documents plus
//! inverted postings for the provider and geo-target filter fields.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::document::{score_document, IndexedDocument, RecommendationQuery, ScoreAudit, ScoredResult};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexGeneration {
    id: u64,
    docs: BTreeMap<String, IndexedDocument>,
    by_provider: BTreeMap<String, BTreeSet<String>>,
    by_geo: BTreeMap<String, BTreeSet<String>>,
    untargeted: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub generation: u64,
    pub results: Vec<ScoredResult>,
    pub audit: ScoreAudit,
}

/// Collects documents for a new generation.
#[derive(Debug, Default)]
pub struct IndexBuilder {
    docs: Vec<IndexedDocument>,
}

impl IndexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, doc: IndexedDocument) {
        self.docs.push(doc);
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn build(self, id: u64) -> Result<IndexGeneration> {
        let mut generation = IndexGeneration::empty(id);
        for doc in self.docs {
            doc.validate()?;
            if generation.docs.contains_key(&doc.item_id) {
                return Err(CoreError::DuplicateItemId(doc.item_id));
            }
            generation.insert(doc);
        }
        Ok(generation)
    }
}

impl IndexGeneration {
    pub fn empty(id: u64) -> Self {
        Self {
            id,
            ..Self::default()
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn set_id(&mut self, id: u64) {
        self.id = id;
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&IndexedDocument> {
        self.docs.get(item_id)
    }

    /// Documents in ascending item id order.
    pub fn documents(&self) -> impl Iterator<Item = &IndexedDocument> + '_ {
        self.docs.values()
    }

    fn insert(&mut self, doc: IndexedDocument) {
        let id = doc.item_id.clone();
        self.by_provider
            .entry(doc.provider_id.clone())
            .or_default()
            .insert(id.clone());
        if doc.geo_targets.is_empty() {
            self.untargeted.insert(id.clone());
        } else {
            for region in &doc.geo_targets {
                self.by_geo.entry(region.clone()).or_default().insert(id.clone());
            }
        }
        self.docs.insert(id, doc);
    }

    fn unlink(postings: &mut BTreeMap<String, BTreeSet<String>>, key: &str, item_id: &str) {
        if let Some(set) = postings.get_mut(key) {
            set.remove(item_id);
            if set.is_empty() {
                postings.remove(key);
            }
        }
    }

    /// Removes a document from the forward store and all postings.
    pub fn delete(&mut self, item_id: &str) -> Result<IndexedDocument> {
        let doc = self
            .docs
            .remove(item_id)
            .ok_or_else(|| CoreError::UnknownItem(String::from(item_id)))?;
        Self::unlink(&mut self.by_provider, &doc.provider_id, item_id);
        if doc.geo_targets.is_empty() {
            self.untargeted.remove(item_id);
        } else {
            for region in &doc.geo_targets {
                Self::unlink(&mut self.by_geo, region, item_id);
            }
        }
        Ok(doc)
    }

    /// Delete-then-index. Returns the replaced document, if any.
    pub fn upsert(&mut self, doc: IndexedDocument) -> Result<Option<IndexedDocument>> {
        doc.validate()?;
        let old = self.delete(&doc.item_id).ok();
        self.insert(doc);
        Ok(old)
    }

    /// Filtered, version-scoped top-k. Candidates are the untargeted
    /// documents plus those targeting the user's region, minus blocked
    /// providers; every candidate is scored exhaustively.
    pub fn search(&self, q: &RecommendationQuery, fallback_weight: f64) -> Result<SearchOutcome> {
        q.validate()?;
        let mut blocked: BTreeSet<&str> = BTreeSet::new();
        for provider in &q.blocked_providers {
            if let Some(items) = self.by_provider.get(provider) {
                blocked.extend(items.iter().map(String::as_str));
            }
        }
        let targeted = self.by_geo.get(&q.user_geo);
        let candidates = self
            .untargeted
            .iter()
            .chain(targeted.into_iter().flatten())
            .filter(|id| !blocked.contains(id.as_str()));

        let mut audit = ScoreAudit::default();
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(q.k + 1);
        for id in candidates {
            let doc = &self.docs[id];
            heap.push(Ranked(score_document(q, doc, fallback_weight, &mut audit)));
            if heap.len() > q.k {
                heap.pop();
            }
        }
        let mut results: Vec<ScoredResult> = heap.into_iter().map(|r| r.0).collect();
        results.sort_by(ScoredResult::rank_cmp);
        Ok(SearchOutcome {
            generation: self.id,
            results,
            audit,
        })
    }
}

/// Max-heap entry whose greatest element is the worst-ranked result.
struct Ranked(ScoredResult);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{ScoreMode, UserEmbedding};
    use crate::types::{EmbeddingTypeId, EntityId, WeightedAttributes};

    fn ty() -> EmbeddingTypeId {
        EmbeddingTypeId::new("mf", "base", 2).unwrap()
    }

    fn doc(id: &str, provider: &str, v: Option<[f64; 2]>) -> IndexedDocument {
        let mut d = IndexedDocument::new(id, provider);
        if let Some(v) = v {
            d.vectors.insert(ty().at(1), v.to_vec());
        }
        d
    }

    fn query(u: Option<[f64; 2]>, k: usize) -> RecommendationQuery {
        RecommendationQuery {
            type_id: ty(),
            user: u.map(|v| UserEmbedding {
                version: ty().at(1),
                vector: v.to_vec(),
            }),
            user_attributes: WeightedAttributes::new(),
            user_geo: "US".into(),
            blocked_providers: BTreeSet::new(),
            k,
        }
    }

    fn build(docs: Vec<IndexedDocument>) -> IndexGeneration {
        let mut b = IndexBuilder::new();
        docs.into_iter().for_each(|d| b.add(d));
        b.build(1).unwrap()
    }

    #[test]
    fn empty_generation_returns_nothing() {
        let g = IndexBuilder::new().build(0).unwrap();
        assert!(g.search(&query(Some([1.0, 0.0]), 3), 1.0).unwrap().results.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut b = IndexBuilder::new();
        b.add(doc("i1", "p", None));
        b.add(doc("i1", "p", None));
        assert_eq!(b.build(1), Err(CoreError::DuplicateItemId("i1".into())));
    }

    #[test]
    fn inner_product_scores() {
        let g = build(vec![doc("a", "p", Some([0.0, 1.0])), doc("b", "p", Some([3.0, 4.0]))]);
        let out = g.search(&query(Some([1.0, 2.0]), 5), 1.0).unwrap();
        assert_eq!(out.results[0].item_id, "b");
        assert_eq!(out.results[0].score, 11.0);
        assert_eq!(out.results[0].mode, ScoreMode::Embedding);
        assert_eq!(out.results[0].version_used, Some(ty().at(1)));
        let orth = g.search(&query(Some([1.0, 0.0]), 5), 1.0).unwrap();
        let a = orth.results.iter().find(|r| r.item_id == "a").unwrap();
        assert_eq!((a.score, a.mode), (0.0, ScoreMode::Embedding));
    }

    #[test]
    fn fallback_uses_min_overlap() {
        let mut d = doc("x", "p", None);
        d.attributes = WeightedAttributes::from_entries([(EntityId::attribute("sports").unwrap(), 0.3)]).unwrap();
        let g = build(vec![d]);
        let mut q = query(Some([1.0, 0.0]), 1);
        q.user_attributes = WeightedAttributes::from_entries([
            (EntityId::attribute("sports").unwrap(), 0.5),
            (EntityId::attribute("tech").unwrap(), 0.2),
        ])
        .unwrap();
        let out = g.search(&q, 1.0).unwrap();
        assert_eq!(out.results[0].score, 0.3);
        assert_eq!(out.results[0].mode, ScoreMode::Fallback);
        assert_eq!(out.results[0].version_used, None);
    }

    #[test]
    fn filters_geo_and_provider() {
        let mut fr = doc("fr_only", "p1", Some([9.0, 9.0]));
        fr.geo_targets.insert("FR".into());
        let blocked = doc("blocked", "p9", Some([9.0, 9.0]));
        let ok = doc("ok", "p1", Some([0.0, 0.0]));
        let g = build(vec![fr, blocked, ok]);
        let mut q = query(Some([1.0, 1.0]), 10);
        q.blocked_providers.insert("p9".into());
        let ids: Vec<_> = g.search(&q, 1.0).unwrap().results.into_iter().map(|r| r.item_id).collect();
        assert_eq!(ids, vec!["ok"]);
    }

    #[test]
    fn ties_break_by_item_id() {
        let g = build(vec![doc("i2", "p", Some([0.0, 1.0])), doc("i1", "p", Some([1.0, 0.0]))]);
        let out = g.search(&query(Some([0.5, 0.5]), 2), 1.0).unwrap();
        let ids: Vec<_> = out.results.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(ids, ["i1", "i2"]);
    }

    #[test]
    fn upsert_replaces_and_delete_removes() {
        let mut g = build(vec![doc("i1", "p", Some([1.0, 0.0]))]);
        let mut newer = doc("i1", "q", None);
        newer.vectors.insert(ty().at(2), vec![0.0, 1.0]);
        g.upsert(newer).unwrap();
        let d = g.get("i1").unwrap();
        assert_eq!(d.vectors.len(), 1);
        assert!(d.vectors.contains_key(&ty().at(2)));
        assert_eq!(d.provider_id, "q");
        g.delete("i1").unwrap();
        assert!(g.get("i1").is_none());
        assert_eq!(g.delete("i1"), Err(CoreError::UnknownItem("i1".into())));
        assert!(g.search(&query(None, 3), 1.0).unwrap().results.is_empty());
    }

    #[test]
    fn version_miss_is_audited() {
        let g = build(vec![doc("i1", "p", Some([1.0, 0.0]))]);
        let mut q = query(Some([1.0, 0.0]), 1);
        q.user.as_mut().unwrap().version = ty().at(2);
        let out = g.search(&q, 1.0).unwrap();
        assert_eq!(out.results[0].mode, ScoreMode::Fallback);
        assert_eq!(out.audit.version_miss_fallback, 1);
        assert_eq!(out.audit.cross_version, 0);
    }

    #[test]
    fn query_dimension_checked() {
        let g = build(vec![]);
        let mut q = query(Some([1.0, 0.0]), 1);
        q.user.as_mut().unwrap().vector.push(1.0);
        assert!(matches!(g.search(&q, 1.0), Err(CoreError::DimensionMismatch { .. })));
        assert_eq!(g.search(&query(None, 0), 1.0), Err(CoreError::ZeroBudget));
    }
}
