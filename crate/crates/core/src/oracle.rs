//! Linear-scan reference for [`IndexGeneration::search`](crate::IndexGeneration::search).
//!
//! Shares only the data types with the engine path: filtering, scoring and
//! ranking are re-derived here with plain loops and a full sort.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::document::{IndexedDocument, RecommendationQuery, ScoreMode, ScoredResult};

#[allow(clippy::needless_range_loop)]
pub fn brute_force<'a>(
    q: &RecommendationQuery,
    docs: impl IntoIterator<Item = &'a IndexedDocument>,
    fallback_weight: f64,
) -> Vec<ScoredResult> {
    let mut scored = Vec::new();
    for doc in docs {
        let mut blocked = false;
        for p in &q.blocked_providers {
            if *p == doc.provider_id {
                blocked = true;
            }
        }
        let mut geo_ok = doc.geo_targets.is_empty();
        for region in &doc.geo_targets {
            if *region == q.user_geo {
                geo_ok = true;
            }
        }
        if blocked || !geo_ok {
            continue;
        }

        let mut matched = None;
        if let Some(user) = &q.user {
            for (version, v) in &doc.vectors {
                if *version == user.version {
                    let mut s = 0.0;
                    for j in 0..user.vector.len() {
                        s += user.vector[j] * v[j];
                    }
                    matched = Some((version.clone(), s));
                }
            }
        }
        scored.push(match matched {
            Some((version, score)) => ScoredResult {
                item_id: doc.item_id.clone(),
                score,
                mode: ScoreMode::Embedding,
                version_used: Some(version),
            },
            None => {
                let mut overlap = 0.0;
                for (attr, wu) in q.user_attributes.iter() {
                    for (other, wi) in doc.attributes.iter() {
                        if attr == other {
                            overlap += if wu < wi { wu } else { wi };
                        }
                    }
                }
                ScoredResult {
                    item_id: doc.item_id.clone(),
                    score: fallback_weight * overlap,
                    mode: ScoreMode::Fallback,
                    version_used: None,
                }
            }
        });
    }
    scored.sort_by(|a, b| {
        if a.score > b.score {
            Ordering::Less
        } else if a.score < b.score {
            Ordering::Greater
        } else {
            a.item_id.cmp(&b.item_id)
        }
    });
    scored.truncate(q.k);
    scored
}
