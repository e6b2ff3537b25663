//! Weighted aggregation of attribute embeddings into one entity vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::types::{check_vector, EntityId, WeightedAttributes};
use crate::{CoreError, Result};

/// Result of an aggregation: the summed vector, if any attribute resolved,
/// and the attributes that had no vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub vector: Option<Vec<f64>>,
    pub misses: Vec<EntityId>,
}

/// `sum_a w_a * E(a)` over attributes that resolve, accumulated from zero in
/// ascending entity order. Unresolved attributes are skipped and reported.
/// Returns no vector when every attribute misses.
pub fn weighted_sum<F>(dimension: usize, attrs: &WeightedAttributes, mut lookup: F) -> Result<Aggregate>
where
    F: FnMut(&EntityId) -> Option<Vec<f64>>,
{
    if attrs.is_empty() {
        return Err(CoreError::EmptyAttributeSet);
    }
    let mut acc = vec![0.0; dimension];
    let mut hit = false;
    let mut misses = Vec::new();
    for (entity, weight) in attrs.iter() {
        match lookup(entity) {
            Some(v) => {
                check_vector(dimension, &v)?;
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += weight * x;
                }
                hit = true;
            }
            None => misses.push(entity.clone()),
        }
    }
    Ok(Aggregate {
        vector: hit.then_some(acc),
        misses,
    })
}
