//! Random query instances compared against the linear-scan reference.

use std::collections::BTreeSet;

use embserve_core::hash::SplitMix64;
use embserve_core::oracle::brute_force;
use embserve_core::{
    EmbeddingTypeId, EntityId, IndexBuilder, IndexedDocument, RecommendationQuery, ScoreMode, ScoredResult,
    UserEmbedding, WeightedAttributes,
};
use serde_json::{json, Value};

use super::SimError;
use crate::scenario::{Scenario, World};

pub const MAX_DOCS: u64 = 200;
const PROVIDERS: u64 = 6;
const REGIONS: [&str; 4] = ["US", "FR", "DE", "JP"];
const ATTRIBUTES: u64 = 12;
const TIME_FRAMES: u64 = 3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleCheckReport {
    pub instances: u64,
    pub mismatches: u64,
    pub first_mismatch: Option<String>,
    pub documents: u64,
    pub embedding_results: u64,
    pub fallback_results: u64,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }

    pub fn to_json(&self) -> Value {
        json!({
            "instances": self.instances,
            "mismatches": self.mismatches,
            "first_mismatch": self.first_mismatch,
            "documents": self.documents,
            "embedding_results": self.embedding_results,
            "fallback_results": self.fallback_results,
            "pass": self.passed(),
        })
    }
}

/// Mostly continuous values, with a share of small integers so that equal
/// scores, and hence the id tie-break, come up regularly.
fn component(rng: &mut SplitMix64) -> f64 {
    if rng.below(10) < 3 {
        rng.below(5) as f64 - 2.0
    } else {
        rng.unit() * 2.0 - 1.0
    }
}

fn vector(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| component(rng)).collect()
}

fn attributes(rng: &mut SplitMix64) -> WeightedAttributes {
    let mut attrs = WeightedAttributes::new();
    for _ in 0..rng.below(5) {
        let a = EntityId::attribute(format!("a{}", rng.below(ATTRIBUTES))).expect("valid id");
        let w = match rng.below(4) {
            0 => 0.25,
            1 => 0.5,
            2 => 1.0,
            _ => rng.unit(),
        };
        attrs.insert(a, w).expect("finite weight");
    }
    attrs
}

/// One random index and query of the given type.
pub fn random_instance(rng: &mut SplitMix64, type_id: &EmbeddingTypeId) -> (Vec<IndexedDocument>, RecommendationQuery) {
    let dim = type_id.dimension();
    let n = rng.below(MAX_DOCS + 1);
    let docs = (0..n)
        .map(|i| {
            let mut d = IndexedDocument::new(format!("d{i:03}"), format!("p{}", rng.below(PROVIDERS)));
            if rng.below(10) < 3 {
                for _ in 0..=rng.below(2) {
                    d.geo_targets.insert(REGIONS[rng.below(REGIONS.len() as u64) as usize].to_string());
                }
            }
            d.attributes = attributes(rng);
            for tf in 1..=TIME_FRAMES {
                if rng.below(2) == 0 {
                    d.vectors.insert(type_id.at(tf), vector(rng, dim));
                }
            }
            d
        })
        .collect();
    let user = (rng.below(5) != 0).then(|| UserEmbedding {
        version: type_id.at(1 + rng.below(TIME_FRAMES)),
        vector: vector(rng, dim),
    });
    let blocked: BTreeSet<String> = (0..rng.below(3)).map(|_| format!("p{}", rng.below(PROVIDERS))).collect();
    let q = RecommendationQuery {
        type_id: type_id.clone(),
        user,
        user_attributes: attributes(rng),
        user_geo: REGIONS[rng.below(REGIONS.len() as u64) as usize].to_string(),
        blocked_providers: blocked,
        k: 1 + rng.below(30) as usize,
    };
    (docs, q)
}

fn same(a: &[ScoredResult], b: &[ScoredResult]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.item_id == y.item_id
                && x.mode == y.mode
                && x.version_used == y.version_used
                && x.score.to_bits() == y.score.to_bits()
        })
}

/// Compares the engine with the reference on one instance, and with itself
/// after permuting the insertion order.
pub fn compare_instance(
    rng: &mut SplitMix64,
    docs: &[IndexedDocument],
    q: &RecommendationQuery,
    fallback_weight: f64,
) -> Result<Vec<ScoredResult>, String> {
    let mut builder = IndexBuilder::new();
    docs.iter().cloned().for_each(|d| builder.add(d));
    let generation = builder.build(1).map_err(|e| e.to_string())?;
    let got = generation.search(q, fallback_weight).map_err(|e| e.to_string())?.results;
    let expected = brute_force(q, docs, fallback_weight);
    if !same(&got, &expected) {
        return Err(format!("engine {got:?} != reference {expected:?}"));
    }
    let mut shuffled = docs.to_vec();
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.below(i as u64 + 1) as usize);
    }
    let mut builder = IndexBuilder::new();
    shuffled.into_iter().for_each(|d| builder.add(d));
    let permuted = builder.build(2).map_err(|e| e.to_string())?;
    let again = permuted.search(q, fallback_weight).map_err(|e| e.to_string())?.results;
    if !same(&got, &again) {
        return Err("result depends on insertion order".into());
    }
    Ok(got)
}

/// Runs `instances` random instances over the scenario's embedding types,
/// seeded by its interleaving seed.
pub fn oracle_check(scenario: &Scenario, instances: u64) -> Result<OracleCheckReport, SimError> {
    let world = World::new(scenario.clone())?;
    let mut rng = SplitMix64::new(scenario.interleaving_seed);
    let mut report = OracleCheckReport {
        instances,
        ..Default::default()
    };
    for n in 0..instances {
        let type_id = &world.types[(n % world.types.len() as u64) as usize].type_id;
        let (docs, q) = random_instance(&mut rng, type_id);
        report.documents += docs.len() as u64;
        match compare_instance(&mut rng, &docs, &q, scenario.fallback_weight) {
            Ok(results) => {
                let embedding = results.iter().filter(|r| r.mode == ScoreMode::Embedding).count() as u64;
                report.embedding_results += embedding;
                report.fallback_results += results.len() as u64 - embedding;
            }
            Err(msg) => {
                report.mismatches += 1;
                report.first_mismatch.get_or_insert(format!("instance {n}: {msg}"));
            }
        }
    }
    Ok(report)
}
