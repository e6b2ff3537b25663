mod common;

use common::*;
use embserve::engine::IndexTarget;
use embserve::sim::Deployment;
use embserve_core::ScoreMode;

#[test]
fn without_in_use_every_result_is_fallback() {
    let w = world(quickstart_json());
    let dep = Deployment::new(&w).unwrap();
    train(&w, &dep, 1, 1);
    poll(&w, &dep);
    let generation = dep.engine.build_generation(builder_docs(&w)).unwrap();
    dep.engine.swap_generation(generation).unwrap();
    let results = dep.serving.recommend(&request("u1", "US", "pub2", 3), &type_id(&w)).unwrap();
    assert!(!results.is_empty());
    assert!(results.iter().all(|r| r.mode == ScoreMode::Fallback && r.version_used.is_none()));
}

fn builder_docs(w: &embserve::scenario::World) -> Vec<embserve_core::IndexedDocument> {
    w.catalog_at(0)
        .into_iter()
        .map(|item| {
            let mut d = embserve_core::IndexedDocument::new(item.item_id, item.provider_id);
            d.geo_targets = item.geo_targets;
            d.attributes = item.attributes;
            d
        })
        .collect()
}

fn served() -> (embserve::scenario::World, Deployment) {
    let w = world(quickstart_json());
    let dep = Deployment::new(&w).unwrap();
    train(&w, &dep, 1, 1);
    poll(&w, &dep);
    dep.indexer.run_shadow_cycle(w.catalog_at(0), &*dep.eo, &*dep.engine).unwrap();
    (w, dep)
}

#[test]
fn equal_scores_break_ties_by_item_id() {
    let (w, dep) = served();
    let results = dep.serving.recommend(&request("u1", "US", "pub2", 2), &type_id(&w)).unwrap();
    let top: Vec<(&str, f64, ScoreMode)> = results.iter().map(|r| (r.item_id.as_str(), r.score, r.mode)).collect();
    assert_eq!(top, vec![("i1", 0.5, ScoreMode::Embedding), ("i2", 0.5, ScoreMode::Embedding)]);
}

#[test]
fn geo_targeted_items_are_filtered() {
    let (w, dep) = served();
    let t = type_id(&w);
    let us = dep.serving.recommend(&request("u1", "US", "pub2", 10), &t).unwrap();
    assert!(us.iter().any(|r| r.item_id == "i3"));
    let fr = dep.serving.recommend(&request("u1", "FR", "pub2", 10), &t).unwrap();
    assert!(fr.iter().all(|r| r.item_id != "i3"));
    assert_eq!(fr.len(), 2);
}

#[test]
fn publisher_blocklists_are_applied() {
    let (w, dep) = served();
    let results = dep.serving.recommend(&request("u1", "US", "pub1", 10), &type_id(&w)).unwrap();
    assert!(results.iter().all(|r| r.item_id != "i3"));
}

#[test]
fn unknown_user_gets_fallback_results() {
    let (w, dep) = served();
    let results = dep.serving.recommend(&request("nobody", "US", "pub2", 10), &type_id(&w)).unwrap();
    assert!(results.iter().all(|r| r.mode == ScoreMode::Fallback));
    assert_eq!(results[0].item_id, "i1");
}
