#![allow(dead_code)]

use std::sync::Arc;

use embserve::indexer::{ChangeFeed, ChangeRequest};
use embserve::orchestrator::EoApi;
use embserve::scenario::{Scenario, World};
use embserve::service::DEFAULT_SCENARIO;
use embserve::serving::UserRequest;
use embserve::sim::Deployment;
use embserve::trainer::Trainer;
use embserve_core::{EmbeddingTypeId, WeightedAttributes};
use serde_json::Value;

pub fn quickstart_json() -> Value {
    serde_json::from_str(DEFAULT_SCENARIO).unwrap()
}

pub fn scenario_file(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(scenario_file(name)).unwrap()
}

pub fn world(json: Value) -> World {
    World::new(serde_json::from_value::<Scenario>(json).unwrap()).unwrap()
}

pub fn type_id(world: &World) -> EmbeddingTypeId {
    world.types[0].type_id.clone()
}

/// Runs trainer cycles `from..=to` for every type.
pub fn train(world: &World, dep: &Deployment, from: u64, to: u64) {
    let universe = world.entities();
    for t in &world.types {
        let mut trainer = Trainer::new(world.trainer_config(&t.type_id), Arc::clone(&dep.store));
        for tf in from..=to {
            trainer.run_cycle(&universe, tf).unwrap();
        }
    }
}

pub fn poll(world: &World, dep: &Deployment) {
    for t in &world.types {
        dep.eo.poll(&t.type_id).unwrap();
    }
}

pub fn feed(dep: &Deployment) -> Arc<dyn ChangeFeed> {
    Arc::clone(&dep.store) as Arc<dyn ChangeFeed>
}

pub fn full_batch(world: &World) -> ChangeRequest {
    let catalog = world.catalog_at(0);
    ChangeRequest {
        additions: catalog.clone(),
        live_catalog: catalog,
        ..Default::default()
    }
}

pub fn request(user: &str, geo: &str, publisher: &str, k: usize) -> UserRequest {
    UserRequest {
        user_id: user.to_string(),
        user_attributes: WeightedAttributes::from_entries([(embserve_core::EntityId::attribute("sports").unwrap(), 0.5)]).unwrap(),
        user_geo: geo.to_string(),
        publisher_id: publisher.to_string(),
        k,
    }
}
