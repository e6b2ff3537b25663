//! Service mode: newline-delimited JSON over TCP, one thread per
//! connection, one response line per request line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use embserve_core::{EmbeddingTypeId, EntityId, EntityKind};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::engine::IndexMode;
use crate::error::EoError;
use crate::indexer::{ChangeRequest, ChangeFeed};
use crate::orchestrator::{EoApi, UserRef, VersionPair};
use crate::scenario::{Scenario, World};
use crate::serving::UserRequest;
use crate::sim::Deployment;
use crate::wire::{attrs_from_map, result_json, TypeRef};

/// Scenario used when none is given on the command line.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/quickstart.json");

#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    /// Scenario providing types, catalog, users and publisher rules.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Embedding snapshot to load instead of running the trainer.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

impl SourceArgs {
    pub fn world(&self) -> Result<World> {
        let scenario = match &self.scenario {
            Some(path) => Scenario::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => Scenario::from_json(DEFAULT_SCENARIO)?,
        };
        Ok(World::new(scenario)?)
    }

    pub fn deployment(&self) -> Result<Arc<Deployment>> {
        prepare(&self.world()?, self.snapshot.as_deref())
    }
}

/// Builds a deployment, fills the store from the snapshot or by running
/// every trainer cycle, then polls and runs one full indexing cycle so the
/// latest version is in use.
pub fn prepare(world: &World, snapshot: Option<&Path>) -> Result<Arc<Deployment>> {
    let dep = Deployment::new(world)?;
    match snapshot {
        Some(path) => {
            dep.store
                .load_snapshot(path)
                .with_context(|| format!("loading snapshot {}", path.display()))?;
        }
        None => {
            let universe = world.entities();
            for t in &world.types {
                let mut trainer = crate::trainer::Trainer::new(world.trainer_config(&t.type_id), Arc::clone(&dep.store));
                for tf in 1..=world.scenario.trainer.cycles {
                    trainer.run_cycle(&universe, tf)?;
                }
            }
        }
    }
    for t in &world.types {
        dep.eo.poll(&t.type_id)?;
    }
    let catalog = world.catalog_at(0);
    match world.mode {
        IndexMode::Shadow => {
            dep.indexer.run_shadow_cycle(catalog, &*dep.eo, &*dep.engine)?;
        }
        IndexMode::Incremental => {
            let request = ChangeRequest {
                additions: catalog.clone(),
                live_catalog: catalog,
                ..Default::default()
            };
            let feed = Arc::clone(&dep.store) as Arc<dyn ChangeFeed>;
            dep.indexer.run_incremental_batch(request, feed, &*dep.eo, &*dep.engine)?;
        }
    }
    Ok(Arc::new(dep))
}

fn error_line(code: &str, message: impl std::fmt::Display) -> Value {
    json!({"ok": false, "error": code, "message": message.to_string()})
}

fn states_line(p: &VersionPair) -> Value {
    json!({
        "ok": true,
        "latest": p.latest.as_ref().map(|v| v.time_frame),
        "in_use": p.in_use.as_ref().map(|v| v.time_frame),
    })
}

fn vector_line(tf: u64, vec: &[f64], misses: &[EntityId]) -> Value {
    let misses: Vec<String> = misses.iter().map(EntityId::short_form).collect();
    json!({"ok": true, "tf": tf, "vec": vec, "misses": misses})
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum EoRequest {
    GetUserEmbedding {
        #[serde(rename = "type")]
        type_ref: TypeRef,
        #[serde(default)]
        user_id: Option<String>,
        #[serde(default)]
        attrs: Option<BTreeMap<String, f64>>,
    },
    GetEntityEmbedding {
        #[serde(rename = "type")]
        type_ref: TypeRef,
        tf: u64,
        kind: String,
        id: String,
    },
    Aggregate {
        #[serde(rename = "type")]
        type_ref: TypeRef,
        tf: u64,
        attrs: BTreeMap<String, f64>,
    },
    GetStates {
        #[serde(rename = "type")]
        type_ref: TypeRef,
    },
    SetInUse {
        #[serde(rename = "type")]
        type_ref: TypeRef,
        tf: u64,
    },
    Poll {
        #[serde(rename = "type")]
        type_ref: TypeRef,
    },
}

fn resolve(dep: &Deployment, t: &TypeRef) -> Result<EmbeddingTypeId, EoError> {
    dep.eo.resolve_type(&t.algo, &t.config)
}

fn eo_op(dep: &Deployment, req: EoRequest) -> Result<Value, EoError> {
    let invalid = |e: embserve_core::CoreError| EoError::Core(e);
    match req {
        EoRequest::GetUserEmbedding { type_ref, user_id, attrs } => {
            let type_id = resolve(dep, &type_ref)?;
            let user = match (attrs, user_id) {
                (Some(attrs), _) => UserRef::Attributes(attrs_from_map(&attrs).map_err(invalid)?),
                (None, Some(id)) => UserRef::Id(id),
                (None, None) => return Err(EoError::Core(embserve_core::CoreError::InvalidIdentifier("user_id or attrs required".into()))),
            };
            Ok(match dep.eo.get_user_embedding(&type_id, &user)? {
                Some(r) => vector_line(r.embedding.version.time_frame, &r.embedding.vector, &r.misses),
                None => json!({"ok": true, "absent": true}),
            })
        }
        EoRequest::GetEntityEmbedding { type_ref, tf, kind, id } => {
            let type_id = resolve(dep, &type_ref)?;
            let kind: EntityKind = kind.parse().map_err(invalid)?;
            let entity = EntityId::new(kind, id).map_err(invalid)?;
            Ok(match dep.eo.get_entity_embedding(&type_id.at(tf), &entity)? {
                Some(v) => vector_line(tf, &v, &[]),
                None => json!({"ok": true, "absent": true}),
            })
        }
        EoRequest::Aggregate { type_ref, tf, attrs } => {
            let type_id = resolve(dep, &type_ref)?;
            let attrs = attrs_from_map(&attrs).map_err(invalid)?;
            let agg = dep.eo.aggregate_embedding(&type_id.at(tf), &attrs)?;
            Ok(match agg.vector {
                Some(v) => vector_line(tf, &v, &agg.misses),
                None => json!({"ok": true, "absent": true}),
            })
        }
        EoRequest::GetStates { type_ref } => Ok(states_line(&dep.eo.states(&resolve(dep, &type_ref)?)?)),
        EoRequest::SetInUse { type_ref, tf } => {
            let type_id = resolve(dep, &type_ref)?;
            Ok(states_line(&dep.eo.set_version_in_use(&type_id.at(tf))?))
        }
        EoRequest::Poll { type_ref } => Ok(states_line(&dep.eo.poll(&resolve(dep, &type_ref)?)?)),
    }
}

/// Handles one orchestrator protocol line.
pub fn handle_eo_request(dep: &Deployment, line: &str) -> String {
    let value = match serde_json::from_str::<EoRequest>(line) {
        Ok(req) => eo_op(dep, req).unwrap_or_else(|e| error_line(e.code(), e)),
        Err(e) => error_line("InvalidRequest", e),
    };
    value.to_string()
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum RecsRequest {
    Recommend {
        user_id: String,
        #[serde(default)]
        attrs: BTreeMap<String, f64>,
        geo: String,
        #[serde(default)]
        publisher: String,
        k: usize,
        #[serde(rename = "type")]
        type_ref: TypeRef,
    },
}

/// Handles one recommendation protocol line.
pub fn handle_recs_request(dep: &Deployment, line: &str) -> String {
    let req = match serde_json::from_str::<RecsRequest>(line) {
        Ok(r) => r,
        Err(e) => return error_line("InvalidRequest", e).to_string(),
    };
    let RecsRequest::Recommend { user_id, attrs, geo, publisher, k, type_ref } = req;
    let Some(type_id) = dep.serving.type_by_name(&type_ref.algo, &type_ref.config).cloned() else {
        return error_line("UnknownType", format!("{}|{}", type_ref.algo, type_ref.config)).to_string();
    };
    let user_attributes = match attrs_from_map(&attrs) {
        Ok(a) => a,
        Err(e) => return error_line("InvalidRequest", e).to_string(),
    };
    if k == 0 {
        return error_line("InvalidRequest", "k must be at least 1").to_string();
    }
    let req = UserRequest {
        user_id,
        user_attributes,
        user_geo: geo,
        publisher_id: publisher,
        k,
    };
    match dep.serving.recommend(&req, &type_id) {
        Ok(results) => {
            let results: Vec<Value> = results.iter().map(result_json).collect();
            json!({"ok": true, "results": results}).to_string()
        }
        Err(e) => {
            let mut v = error_line(e.code(), &e);
            v["retryable"] = json!(e.is_retryable());
            v.to_string()
        }
    }
}

/// Answers every line of `input` on `output`, in order.
pub fn handle_stream<R: BufRead, W: Write>(input: R, mut output: W, handler: impl Fn(&str) -> String) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        output.write_all(handler(&line).as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

fn serve(addr: &str, dep: Arc<Deployment>, handler: fn(&Deployment, &str) -> String) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let dep = Arc::clone(&dep);
        std::thread::spawn(move || {
            if let Err(e) = serve_connection(stream, &dep, handler) {
                eprintln!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, dep: &Deployment, handler: fn(&Deployment, &str) -> String) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    handle_stream(reader, stream, |line| handler(dep, line))
}

pub fn serve_eo(addr: &str, dep: Arc<Deployment>) -> Result<()> {
    serve(addr, dep, handle_eo_request)
}

pub fn serve_recs(addr: &str, dep: Arc<Deployment>) -> Result<()> {
    serve(addr, dep, handle_recs_request)
}
