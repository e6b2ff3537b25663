//! Trace files: a header line carrying the scenario and seed, then one
//! event per line.

use std::io::{BufRead, Write};

use embserve_core::hash::fnv1a64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SimError;
use crate::scenario::Scenario;

pub const TRACE_FORMAT: &str = "embserve-trace";
pub const TRACE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    /// Strictly increasing, starting at 1.
    pub step: u64,
    /// Scheduler opportunity the step ran at.
    pub tick: u64,
    pub actor: String,
    pub action: String,
    /// FNV-1a of the step's outcome, as 16 hex digits.
    pub digest: String,
}

impl TraceEvent {
    pub fn new(step: u64, tick: u64, actor: &str, action: String, payload: &str) -> Self {
        Self {
            step,
            tick,
            actor: actor.to_string(),
            action,
            digest: digest(payload),
        }
    }
}

pub fn digest(payload: &str) -> String {
    format!("{:016x}", fnv1a64(payload.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u64,
    pub seed: u64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(scenario: Scenario, seed: u64, events: Vec<TraceEvent>) -> Self {
        Self {
            header: TraceHeader {
                format: TRACE_FORMAT.to_string(),
                version: TRACE_VERSION,
                seed,
                scenario,
            },
            events,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        out
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, SimError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| SimError::TraceFormat("empty trace".into()))??;
        let header: TraceHeader =
            serde_json::from_str(&first).map_err(|e| SimError::TraceFormat(format!("header: {e}")))?;
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(SimError::TraceFormat(format!("unsupported trace {} v{}", header.format, header.version)));
        }
        let mut events: Vec<TraceEvent> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent =
                serde_json::from_str(&line).map_err(|err| SimError::TraceFormat(format!("line {}: {err}", n + 2)))?;
            if events.last().is_some_and(|p| p.step >= e.step || p.tick >= e.tick) {
                return Err(SimError::TraceFormat(format!("line {}: step ordinals must increase", n + 2)));
            }
            events.push(e);
        }
        Ok(Self { header, events })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SimError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), SimError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))?;
        Ok(())
    }
}

/// Compact one-line form used in failure reports.
pub fn event_line(e: &TraceEvent) -> Value {
    Value::String(format!("{} @{} {} {} {}", e.step, e.tick, e.actor, e.action, e.digest))
}
