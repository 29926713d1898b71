//! Memory access traces: the event type, the `.hmt`/`.hmtx` file formats and
//! the synthetic workload generator.

mod format;
mod synth;

pub use format::{
    load_trace, read_trace, write_binary, write_text, TraceError, TraceFormat, TraceHeader,
    TraceReader, FORMAT_VERSION,
};
pub use synth::{PageClass, SynthError, SynthSpec};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::AccessKind;

/// One last-level-cache miss: `inst_gap` non-memory instructions precede it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub inst_gap: u32,
    pub address: u64,
    pub kind: AccessKind,
}

impl TraceEvent {
    pub fn read(inst_gap: u32, address: u64) -> Self {
        TraceEvent {
            inst_gap,
            address,
            kind: AccessKind::Read,
        }
    }

    pub fn write(inst_gap: u32, address: u64) -> Self {
        TraceEvent {
            inst_gap,
            address,
            kind: AccessKind::Write,
        }
    }
}

/// A fully loaded trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Arc<[TraceEvent]>,
}

impl Trace {
    pub fn new(app: impl Into<String>, events: Vec<TraceEvent>) -> Self {
        let instructions = events.iter().map(|e| e.inst_gap as u64 + 1).sum();
        let address_space = events
            .iter()
            .map(|e| e.address + 1)
            .max()
            .unwrap_or(0)
            .next_power_of_two();
        Trace {
            header: TraceHeader {
                version: FORMAT_VERSION,
                app: app.into(),
                instructions,
                address_space,
            },
            events: events.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.header.app
    }

    /// Misses per thousand instructions over the whole trace.
    pub fn mpki(&self) -> f64 {
        if self.header.instructions == 0 {
            return 0.0;
        }
        self.events.len() as f64 * 1000.0 / self.header.instructions as f64
    }

    /// Content hash (hex SHA-256 over the serialized binary form).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.header.app.as_bytes());
        for e in self.events.iter() {
            h.update(e.inst_gap.to_le_bytes());
            h.update(e.address.to_le_bytes());
            h.update([e.kind as u8]);
        }
        hex::encode(h.finalize())
    }
}
