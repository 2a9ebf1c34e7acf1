use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Fetch,
    Execute,
    Retire,
    Squash,
    Fill,
    Fault,
    Predict,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Fetch => "fetch",
            EventKind::Execute => "execute",
            EventKind::Retire => "retire",
            EventKind::Squash => "squash",
            EventKind::Fill => "fill",
            EventKind::Fault => "fault",
            EventKind::Predict => "predict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    /// Dynamic instruction number (fetch order).
    pub seq: u64,
    pub kind: EventKind,
    pub pc: usize,
    pub detail: String,
}

/// What a run did, cycle by cycle. Events are only kept when recording is
/// on; the transient set and counters are always maintained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// Cache lines filled by instructions that were later squashed.
    pub transient_set: BTreeSet<u64>,
    /// Redirects of any cause.
    pub squashes: u64,
    pub mispredicts: u64,
    pub faults: u64,
    pub retired: u64,
}

impl Trace {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// `cycle kind detail`, one event per line.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(
                out,
                "{} {} pc={} {}",
                e.cycle,
                e.kind.as_str(),
                e.pc,
                e.detail
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.events).expect("trace events serialize")
    }

    pub(crate) fn sort(&mut self) {
        self.events
            .sort_by_key(|e| (e.cycle, e.seq, kind_rank(e.kind)));
    }
}

fn kind_rank(k: EventKind) -> u8 {
    match k {
        EventKind::Fetch => 0,
        EventKind::Predict => 1,
        EventKind::Execute => 2,
        EventKind::Fill => 3,
        EventKind::Fault => 4,
        EventKind::Squash => 5,
        EventKind::Retire => 6,
    }
}
