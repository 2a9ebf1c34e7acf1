//! Flush+Reload and the transient-execution attacks built on it.
//!
//! Every attack is an experiment: it plants a secret, drives attacker and
//! victim code on a fresh core, and reads the oracle back with Flush+Reload.
//! Success means every secret byte was recovered exactly.

mod experiments;
pub(crate) mod lab;
pub mod layout;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{Privilege, PrivilegedFlushError};
use crate::microarch::{MachineState, RunError};

pub use experiments::{
    run_attack, run_meltdown_v3, run_meltdown_v3a, run_spectre_rsb, run_spectre_v1,
    run_spectre_v1_with, run_spectre_v4, speculative_load_outcome, speculative_load_test,
    V1Options, SPECULATIVE_LOAD_MARKER, SYSREG_TEST_VALUE, V3A_SYSREG,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    V1,
    V3,
    V3a,
    V4,
    Rsb,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::V1,
        Variant::V3,
        Variant::V3a,
        Variant::V4,
        Variant::Rsb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V3 => "v3",
            Variant::V3a => "v3a",
            Variant::V4 => "v4",
            Variant::Rsb => "rsb",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the speculative window is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowTrigger {
    #[serde(rename = "specload")]
    /// The one-instruction gadget: only asks whether anything runs transiently.
    SpeculativeLoad,
    /// The value the control transfer waits on has been evicted.
    CacheMiss,
    /// The value the control transfer waits on sits on an unmapped page.
    PageFault,
}

impl WindowTrigger {
    pub fn name(self) -> &'static str {
        match self {
            WindowTrigger::SpeculativeLoad => "specload",
            WindowTrigger::CacheMiss => "cachemiss",
            WindowTrigger::PageFault => "pagefault",
        }
    }

    pub fn from_name(s: &str) -> Option<WindowTrigger> {
        [
            WindowTrigger::SpeculativeLoad,
            WindowTrigger::CacheMiss,
            WindowTrigger::PageFault,
        ]
        .into_iter()
        .find(|w| w.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecretLocation {
    L1,
    #[serde(rename = "dram")]
    MainMemory,
}

impl SecretLocation {
    pub fn name(self) -> &'static str {
        match self {
            SecretLocation::L1 => "l1",
            SecretLocation::MainMemory => "dram",
        }
    }

    pub fn from_name(s: &str) -> Option<SecretLocation> {
        match s {
            "l1" => Some(SecretLocation::L1),
            "dram" => Some(SecretLocation::MainMemory),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scenario {
    pub window_trigger: WindowTrigger,
    /// Ignored by the speculative-load scenario.
    pub secret_location: SecretLocation,
}

impl Scenario {
    pub const fn new(window_trigger: WindowTrigger, secret_location: SecretLocation) -> Scenario {
        Scenario {
            window_trigger,
            secret_location,
        }
    }

    pub fn speculative_load() -> Scenario {
        Scenario::new(WindowTrigger::SpeculativeLoad, SecretLocation::L1)
    }

    pub fn name(&self) -> String {
        match self.window_trigger {
            WindowTrigger::SpeculativeLoad => "specload".to_string(),
            w => format!("{}-{}", w.name(), self.secret_location.name()),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub variant: Variant,
    pub profile: String,
    pub scenario: Scenario,
    pub success: bool,
    /// One entry per secret byte; `None` when the reload had no unique hit.
    pub recovered: Vec<Option<u8>>,
    pub expected: Vec<u8>,
    /// Reload latency of every oracle line, one row per secret byte.
    pub probe_latencies: Vec<Vec<i64>>,
    /// Distinct lines filled by squashed instructions over the experiment.
    pub transient_lines: usize,
    /// Why the experiment could not run to the end, if it could not.
    pub error: Option<String>,
}

impl AttackOutcome {
    pub(crate) fn new(
        variant: Variant,
        profile: &str,
        scenario: Scenario,
        expected: &[u8],
    ) -> AttackOutcome {
        AttackOutcome {
            variant,
            profile: profile.to_string(),
            scenario,
            success: false,
            recovered: Vec::new(),
            expected: expected.to_vec(),
            probe_latencies: Vec::new(),
            transient_lines: 0,
            error: None,
        }
    }

    pub(crate) fn finish(mut self) -> AttackOutcome {
        self.success = self.error.is_none()
            && self.recovered.len() == self.expected.len()
            && self
                .recovered
                .iter()
                .zip(&self.expected)
                .all(|(r, e)| *r == Some(*e));
        self
    }

    /// Recovered bytes as hex, `??` for bytes without a unique hit.
    pub fn recovered_hex(&self) -> String {
        self.recovered
            .iter()
            .map(|b| b.map_or("??".to_string(), |b| format!("{b:02x}")))
            .collect()
    }

    /// The report form: `{variant, profile, scenario, success, recovered_hex, probe_latencies}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant,
            "profile": self.profile,
            "scenario": self.scenario.name(),
            "success": self.success,
            "recovered_hex": self.recovered_hex(),
            "probe_latencies": self.probe_latencies,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("scenario {scenario} is not defined for {variant}")]
    UndefinedScenario {
        variant: Variant,
        scenario: Scenario,
    },
    #[error("secret must be 1..=64 bytes, got {0}")]
    SecretLength(usize),
    #[error(transparent)]
    Flush(#[from] PrivilegedFlushError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
}

/// Result of the reload phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub latencies: Vec<i64>,
    pub hits: Vec<bool>,
}

impl Probe {
    /// Index of the only line classified as a hit.
    pub fn unique_hit(&self) -> Option<usize> {
        let mut it = self.hits.iter().enumerate().filter(|(_, h)| **h);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|h| **h).count()
    }
}

/// Hit/miss threshold halfway between an L1 hit and a DRAM access.
pub fn default_threshold(state: &MachineState) -> i64 {
    let l = state.mem.latencies();
    ((l.l1 + l.dram) / 2) as i64
}

/// Flush `line_count` oracle lines from user mode, let `victim` run, then
/// time a reload of each line. A line is a hit iff its reload took fewer
/// than `threshold` cycles.
pub fn flush_reload<T>(
    state: &mut MachineState,
    oracle_base: u64,
    line_count: usize,
    threshold: i64,
    victim: impl FnOnce(&mut MachineState) -> T,
) -> Result<(Probe, T), PrivilegedFlushError> {
    flush_lines(state, oracle_base, line_count)?;
    let out = victim(state);
    Ok((reload(state, oracle_base, line_count, threshold), out))
}

/// Phase one of Flush+Reload on its own.
pub fn flush_lines(
    state: &mut MachineState,
    oracle_base: u64,
    line_count: usize,
) -> Result<(), PrivilegedFlushError> {
    let privileged = state.flush_is_privileged;
    for i in 0..line_count as u64 {
        state
            .mem
            .flush_line(oracle_base + i * 64, Privilege::User, privileged)?;
    }
    Ok(())
}

/// Phase three of Flush+Reload on its own.
pub fn reload(
    state: &mut MachineState,
    oracle_base: u64,
    line_count: usize,
    threshold: i64,
) -> Probe {
    let mut latencies = Vec::with_capacity(line_count);
    for i in 0..line_count as u64 {
        let (dt, _) = state
            .mem
            .timed_access(oracle_base + i * 64, Privilege::User)
            .expect("oracle is mapped user memory");
        latencies.push(dt);
    }
    let hits = latencies.iter().map(|&l| l < threshold).collect();
    Probe { latencies, hits }
}
