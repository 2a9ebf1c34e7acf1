use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::countermeasures::MitigationSet;
use crate::memory::{CacheGeometry, EvictionParams, GeometryError, Latencies};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    InOrder,
    OutOfOrder,
}

/// What a `RET` predicts when the RSB is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RsbUnderflow {
    StopPredicting,
    RingBuffer,
    SwitchToBtb,
}

/// Fate of cache fills still in flight when a misprediction squashes the
/// load that started them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SquashPolicy {
    CancelInflightFills,
    KeepInflightFills,
}

/// Value dependents of a faulting privileged load see before the fault is
/// raised at retirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExceptionPolicy {
    DeferredForwardValue,
    DeferredForwardZero,
}

/// Everything that makes one simulated core behave like a particular CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuProfile {
    pub name: String,
    pub pipeline: Pipeline,
    pub rsb_size: usize,
    pub rsb_underflow: RsbUnderflow,
    pub squash_policy: SquashPolicy,
    pub branch_resolve_extra: u64,
    pub return_resolve_extra: u64,
    pub stl_speculation: bool,
    pub exception_policy: ExceptionPolicy,
    pub sysreg_transient_forward: bool,
    pub latencies: Latencies,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    /// Verified (N, A, D) eviction loop; `None` means only the sweep works.
    pub eviction: Option<EvictionParams>,
    pub rob_size: usize,
    pub pht_index_bits: u32,
    pub counter_resolution: u64,
    pub mitigations: MitigationSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("unknown profile `{0}`")]
    Unknown(String),
    #[error("rsb_size {0} outside 4..=32")]
    RsbSize(usize),
    #[error("latencies must satisfy l1 < l2 < dram < page_fault")]
    LatencyOrder,
    #[error("cache geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("rob_size must be positive")]
    RobSize,
    #[error("counter_resolution must be positive")]
    CounterResolution,
    #[error("pht_index_bits {0} outside 1..=16")]
    PhtBits(u32),
    #[error("rsb_flush_on_cs and rsb_refill_on_cs are mutually exclusive")]
    ExclusiveMitigations,
}

pub const PROFILE_NAMES: [&str; 5] = [
    "cortex_a53",
    "cortex_a8",
    "cortex_a9",
    "cortex_a72",
    "intel_i7",
];

const KB: usize = 1024;

impl CpuProfile {
    fn base(name: &str) -> CpuProfile {
        CpuProfile {
            name: name.to_string(),
            pipeline: Pipeline::InOrder,
            rsb_size: 8,
            rsb_underflow: RsbUnderflow::StopPredicting,
            squash_policy: SquashPolicy::CancelInflightFills,
            branch_resolve_extra: 0,
            return_resolve_extra: 0,
            stl_speculation: false,
            exception_policy: ExceptionPolicy::DeferredForwardZero,
            sysreg_transient_forward: false,
            latencies: Latencies::default(),
            l1: CacheGeometry::with_capacity(32 * KB, 4),
            l2: CacheGeometry::with_capacity(512 * KB, 16),
            eviction: None,
            rob_size: 128,
            pht_index_bits: 6,
            counter_resolution: 1,
            mitigations: MitigationSet::default(),
        }
    }

    pub fn cortex_a53() -> CpuProfile {
        CpuProfile {
            eviction: Some(EvictionParams { n: 21, a: 2, d: 5 }),
            ..CpuProfile::base("cortex_a53")
        }
    }

    pub fn cortex_a8() -> CpuProfile {
        CpuProfile {
            l2: CacheGeometry::with_capacity(256 * KB, 8),
            ..CpuProfile::base("cortex_a8")
        }
    }

    pub fn cortex_a9() -> CpuProfile {
        CpuProfile {
            pipeline: Pipeline::OutOfOrder,
            squash_policy: SquashPolicy::CancelInflightFills,
            branch_resolve_extra: 0,
            return_resolve_extra: 0,
            l2: CacheGeometry::with_capacity(512 * KB, 8),
            eviction: Some(EvictionParams { n: 10, a: 3, d: 6 }),
            rob_size: 40,
            ..CpuProfile::base("cortex_a9")
        }
    }

    pub fn cortex_a72() -> CpuProfile {
        CpuProfile {
            pipeline: Pipeline::OutOfOrder,
            rsb_size: 16,
            rsb_underflow: RsbUnderflow::StopPredicting,
            squash_policy: SquashPolicy::KeepInflightFills,
            branch_resolve_extra: 20,
            return_resolve_extra: 0,
            stl_speculation: true,
            exception_policy: ExceptionPolicy::DeferredForwardZero,
            sysreg_transient_forward: true,
            l1: CacheGeometry::with_capacity(32 * KB, 2),
            l2: CacheGeometry::with_capacity(1024 * KB, 16),
            eviction: Some(EvictionParams { n: 7, a: 1, d: 16 }),
            ..CpuProfile::base("cortex_a72")
        }
    }

    pub fn intel_i7() -> CpuProfile {
        CpuProfile {
            pipeline: Pipeline::OutOfOrder,
            rsb_size: 16,
            rsb_underflow: RsbUnderflow::SwitchToBtb,
            squash_policy: SquashPolicy::KeepInflightFills,
            branch_resolve_extra: 20,
            return_resolve_extra: 20,
            stl_speculation: true,
            exception_policy: ExceptionPolicy::DeferredForwardValue,
            sysreg_transient_forward: true,
            l1: CacheGeometry::with_capacity(32 * KB, 8),
            l2: CacheGeometry::with_capacity(256 * KB, 8),
            rob_size: 192,
            ..CpuProfile::base("intel_i7")
        }
    }

    /// Looks up a built-in profile by name.
    pub fn builtin(name: &str) -> Result<CpuProfile, ProfileError> {
        match name {
            "cortex_a53" => Ok(CpuProfile::cortex_a53()),
            "cortex_a8" => Ok(CpuProfile::cortex_a8()),
            "cortex_a9" => Ok(CpuProfile::cortex_a9()),
            "cortex_a72" => Ok(CpuProfile::cortex_a72()),
            "intel_i7" => Ok(CpuProfile::intel_i7()),
            other => Err(ProfileError::Unknown(other.to_string())),
        }
    }

    /// All built-in profiles, in table order.
    pub fn all() -> Vec<CpuProfile> {
        PROFILE_NAMES
            .iter()
            .map(|n| CpuProfile::builtin(n).expect("builtin"))
            .collect()
    }

    pub fn is_out_of_order(&self) -> bool {
        self.pipeline == Pipeline::OutOfOrder
    }

    /// Underflow policy after mitigations: with the BTB fallback disabled a
    /// switch-to-btb core stops predicting instead.
    pub fn effective_underflow(&self) -> RsbUnderflow {
        match self.rsb_underflow {
            RsbUnderflow::SwitchToBtb if self.mitigations.btb_fallback_disabled => {
                RsbUnderflow::StopPredicting
            }
            p => p,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(4..=32).contains(&self.rsb_size) {
            return Err(ProfileError::RsbSize(self.rsb_size));
        }
        if !self.latencies.is_ordered() {
            return Err(ProfileError::LatencyOrder);
        }
        self.l1.check()?;
        self.l2.check()?;
        if self.rob_size == 0 {
            return Err(ProfileError::RobSize);
        }
        if self.counter_resolution == 0 {
            return Err(ProfileError::CounterResolution);
        }
        if !(1..=16).contains(&self.pht_index_bits) {
            return Err(ProfileError::PhtBits(self.pht_index_bits));
        }
        if self.mitigations.rsb_flush_on_cs && self.mitigations.rsb_refill_on_cs {
            return Err(ProfileError::ExclusiveMitigations);
        }
        Ok(())
    }
}
