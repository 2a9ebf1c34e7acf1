use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::predictor::{Btb, Pht};
use super::profile::CpuProfile;
use super::rsb::Rsb;
use crate::countermeasures::BENIGN_GADGET_PC;
use crate::isa::{SysReg, NUM_REGS, SP};
use crate::memory::{CacheState, CycleCounter, MemorySystem, Privilege};

/// Initial stack pointer of a fresh context. The stack grows down.
pub const DEFAULT_STACK_TOP: u64 = 0x8_0000;

/// The architectural state of one software context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchContext {
    pub regs: [u64; NUM_REGS],
    /// Result of the last `CMP`: `ra >= rb`.
    pub flags: bool,
    pub pc: usize,
    pub privilege: Privilege,
    /// Where a fault raised at retirement resumes; `None` makes faults fatal.
    pub recovery_pc: Option<usize>,
}

impl ArchContext {
    pub fn new(pc: usize, stack_top: u64) -> ArchContext {
        let mut regs = [0; NUM_REGS];
        regs[SP.index()] = stack_top;
        ArchContext {
            regs,
            flags: false,
            pc,
            privilege: Privilege::User,
            recovery_pc: None,
        }
    }
}

impl Default for ArchContext {
    fn default() -> Self {
        ArchContext::new(0, DEFAULT_STACK_TOP)
    }
}

/// One core and the context currently running on it.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub arch: ArchContext,
    pub mem: MemorySystem,
    pub rsb: Rsb,
    pub pht: Pht,
    pub btb: Btb,
    pub sysregs: HashMap<SysReg, u64>,
    /// User-mode `FLUSH` faults.
    pub flush_is_privileged: bool,
}

impl MachineState {
    pub fn new(profile: &CpuProfile, seed: u64) -> MachineState {
        let cache = CacheState::new(profile.l1, profile.l2, profile.latencies);
        let counter = CycleCounter::new(
            profile.counter_resolution,
            profile.mitigations.pmu_noise_amplitude,
            seed,
        );
        MachineState {
            arch: ArchContext::default(),
            mem: MemorySystem::new(cache, counter),
            rsb: Rsb::new(profile.rsb_size),
            pht: Pht::new(profile.pht_index_bits),
            btb: Btb::default(),
            sysregs: HashMap::new(),
            flush_is_privileged: profile.mitigations.privileged_flush,
        }
    }

    pub fn cycle(&self) -> u64 {
        self.mem.counter.now()
    }

    pub fn reg(&self, r: u8) -> u64 {
        self.arch.regs[usize::from(r)]
    }

    pub fn set_reg(&mut self, r: u8, value: u64) {
        self.arch.regs[usize::from(r)] = value;
    }

    /// Hands the core to `next` and returns the context that was running.
    /// RSB, BTB, PHT and caches stay, except for what the profile's
    /// mitigations scrub.
    pub fn context_switch(&mut self, next: ArchContext, profile: &CpuProfile) -> ArchContext {
        if profile.mitigations.rsb_flush_on_cs {
            self.rsb.flush();
        } else if profile.mitigations.rsb_refill_on_cs {
            self.rsb.fill(BENIGN_GADGET_PC);
        }
        std::mem::replace(&mut self.arch, next)
    }
}
