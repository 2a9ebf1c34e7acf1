//! Data-side memory hierarchy: L1/L2/DRAM with strict LRU, the page table,
//! the flush and eviction primitives, and the cycle counter.

mod cache;
mod counter;
mod eviction;
mod mmu;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{
    line_of, CacheGeometry, CacheLevel, CacheState, GeometryError, Latencies, Level, LINE_SIZE,
};
pub use counter::CycleCounter;
pub use eviction::{
    evict_with_pattern, sweep_evict, EvictionAccess, EvictionError, EvictionParams, EvictionTrace,
    Region,
};
pub use mmu::{page_of, FaultKind, PageEntry, PageTable, Privilege, PAGE_SIZE};

/// Result of an architectural access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub value: u64,
    pub latency: u64,
    pub level: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemFault {
    #[error("page fault at {addr:#x} (resolution takes {resolution_latency} cycles)")]
    PageFault { addr: u64, resolution_latency: u64 },
    #[error("privilege fault at {addr:#x}")]
    Privilege { addr: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("flush of {addr:#x} requires privileged mode")]
pub struct PrivilegedFlushError {
    pub addr: u64,
}

/// Caches, page table, backing data and cycle counter of one core.
///
/// Data memory is a sparse map of 64-bit cells, one per address; unwritten
/// cells read as zero.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub cache: CacheState,
    pub page_table: PageTable,
    pub counter: CycleCounter,
    data: HashMap<u64, u64>,
}

impl MemorySystem {
    pub fn new(cache: CacheState, counter: CycleCounter) -> MemorySystem {
        MemorySystem {
            cache,
            page_table: PageTable::default(),
            counter,
            data: HashMap::new(),
        }
    }

    pub fn latencies(&self) -> Latencies {
        self.cache.latencies
    }

    /// Reads a cell without any timing or cache effect.
    pub fn peek(&self, addr: u64) -> u64 {
        self.data.get(&addr).copied().unwrap_or(0)
    }

    /// Writes a cell without any timing or cache effect.
    pub fn poke(&mut self, addr: u64, value: u64) {
        self.data.insert(addr, value);
    }

    /// Every written cell, ordered by address.
    pub fn cells(&self) -> BTreeMap<u64, u64> {
        self.data.iter().map(|(&a, &v)| (a, v)).collect()
    }

    pub fn poke_bytes(&mut self, base: u64, bytes: &[u8]) {
        for (i, &b) in bytes.iter().enumerate() {
            self.poke(base + i as u64, u64::from(b));
        }
    }

    /// Level that currently holds `addr`.
    pub fn level_of(&self, addr: u64) -> Level {
        self.cache.peek(line_of(addr))
    }

    /// Architectural load: checks the page table, then serves the access
    /// from the closest level holding the line and fills the levels above.
    pub fn access(&mut self, addr: u64, privilege: Privilege) -> Result<Access, MemFault> {
        match self.page_table.check(addr, privilege) {
            Ok(()) => {}
            Err(FaultKind::PageFault) => {
                return Err(MemFault::PageFault {
                    addr,
                    resolution_latency: self.cache.latencies.page_fault,
                })
            }
            Err(FaultKind::Privilege) => return Err(MemFault::Privilege { addr }),
        }
        let level = self.cache.access_line(line_of(addr));
        Ok(Access {
            value: self.peek(addr),
            latency: self.cache.latencies.of(level),
            level,
        })
    }

    /// Invalidates the line holding `addr` at every level. Idempotent.
    pub fn flush_line(
        &mut self,
        addr: u64,
        privilege: Privilege,
        flush_is_privileged: bool,
    ) -> Result<(), PrivilegedFlushError> {
        if flush_is_privileged && privilege == Privilege::User {
            return Err(PrivilegedFlushError { addr });
        }
        self.cache.invalidate_line(line_of(addr));
        Ok(())
    }

    /// Current cycle counter reading.
    pub fn read_cycles(&mut self) -> u64 {
        self.counter.read()
    }

    /// Times one access the way attacker code does: counter, load, counter.
    /// The counter advances by the access latency. Returns the measured
    /// difference and the true level.
    pub fn timed_access(
        &mut self,
        addr: u64,
        privilege: Privilege,
    ) -> Result<(i64, Level), MemFault> {
        let start = self.counter.read();
        let a = self.access(addr, privilege)?;
        self.counter.advance(a.latency);
        let end = self.counter.read();
        Ok((end as i64 - start as i64, a.level))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> MemorySystem {
        MemorySystem::new(
            CacheState::new(
                CacheGeometry::with_capacity(32 * 1024, 4),
                CacheGeometry::with_capacity(512 * 1024, 16),
                Latencies::default(),
            ),
            CycleCounter::new(1, 0, 0),
        )
    }

    #[test]
    fn first_access_from_dram_then_l1() {
        let mut m = system();
        m.poke(0x1000, 9);
        let a = m.access(0x1000, Privilege::User).unwrap();
        assert_eq!((a.level, a.latency, a.value), (Level::Dram, 200, 9));
        let a = m.access(0x1008, Privilege::User).unwrap();
        assert_eq!((a.level, a.latency), (Level::L1, 4));
    }

    #[test]
    fn unmapped_page_faults() {
        let mut m = system();
        m.page_table.unmap(0x4000);
        assert_eq!(
            m.access(0x4010, Privilege::User),
            Err(MemFault::PageFault {
                addr: 0x4010,
                resolution_latency: 1000
            })
        );
    }

    #[test]
    fn privileged_page_faults_in_user_mode_only() {
        let mut m = system();
        m.page_table.set_privileged(0x8000, true);
        assert_eq!(
            m.access(0x8000, Privilege::User),
            Err(MemFault::Privilege { addr: 0x8000 })
        );
        assert!(m.access(0x8000, Privilege::Kernel).is_ok());
    }

    #[test]
    fn flush_then_access_is_dram() {
        let mut m = system();
        m.access(0x2000, Privilege::User).unwrap();
        m.flush_line(0x2000, Privilege::User, false).unwrap();
        assert_eq!(
            m.access(0x2000, Privilege::User).unwrap().level,
            Level::Dram
        );
    }

    #[test]
    fn flush_of_uncached_line_is_a_no_op() {
        let mut m = system();
        m.access(0x3000, Privilege::User).unwrap();
        let before = m
            .cache
            .l1
            .set_contents(m.cache.l1.geometry().set_of(line_of(0x3000)))
            .to_vec();
        m.flush_line(0x9_0000, Privilege::User, false).unwrap();
        let set = m.cache.l1.geometry().set_of(line_of(0x3000));
        assert_eq!(m.cache.l1.set_contents(set), before.as_slice());
    }

    #[test]
    fn privileged_flush_rejects_user_mode() {
        let mut m = system();
        assert_eq!(
            m.flush_line(0x40, Privilege::User, true),
            Err(PrivilegedFlushError { addr: 0x40 })
        );
        assert!(m.flush_line(0x40, Privilege::Kernel, true).is_ok());
    }

    #[test]
    fn timed_access_measures_latency() {
        let mut m = system();
        assert_eq!(
            m.timed_access(0x40, Privilege::User).unwrap(),
            (200, Level::Dram)
        );
        assert_eq!(
            m.timed_access(0x40, Privilege::User).unwrap(),
            (4, Level::L1)
        );
        assert_eq!(m.counter.now(), 204);
    }
}
