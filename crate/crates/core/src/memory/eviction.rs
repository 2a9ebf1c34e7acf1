//! Flush-free eviction: the parameterized (N, A, D) access pattern and the
//! whole-buffer sweep it is checked against.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cache::{line_of, Level, LINE_SIZE};
use super::MemorySystem;

/// Eviction loop shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionParams {
    /// Loop length.
    pub n: usize,
    /// Shift of the access window between iterations.
    pub a: usize,
    /// Accesses per iteration.
    pub d: usize,
}

impl EvictionParams {
    /// Number of distinct congruent lines the pattern touches.
    pub fn distinct_lines(&self) -> usize {
        if self.n == 0 || self.d == 0 {
            0
        } else {
            (self.n - 1) * self.a + self.d
        }
    }
}

/// A contiguous buffer the attacker owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub base: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionAccess {
    pub iteration: usize,
    pub access_index: usize,
    pub address: u64,
    pub level: Level,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionTrace {
    pub accesses: Vec<EvictionAccess>,
}

impl EvictionTrace {
    /// `iteration,access_index,address,level` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,access_index,address,level\n");
        for a in &self.accesses {
            let level = match a.level {
                Level::L1 => "L1",
                Level::L2 => "L2",
                Level::Dram => "DRAM",
            };
            let _ = writeln!(
                out,
                "{},{},{:#x},{}",
                a.iteration, a.access_index, a.address, level
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvictionError {
    #[error("eviction buffer too small: need {needed} bytes, have {available}")]
    RegionTooSmall { needed: u64, available: u64 },
    #[error("sweep buffer of {size} bytes is below 3x the last-level capacity ({required} bytes)")]
    SweepTooSmall { size: u64, required: u64 },
}

/// Runs the (N, A, D) loop over lines of `buffer` congruent to `target`:
/// iteration `i` accesses congruent lines `i*A .. i*A + D`.
pub fn evict_with_pattern(
    mem: &mut MemorySystem,
    buffer: Region,
    params: EvictionParams,
    target: u64,
) -> Result<EvictionTrace, EvictionError> {
    let l1_sets = mem.cache.l1.geometry().sets as u64;
    let l2_sets = mem.cache.l2.geometry().sets as u64;
    // Lines this far apart share a set at both levels.
    let stride_lines = l1_sets.max(l2_sets);
    let target_set = line_of(target) % stride_lines;
    let base_line = line_of(buffer.base + LINE_SIZE - 1);
    let first = base_line + (target_set + stride_lines - base_line % stride_lines) % stride_lines;

    let count = params.distinct_lines() as u64;
    if count > 0 {
        let needed = (first + (count - 1) * stride_lines + 1) * LINE_SIZE - buffer.base;
        if needed > buffer.len {
            return Err(EvictionError::RegionTooSmall {
                needed,
                available: buffer.len,
            });
        }
    }

    let mut trace = EvictionTrace::default();
    for iteration in 0..params.n {
        for access_index in 0..params.d {
            let k = (iteration * params.a + access_index) as u64;
            let address = (first + k * stride_lines) * LINE_SIZE;
            let level = mem.cache.access_line(line_of(address));
            trace.accesses.push(EvictionAccess {
                iteration,
                access_index,
                address,
                level,
            });
        }
    }
    let latencies = mem.latencies();
    let cycles: u64 = trace.accesses.iter().map(|a| latencies.of(a.level)).sum();
    mem.counter.advance(cycles);
    Ok(trace)
}

/// Reads every line of `buffer`, which must be at least 3x the L2 capacity.
pub fn sweep_evict(mem: &mut MemorySystem, buffer: Region) -> Result<(), EvictionError> {
    let required = 3 * mem.cache.l2.geometry().capacity() as u64;
    if buffer.len < required {
        return Err(EvictionError::SweepTooSmall {
            size: buffer.len,
            required,
        });
    }
    let first = line_of(buffer.base);
    let last = line_of(buffer.base + buffer.len - 1);
    let latencies = mem.latencies();
    let mut cycles = 0;
    for line in first..=last {
        // The buffer is the attacker's own memory; skip the page table.
        cycles += latencies.of(mem.cache.access_line(line));
    }
    mem.counter.advance(cycles);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{CacheGeometry, CacheState, CycleCounter, Latencies, Privilege};

    fn system(l1: CacheGeometry, l2: CacheGeometry) -> MemorySystem {
        MemorySystem::new(
            CacheState::new(l1, l2, Latencies::default()),
            CycleCounter::new(1, 0, 0),
        )
    }

    const BUF: Region = Region {
        base: 0x1000_0000,
        len: 64 << 20,
    };

    #[test]
    fn empty_loop_leaves_target_cached() {
        let mut m = system(
            CacheGeometry::with_capacity(32 << 10, 4),
            CacheGeometry::with_capacity(512 << 10, 16),
        );
        m.access(0x4000, Privilege::User).unwrap();
        let t =
            evict_with_pattern(&mut m, BUF, EvictionParams { n: 0, a: 0, d: 0 }, 0x4000).unwrap();
        assert!(t.accesses.is_empty());
        assert_eq!(m.level_of(0x4000), Level::L1);
    }

    #[test]
    fn pattern_accesses_are_congruent_with_target() {
        let mut m = system(
            CacheGeometry::with_capacity(32 << 10, 4),
            CacheGeometry::with_capacity(512 << 10, 16),
        );
        let target = 0x4040;
        let t =
            evict_with_pattern(&mut m, BUF, EvictionParams { n: 3, a: 2, d: 4 }, target).unwrap();
        assert_eq!(t.accesses.len(), 12);
        let l2 = m.cache.l2.geometry();
        let l1 = m.cache.l1.geometry();
        for a in &t.accesses {
            assert_eq!(l2.set_of(line_of(a.address)), l2.set_of(line_of(target)));
            assert_eq!(l1.set_of(line_of(a.address)), l1.set_of(line_of(target)));
            assert!(a.address >= BUF.base);
        }
        // Windows slide by A: iteration 1 starts at the third line.
        assert_eq!(t.accesses[4].address, t.accesses[2].address);
    }

    #[test]
    fn small_region_is_rejected() {
        let mut m = system(
            CacheGeometry::with_capacity(32 << 10, 4),
            CacheGeometry::with_capacity(512 << 10, 16),
        );
        let r = evict_with_pattern(
            &mut m,
            Region {
                base: BUF.base,
                len: 4096,
            },
            EvictionParams { n: 21, a: 2, d: 5 },
            0x4000,
        );
        assert!(matches!(r, Err(EvictionError::RegionTooSmall { .. })));
    }

    #[test]
    fn sweep_rejects_buffer_of_one_cache_size() {
        let mut m = system(
            CacheGeometry::with_capacity(32 << 10, 4),
            CacheGeometry::with_capacity(256 << 10, 8),
        );
        let r = sweep_evict(
            &mut m,
            Region {
                base: BUF.base,
                len: 256 << 10,
            },
        );
        assert_eq!(
            r,
            Err(EvictionError::SweepTooSmall {
                size: 256 << 10,
                required: 768 << 10
            })
        );
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut m = system(
            CacheGeometry::with_capacity(32 << 10, 4),
            CacheGeometry::with_capacity(512 << 10, 16),
        );
        let t = evict_with_pattern(&mut m, BUF, EvictionParams { n: 1, a: 1, d: 2 }, 0).unwrap();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iteration,access_index,address,level"));
        assert_eq!(lines.count(), 2);
    }
}
