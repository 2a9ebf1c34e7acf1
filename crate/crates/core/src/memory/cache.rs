use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cache line size in bytes; fixed for every level.
pub const LINE_SIZE: u64 = 64;

/// Line number holding `addr`.
pub fn line_of(addr: u64) -> u64 {
    addr / LINE_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub sets: usize,
    pub ways: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("sets ({0}) must be a non-zero power of two")]
    Sets(usize),
    #[error("ways ({0}) must be a non-zero power of two")]
    Ways(usize),
}

impl CacheGeometry {
    /// Geometry for a cache of `capacity_bytes` with `ways`-way sets.
    pub const fn with_capacity(capacity_bytes: usize, ways: usize) -> CacheGeometry {
        CacheGeometry {
            sets: capacity_bytes / (LINE_SIZE as usize) / ways,
            ways,
        }
    }

    pub fn capacity(&self) -> usize {
        self.sets * self.ways * LINE_SIZE as usize
    }

    pub fn set_of(&self, line: u64) -> usize {
        (line % self.sets as u64) as usize
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        if !self.sets.is_power_of_two() {
            return Err(GeometryError::Sets(self.sets));
        }
        if !self.ways.is_power_of_two() {
            return Err(GeometryError::Ways(self.ways));
        }
        Ok(())
    }
}

/// One set-associative level with strict LRU replacement.
///
/// Each set keeps its resident lines ordered most-recently-used first, so
/// the LRU order over valid ways is a total order by construction.
#[derive(Debug, Clone)]
pub struct CacheLevel {
    geometry: CacheGeometry,
    sets: Vec<Vec<u64>>,
}

impl CacheLevel {
    pub fn new(geometry: CacheGeometry) -> CacheLevel {
        CacheLevel {
            geometry,
            sets: vec![Vec::with_capacity(geometry.ways); geometry.sets],
        }
    }

    pub fn geometry(&self) -> CacheGeometry {
        self.geometry
    }

    pub fn contains(&self, line: u64) -> bool {
        self.sets[self.geometry.set_of(line)].contains(&line)
    }

    /// Accesses `line`, filling it on a miss. Returns whether it hit and the
    /// line evicted to make room, if any.
    pub fn touch(&mut self, line: u64) -> (bool, Option<u64>) {
        let ways = self.geometry.ways;
        let set = &mut self.sets[self.geometry.set_of(line)];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            let l = set.remove(pos);
            set.insert(0, l);
            return (true, None);
        }
        let victim = if set.len() == ways { set.pop() } else { None };
        set.insert(0, line);
        (false, victim)
    }

    pub fn invalidate(&mut self, line: u64) -> bool {
        let set = &mut self.sets[self.geometry.set_of(line)];
        match set.iter().position(|&l| l == line) {
            Some(pos) => {
                set.remove(pos);
                true
            }
            None => false,
        }
    }

    /// Resident lines of `set`, most recently used first.
    pub fn set_contents(&self, set: usize) -> &[u64] {
        &self.sets[set]
    }

    pub fn clear(&mut self) {
        self.sets.iter_mut().for_each(Vec::clear);
    }
}

/// Level of the hierarchy that served an access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    Dram,
}

/// Access latencies in simulated cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latencies {
    pub l1: u64,
    pub l2: u64,
    pub dram: u64,
    pub page_fault: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            l1: 4,
            l2: 12,
            dram: 200,
            page_fault: 1000,
        }
    }
}

impl Latencies {
    pub fn of(&self, level: Level) -> u64 {
        match level {
            Level::L1 => self.l1,
            Level::L2 => self.l2,
            Level::Dram => self.dram,
        }
    }

    /// `l1 < l2 < dram < page_fault`.
    pub fn is_ordered(&self) -> bool {
        self.l1 < self.l2 && self.l2 < self.dram && self.dram < self.page_fault
    }
}

/// Non-inclusive two-level data-cache hierarchy.
#[derive(Debug, Clone)]
pub struct CacheState {
    pub l1: CacheLevel,
    pub l2: CacheLevel,
    pub latencies: Latencies,
}

impl CacheState {
    pub fn new(l1: CacheGeometry, l2: CacheGeometry, latencies: Latencies) -> CacheState {
        CacheState {
            l1: CacheLevel::new(l1),
            l2: CacheLevel::new(l2),
            latencies,
        }
    }

    /// Level that would serve `line` right now, without side effects.
    pub fn peek(&self, line: u64) -> Level {
        if self.l1.contains(line) {
            Level::L1
        } else if self.l2.contains(line) {
            Level::L2
        } else {
            Level::Dram
        }
    }

    /// Accesses `line`: updates LRU at the serving level and fills every
    /// level above it.
    pub fn access_line(&mut self, line: u64) -> Level {
        let level = self.peek(line);
        match level {
            Level::L1 => {
                self.l1.touch(line);
            }
            Level::L2 => {
                self.l2.touch(line);
                self.l1.touch(line);
            }
            Level::Dram => {
                self.l2.touch(line);
                self.l1.touch(line);
            }
        }
        level
    }

    /// Invalidates `line` at both levels; returns whether it was resident.
    pub fn invalidate_line(&mut self, line: u64) -> bool {
        let a = self.l1.invalidate(line);
        let b = self.l2.invalidate(line);
        a || b
    }

    pub fn clear(&mut self) {
        self.l1.clear();
        self.l2.clear();
    }
}
