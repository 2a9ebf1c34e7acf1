use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Pattern history table of 2-bit saturating counters, indexed by the low
/// bits of the branch PC. Counters start at 0 (strongly not-taken).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pht {
    counters: Vec<u8>,
    mask: usize,
}

impl Pht {
    pub fn new(index_bits: u32) -> Pht {
        let len = 1usize << index_bits;
        Pht {
            counters: vec![0; len],
            mask: len - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    pub fn counter(&self, pc: usize) -> u8 {
        self.counters[pc & self.mask]
    }

    pub fn predict(&self, pc: usize) -> bool {
        self.counter(pc) >= 2
    }

    /// Trains the counter with a resolved outcome. Called at retirement.
    pub fn update(&mut self, pc: usize, taken: bool) {
        let c = &mut self.counters[pc & self.mask];
        *c = if taken {
            (*c + 1).min(3)
        } else {
            c.saturating_sub(1)
        };
    }
}

/// Pure read of the PHT: `true` means predicted taken.
pub fn predict_branch(pht: &Pht, pc: usize) -> bool {
    pht.predict(pc)
}

/// Last-target buffer keyed by the PC of a call or return site.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Btb {
    targets: HashMap<usize, usize>,
}

impl Btb {
    pub fn get(&self, site: usize) -> Option<usize> {
        self.targets.get(&site).copied()
    }

    pub fn update(&mut self, site: usize, target: usize) {
        self.targets.insert(site, target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn clear(&mut self) {
        self.targets.clear();
    }
}
