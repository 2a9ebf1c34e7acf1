use serde::{Deserialize, Serialize};

use super::predictor::Btb;
use super::profile::RsbUnderflow;

/// Return stack buffer: a fixed ring of predicted return addresses.
///
/// Pushes at capacity overwrite the oldest entry. Nothing here is repaired
/// on a squash; speculative pushes and pops stick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rsb {
    entries: Vec<Option<usize>>,
    /// Slot of the most recent entry.
    top: usize,
    count: usize,
}

impl Rsb {
    pub fn new(size: usize) -> Rsb {
        assert!(size > 0, "rsb size must be positive");
        Rsb {
            entries: vec![None; size],
            top: size - 1,
            count: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Most recent entry, if any.
    pub fn peek(&self) -> Option<usize> {
        if self.count == 0 {
            None
        } else {
            self.entries[self.top]
        }
    }

    /// Live entries, most recent first.
    pub fn live(&self) -> Vec<usize> {
        let n = self.size();
        (0..self.count)
            .filter_map(|i| self.entries[(self.top + n - i) % n])
            .collect()
    }

    pub fn push(&mut self, return_addr: usize) {
        self.top = (self.top + 1) % self.size();
        self.entries[self.top] = Some(return_addr);
        self.count = (self.count + 1).min(self.size());
    }

    /// Predicts the target of the `RET` at `site`.
    pub fn pop(&mut self, btb: &Btb, site: usize, policy: RsbUnderflow) -> Option<usize> {
        let n = self.size();
        if self.count > 0 {
            let v = self.entries[self.top];
            self.top = (self.top + n - 1) % n;
            self.count -= 1;
            return v;
        }
        match policy {
            RsbUnderflow::StopPredicting => None,
            RsbUnderflow::RingBuffer => {
                let v = self.entries[self.top];
                self.top = (self.top + n - 1) % n;
                v
            }
            RsbUnderflow::SwitchToBtb => btb.get(site),
        }
    }

    /// Empties the buffer, stale slots included.
    pub fn flush(&mut self) {
        self.entries.iter_mut().for_each(|e| *e = None);
        self.top = self.size() - 1;
        self.count = 0;
    }

    /// Fills every slot with `addr`.
    pub fn fill(&mut self, addr: usize) {
        self.entries.iter_mut().for_each(|e| *e = Some(addr));
        self.count = self.size();
    }
}

pub fn rsb_push(rsb: &mut Rsb, return_addr: usize) {
    rsb.push(return_addr);
}

pub fn rsb_pop(
    rsb: &mut Rsb,
    btb: &Btb,
    ret_site_pc: usize,
    policy: RsbUnderflow,
) -> Option<usize> {
    rsb.pop(btb, ret_site_pc, policy)
}
