use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAGE_SIZE: u64 = 4096;

pub fn page_of(addr: u64) -> u64 {
    addr / PAGE_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Privilege {
    User,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageEntry {
    pub mapped: bool,
    pub privileged: bool,
}

impl Default for PageEntry {
    fn default() -> Self {
        PageEntry {
            mapped: true,
            privileged: false,
        }
    }
}

/// Why a translation was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    /// The page is not mapped into the address space.
    PageFault,
    /// A user-mode access touched a privileged page or register.
    Privilege,
}

/// Page-granular mapped/privileged bits. Pages without an entry are mapped
/// user pages; addresses are not translated.
#[derive(Debug, Clone, Default)]
pub struct PageTable {
    entries: HashMap<u64, PageEntry>,
}

impl PageTable {
    pub fn entry(&self, addr: u64) -> PageEntry {
        self.entries
            .get(&page_of(addr))
            .copied()
            .unwrap_or_default()
    }

    pub fn set(&mut self, addr: u64, entry: PageEntry) {
        self.entries.insert(page_of(addr), entry);
    }

    pub fn unmap(&mut self, addr: u64) {
        let mut e = self.entry(addr);
        e.mapped = false;
        self.set(addr, e);
    }

    pub fn map(&mut self, addr: u64) {
        let mut e = self.entry(addr);
        e.mapped = true;
        self.set(addr, e);
    }

    pub fn set_privileged(&mut self, addr: u64, privileged: bool) {
        let mut e = self.entry(addr);
        e.privileged = privileged;
        self.set(addr, e);
    }

    pub fn check(&self, addr: u64, privilege: Privilege) -> Result<(), FaultKind> {
        let e = self.entry(addr);
        if !e.mapped {
            Err(FaultKind::PageFault)
        } else if e.privileged && privilege == Privilege::User {
            Err(FaultKind::Privilege)
        } else {
            Ok(())
        }
    }
}
