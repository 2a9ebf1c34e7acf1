//! Expected susceptibility of the built-in profiles, cell by cell.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attacks::{Scenario, SecretLocation, Variant, WindowTrigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Table {
    SpectreRsb,
    SpectreV1,
    /// Meltdown (V3, V3a) and speculative store bypass (V4).
    Meltdown,
}

impl Table {
    pub const ALL: [Table; 3] = [Table::SpectreRsb, Table::SpectreV1, Table::Meltdown];

    pub fn name(self) -> &'static str {
        match self {
            Table::SpectreRsb => "spectre-rsb",
            Table::SpectreV1 => "spectre-v1",
            Table::Meltdown => "v3-v3a-v4",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Table::SpectreRsb => "SpectreRSB",
            Table::SpectreV1 => "Spectre V1",
            Table::Meltdown => "V3, V3a and V4",
        }
    }

    pub fn columns(self) -> Vec<Column> {
        use SecretLocation::*;
        use WindowTrigger::*;
        match self {
            Table::SpectreRsb | Table::SpectreV1 => vec![
                Column::SpecLoad,
                Column::Window(Scenario::new(CacheMiss, L1)),
                Column::Window(Scenario::new(PageFault, L1)),
                Column::Window(Scenario::new(CacheMiss, MainMemory)),
                Column::Window(Scenario::new(PageFault, MainMemory)),
            ],
            Table::Meltdown => vec![Column::V3, Column::V3a, Column::V4],
        }
    }

    pub fn variant(self, column: Column) -> Variant {
        match (self, column) {
            (Table::SpectreRsb, _) => Variant::Rsb,
            (Table::SpectreV1, _) => Variant::V1,
            (_, Column::V3) => Variant::V3,
            (_, Column::V3a) => Variant::V3a,
            _ => Variant::V4,
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    SpecLoad,
    Window(Scenario),
    V3,
    V3a,
    V4,
}

impl Column {
    pub fn name(self) -> String {
        match self {
            Column::SpecLoad => "specload".into(),
            Column::Window(s) => s.name(),
            Column::V3 => "v3".into(),
            Column::V3a => "v3a".into(),
            Column::V4 => "v4".into(),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for Column {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

/// `Some(true)` susceptible, `Some(false)` not, `None` not applicable.
pub type Cell = Option<bool>;

const Y: Cell = Some(true);
const N: Cell = Some(false);
const NA: Cell = None;

/// Rows in profile order; columns as in [`Table::columns`].
const RSB: [(&str, [Cell; 5]); 5] = [
    ("cortex_a53", [N, N, NA, N, NA]),
    ("cortex_a8", [N, N, NA, N, NA]),
    ("cortex_a9", [Y, N, NA, N, NA]),
    ("cortex_a72", [Y, Y, NA, N, NA]),
    ("intel_i7", [Y, Y, NA, Y, NA]),
];

const V1: [(&str, [Cell; 5]); 5] = [
    ("cortex_a53", [N, N, N, N, N]),
    ("cortex_a8", [N, N, N, N, N]),
    ("cortex_a9", [Y, N, Y, N, Y]),
    ("cortex_a72", [Y, Y, Y, Y, Y]),
    ("intel_i7", [Y, Y, Y, Y, Y]),
];

const MELTDOWN: [(&str, [Cell; 3]); 5] = [
    ("cortex_a53", [N, N, N]),
    ("cortex_a8", [N, N, N]),
    ("cortex_a9", [N, N, N]),
    ("cortex_a72", [N, Y, Y]),
    ("intel_i7", [Y, Y, Y]),
];

/// Expected cell, or `None` when `profile` has no golden row.
pub fn expected(table: Table, profile: &str, column: Column) -> Option<Cell> {
    let idx = table.columns().iter().position(|c| *c == column)?;
    match table {
        Table::SpectreRsb => RSB.iter().find(|r| r.0 == profile).map(|r| r.1[idx]),
        Table::SpectreV1 => V1.iter().find(|r| r.0 == profile).map(|r| r.1[idx]),
        Table::Meltdown => MELTDOWN.iter().find(|r| r.0 == profile).map(|r| r.1[idx]),
    }
}
