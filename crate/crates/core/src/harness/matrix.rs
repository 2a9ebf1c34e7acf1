//! The susceptibility matrix: every attack cell on every profile, checked
//! against the golden tables.

use serde::{Serialize, Serializer};

use super::golden::{self, Cell, Column, Table};
use crate::attacks::{
    run_meltdown_v3, run_meltdown_v3a, run_spectre_rsb, run_spectre_v1, run_spectre_v4,
    speculative_load_test, AttackError, Variant,
};
use crate::microarch::CpuProfile;

/// Secret every matrix cell tries to leak. No zero bytes: a forward-zero
/// core must not get credit for guessing them.
pub const MATRIX_SECRET: &[u8] = b"Squeamish Ossifrage";

fn cell_symbol(c: Cell) -> &'static str {
    match c {
        Some(true) => "Y",
        Some(false) => "N",
        None => "-",
    }
}

fn ser_cell<S: Serializer>(c: &Cell, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(cell_symbol(*c))
}

fn ser_opt_cell<S: Serializer>(c: &Option<Cell>, s: S) -> Result<S::Ok, S::Error> {
    match c {
        Some(c) => ser_cell(c, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellResult {
    pub table: Table,
    pub profile: String,
    pub variant: Variant,
    pub column: Column,
    /// Golden value; `None` when the profile has no golden row.
    #[serde(serialize_with = "ser_opt_cell")]
    pub expected: Option<Cell>,
    #[serde(serialize_with = "ser_cell")]
    pub observed: Cell,
}

impl CellResult {
    pub fn matches(&self) -> bool {
        self.expected.is_none_or(|e| e == self.observed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffEntry {
    pub table: Table,
    pub profile: String,
    pub column: Column,
    #[serde(serialize_with = "ser_cell")]
    pub expected: Cell,
    #[serde(serialize_with = "ser_cell")]
    pub observed: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    /// Profile names in run order.
    pub profiles: Vec<String>,
    pub cells: Vec<CellResult>,
    pub diff: Vec<DiffEntry>,
}

impl SuiteReport {
    pub fn passes(&self) -> bool {
        self.diff.is_empty()
    }

    pub fn cell(&self, table: Table, profile: &str, column: Column) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.table == table && c.profile == profile && c.column == column)
    }

    /// Observed symbol (`Y`, `N`, `-`) of a cell.
    pub fn symbol(&self, table: Table, profile: &str, column: Column) -> Option<&'static str> {
        self.cell(table, profile, column)
            .map(|c| cell_symbol(c.observed))
    }
}

fn observe(profile: &CpuProfile, table: Table, column: Column) -> Result<Cell, AttackError> {
    let outcome = match (table, column) {
        (_, Column::SpecLoad) => return Ok(Some(speculative_load_test(profile))),
        (Table::SpectreV1, Column::Window(s)) => run_spectre_v1(profile, s, MATRIX_SECRET),
        (Table::SpectreRsb, Column::Window(s)) => run_spectre_rsb(profile, s, MATRIX_SECRET),
        (_, Column::V3) => run_meltdown_v3(profile, MATRIX_SECRET),
        (_, Column::V3a) => run_meltdown_v3a(profile),
        (_, Column::V4) => run_spectre_v4(profile, MATRIX_SECRET),
        (t, c) => unreachable!("{t} has no column {c}"),
    };
    match outcome {
        Ok(o) => Ok(Some(o.success)),
        Err(AttackError::UndefinedScenario { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn profile_cells(profile: &CpuProfile) -> Result<Vec<CellResult>, AttackError> {
    let mut out = Vec::new();
    for table in Table::ALL {
        for column in table.columns() {
            out.push(CellResult {
                table,
                profile: profile.name.clone(),
                variant: table.variant(column),
                column,
                expected: golden::expected(table, &profile.name, column),
                observed: observe(profile, table, column)?,
            });
        }
    }
    Ok(out)
}

/// Runs every cell of every table on each profile, one thread per profile.
/// Profiles are compared with the golden row of the same name.
pub fn run_matrix(profiles: &[CpuProfile]) -> Result<SuiteReport, AttackError> {
    let per_profile: Vec<Result<Vec<CellResult>, AttackError>> = std::thread::scope(|s| {
        let handles: Vec<_> = profiles
            .iter()
            .map(|p| s.spawn(move || profile_cells(p)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("matrix worker panicked"))
            .collect()
    });
    let mut cells = Vec::new();
    for r in per_profile {
        cells.extend(r?);
    }
    // Table-major order, profiles as given.
    cells.sort_by_key(|c| c.table);
    let diff = cells
        .iter()
        .filter(|c| !c.matches())
        .map(|c| DiffEntry {
            table: c.table,
            profile: c.profile.clone(),
            column: c.column,
            expected: c.expected.flatten(),
            observed: c.observed,
        })
        .collect();
    Ok(SuiteReport {
        profiles: profiles.iter().map(|p| p.name.clone()).collect(),
        cells,
        diff,
    })
}
