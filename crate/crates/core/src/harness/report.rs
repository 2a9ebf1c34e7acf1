//! Report serialization: canonical JSON, headered CSV, fixed-width tables.

use serde::Serialize;

use super::config::Format;
use super::golden::Table;
use super::matrix::SuiteReport;
use super::mitigate::MitigationReport;
use crate::attacks::AttackOutcome;
use crate::covert::{sweep_csv, ChannelReport};
use crate::microarch::CpuProfile;

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Profiles(Vec<CpuProfile>),
    Attack(AttackOutcome),
    Channel(ChannelReport),
    Sweep(Vec<ChannelReport>),
    Matrix(SuiteReport),
    Mitigation(MitigationReport),
}

impl Report {
    /// What the exit status reports: the attack leaked, the channel was
    /// error-free, the matrix matched, the mitigations blocked everything.
    pub fn passed(&self) -> bool {
        match self {
            Report::Profiles(_) => true,
            Report::Attack(o) => o.success,
            Report::Channel(r) => channel_ok(r),
            Report::Sweep(rs) => rs.iter().all(channel_ok),
            Report::Matrix(m) => m.passes(),
            Report::Mitigation(m) => m.blocks_everything(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        fn v<T: Serialize>(t: &T) -> serde_json::Value {
            serde_json::to_value(t).expect("reports serialize")
        }
        match self {
            Report::Profiles(p) => v(p),
            Report::Attack(o) => o.to_json(),
            Report::Channel(r) => r.to_json(),
            Report::Sweep(rs) => v(rs),
            Report::Matrix(m) => v(m),
            Report::Mitigation(m) => v(m),
        }
    }
}

fn channel_ok(r: &ChannelReport) -> bool {
    r.aborted.is_none() && r.bits_sent > 0 && r.bit_errors == 0
}

/// Serializes `report`. Deterministic: the same report always gives the
/// same bytes.
pub fn emit_report(report: &Report, format: Format) -> String {
    match format {
        // serde_json's map is ordered by key, so this is canonical.
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report.to_json()).expect("json");
            s.push('\n');
            s
        }
        Format::Csv => csv(report),
        Format::Table => table(report),
    }
}

fn yn(b: bool) -> String {
    if b { "Y" } else { "N" }.to_string()
}

fn csv_rows(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn profile_row(p: &CpuProfile) -> Vec<String> {
    vec![
        p.name.clone(),
        kebab(&p.pipeline),
        p.rsb_size.to_string(),
        kebab(&p.rsb_underflow),
        kebab(&p.squash_policy),
        p.branch_resolve_extra.to_string(),
        p.return_resolve_extra.to_string(),
        yn(p.stl_speculation),
        kebab(&p.exception_policy),
        yn(p.sysreg_transient_forward),
        (p.l1.capacity() / 1024).to_string(),
        (p.l2.capacity() / 1024).to_string(),
    ]
}

const PROFILE_HEADER: [&str; 12] = [
    "name",
    "pipeline",
    "rsb_size",
    "rsb_underflow",
    "squash_policy",
    "branch_resolve_extra",
    "return_resolve_extra",
    "stl_speculation",
    "exception_policy",
    "sysreg_transient_forward",
    "l1_kb",
    "l2_kb",
];

/// The serde name of a unit enum value.
fn kebab<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn attack_rows(o: &AttackOutcome) -> Vec<Vec<String>> {
    o.expected
        .iter()
        .zip(&o.recovered)
        .enumerate()
        .map(|(i, (e, r))| {
            vec![
                i.to_string(),
                format!("{e:02x}"),
                r.map_or("??".into(), |r| format!("{r:02x}")),
                yn(*r == Some(*e)),
            ]
        })
        .collect()
}

const CHANNEL_HEADER: [&str; 9] = [
    "bits_per_cs",
    "bits_sent",
    "bit_errors",
    "symbols_sent",
    "symbol_errors",
    "erasures",
    "total_cycles",
    "bandwidth_bits_per_kcycle",
    "required_memory_bytes",
];

fn channel_row(r: &ChannelReport) -> Vec<String> {
    vec![
        r.bits_per_cs.to_string(),
        r.bits_sent.to_string(),
        r.bit_errors.to_string(),
        r.symbols_sent.to_string(),
        r.symbol_errors.to_string(),
        r.erasures.to_string(),
        r.total_cycles.to_string(),
        format!("{:.4}", r.bandwidth_bits_per_kcycle),
        r.required_memory_bytes.to_string(),
    ]
}

fn mitigation_rows(m: &MitigationReport) -> Vec<Vec<String>> {
    m.rows
        .iter()
        .map(|r| {
            vec![
                r.experiment.clone(),
                yn(r.baseline),
                yn(r.mitigated),
                r.detail.clone(),
            ]
        })
        .collect()
}

fn csv(report: &Report) -> String {
    match report {
        Report::Profiles(ps) => csv_rows(&PROFILE_HEADER, ps.iter().map(profile_row).collect()),
        Report::Attack(o) => csv_rows(&["byte", "expected", "recovered", "match"], attack_rows(o)),
        Report::Channel(r) => csv_rows(&CHANNEL_HEADER, vec![channel_row(r)]),
        Report::Sweep(rs) => sweep_csv(rs),
        Report::Matrix(m) => csv_rows(
            &[
                "table", "profile", "variant", "column", "expected", "observed",
            ],
            m.cells
                .iter()
                .map(|c| {
                    let j = serde_json::to_value(c).expect("cell");
                    let s = |k: &str| match &j[k] {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Null => String::new(),
                        v => v.to_string(),
                    };
                    [
                        "table", "profile", "variant", "column", "expected", "observed",
                    ]
                    .iter()
                    .map(|k| s(k))
                    .collect()
                })
                .collect(),
        ),
        Report::Mitigation(m) => csv_rows(
            &["experiment", "baseline", "mitigated", "detail"],
            mitigation_rows(m),
        ),
    }
}

/// Left-aligned columns separated by two spaces.
fn grid(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let s: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let mut s = s.join("  ").trim_end().to_string();
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(|s| s.as_str()).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(|s| s.as_str()).collect()));
    }
    out
}

fn table(report: &Report) -> String {
    match report {
        Report::Profiles(ps) => grid(
            &PROFILE_HEADER,
            &ps.iter().map(profile_row).collect::<Vec<_>>(),
        ),
        Report::Attack(o) => {
            let mut s = format!(
                "{} on {} ({}): {}\nrecovered {}\n\n",
                o.variant,
                o.profile,
                o.scenario,
                if o.success { "leaked" } else { "failed" },
                o.recovered_hex()
            );
            if let Some(e) = &o.error {
                s.push_str(&format!("error: {e}\n\n"));
            }
            s.push_str(&grid(
                &["byte", "expected", "recovered", "match"],
                &attack_rows(o),
            ));
            s
        }
        Report::Channel(r) => {
            let mut s = grid(&CHANNEL_HEADER, &[channel_row(r)]);
            s.push_str(&format!("received {}\n", r.received_hex));
            if let Some(a) = &r.aborted {
                s.push_str(&format!("aborted: {a}\n"));
            }
            s
        }
        Report::Sweep(rs) => grid(
            &["b", "bandwidth", "errors", "memory"],
            &rs.iter()
                .map(|r| {
                    vec![
                        r.bits_per_cs.to_string(),
                        format!("{:.4}", r.bandwidth_bits_per_kcycle),
                        r.bit_errors.to_string(),
                        r.required_memory_bytes.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
        Report::Matrix(m) => matrix_table(m),
        Report::Mitigation(m) => {
            let mut s = format!("profile {}\n\n", m.profile);
            s.push_str(&grid(
                &["experiment", "baseline", "mitigated", "detail"],
                &mitigation_rows(m),
            ));
            s
        }
    }
}

fn matrix_table(m: &SuiteReport) -> String {
    let mut out = String::new();
    for t in Table::ALL {
        let columns = t.columns();
        let names: Vec<String> = columns.iter().map(|c| c.name()).collect();
        let mut header = vec!["profile"];
        header.extend(names.iter().map(|s| s.as_str()));
        let rows: Vec<Vec<String>> = m
            .profiles
            .iter()
            .map(|p| {
                let mut row = vec![p.clone()];
                for &c in &columns {
                    let cell = m.cell(t, p, c).expect("cell ran");
                    let mut sym = m.symbol(t, p, c).unwrap_or("?").to_string();
                    if !cell.matches() {
                        sym.push('*');
                    }
                    row.push(sym);
                }
                row
            })
            .collect();
        out.push_str(&format!("{}\n", t.title()));
        out.push_str(&grid(&header, &rows));
        out.push('\n');
    }
    if m.diff.is_empty() {
        out.push_str("diff: none\n");
    } else {
        out.push_str(&format!(
            "diff: {} cell(s) differ from the golden tables (*)\n",
            m.diff.len()
        ));
    }
    out
}
