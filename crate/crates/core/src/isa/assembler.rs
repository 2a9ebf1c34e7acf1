//! Text assembler and disassembler.
//!
//! Grammar, one item per line:
//!
//! ```text
//! label:                 ; defines a code label
//! label: OPCODE ops      ; label and instruction on one line
//! OPCODE op1, op2, op3   ; instruction
//! ; comment
//! ```
//!
//! Operands are registers (`r0`..`r15`, `sp` = `r15`), immediates (`5`,
//! `#-3`, `0x40`), memory references (`[r1]`, `[r1+8]`, `[r1-0x10]`),
//! system registers (`s3`) or code labels. A label named `entry` sets the
//! program entry point; otherwise execution starts at index 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::instruction::{Constant, Instruction, MemOperand, Opcode, Operand, Reg, SysReg};

/// An assembled program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub entry: usize,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn get(&self, pc: usize) -> Option<&Instruction> {
        self.instructions.get(pc)
    }

    /// Index of `label`, if defined.
    pub fn label(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    /// Canonical JSON encoding.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("program serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("register index out of range: `{0}`")]
    RegisterOutOfRange(String),
    #[error("malformed immediate `{0}`")]
    MalformedImmediate(String),
    #[error("malformed operand `{0}`")]
    MalformedOperand(String),
    #[error("{mnemonic} takes {expected} operand(s), found {found}")]
    OperandCount {
        mnemonic: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("program has no instructions")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

/// Operand as written, before label resolution.
enum Raw<'a> {
    Reg(Reg),
    Imm(i64),
    Mem(MemOperand),
    Sys(SysReg),
    Label(&'a str),
}

struct Pending<'a> {
    line: usize,
    opcode: Opcode,
    operands: Vec<Raw<'a>>,
}

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut labels = BTreeMap::new();
    let mut pending = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let mut rest = raw_line.split(';').next().unwrap_or("").trim();
        if rest.is_empty() {
            continue;
        }
        // Any number of `label:` prefixes.
        while let Some((head, tail)) = rest.split_once(':') {
            let name = head.trim();
            if !is_identifier(name) {
                break;
            }
            if labels.insert(name.to_string(), pending.len()).is_some() {
                return Err(AsmError {
                    line,
                    kind: AsmErrorKind::DuplicateLabel(name.to_string()),
                });
            }
            rest = tail.trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (mnemonic, ops) = match rest.split_once(char::is_whitespace) {
            Some((m, o)) => (m, o.trim()),
            None => (rest, ""),
        };
        let opcode = Opcode::from_mnemonic(mnemonic).ok_or_else(|| AsmError {
            line,
            kind: AsmErrorKind::UnknownMnemonic(mnemonic.to_string()),
        })?;
        let operands = if ops.is_empty() {
            Vec::new()
        } else {
            ops.split(',')
                .map(|tok| parse_operand(tok.trim()).map_err(|kind| AsmError { line, kind }))
                .collect::<Result<Vec<_>, _>>()?
        };
        pending.push(Pending {
            line,
            opcode,
            operands,
        });
    }

    if pending.is_empty() {
        return Err(AsmError {
            line: 0,
            kind: AsmErrorKind::Empty,
        });
    }
    let mut instructions = Vec::with_capacity(pending.len());
    for p in &pending {
        let instr = build(p, &labels).map_err(|kind| AsmError { line: p.line, kind })?;
        instructions.push(instr);
    }
    let entry = labels.get("entry").copied().unwrap_or(0);
    Ok(Program {
        instructions,
        labels,
        entry,
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_imm(tok: &str) -> Result<i64, AsmErrorKind> {
    let bad = || AsmErrorKind::MalformedImmediate(tok.to_string());
    let t = tok.strip_prefix('#').unwrap_or(tok).trim();
    let (neg, digits) = match t.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let magnitude = if let Some(hex) = digits
        .strip_prefix("0x")
        .or_else(|| digits.strip_prefix("0X"))
    {
        u64::from_str_radix(hex, 16).map_err(|_| bad())?
    } else {
        digits.parse::<u64>().map_err(|_| bad())?
    };
    if neg {
        0i64.checked_sub_unsigned(magnitude).ok_or_else(bad)
    } else {
        // Allow full-width hex constants such as 0xffff_ffff_ffff_ffff.
        Ok(magnitude as i64)
    }
}

fn parse_reg(tok: &str) -> Option<Result<Reg, AsmErrorKind>> {
    let lower = tok.to_ascii_lowercase();
    if lower == "sp" {
        return Some(Ok(super::instruction::SP));
    }
    let digits = lower.strip_prefix('r')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(
        digits
            .parse::<u8>()
            .ok()
            .and_then(Reg::new)
            .ok_or_else(|| AsmErrorKind::RegisterOutOfRange(tok.to_string())),
    )
}

fn parse_operand(tok: &str) -> Result<Raw<'_>, AsmErrorKind> {
    if tok.is_empty() {
        return Err(AsmErrorKind::MalformedOperand(tok.to_string()));
    }
    if let Some(inner) = tok.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| AsmErrorKind::MalformedOperand(tok.to_string()))?
            .trim();
        let split = inner.find(['+', '-']);
        let (base, offset) = match split {
            Some(i) => (inner[..i].trim(), parse_imm(inner[i..].trim())?),
            None => (inner, 0),
        };
        let base =
            parse_reg(base).ok_or_else(|| AsmErrorKind::MalformedOperand(tok.to_string()))??;
        return Ok(Raw::Mem(MemOperand { base, offset }));
    }
    if let Some(r) = parse_reg(tok) {
        return r.map(Raw::Reg);
    }
    let lower = tok.to_ascii_lowercase();
    if let Some(id) = lower.strip_prefix('s') {
        if !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit()) {
            return id
                .parse::<u16>()
                .map(|n| Raw::Sys(SysReg(n)))
                .map_err(|_| AsmErrorKind::MalformedOperand(tok.to_string()));
        }
    }
    let first = tok.as_bytes()[0];
    if first.is_ascii_digit() || matches!(first, b'#' | b'-' | b'+') {
        return parse_imm(tok).map(Raw::Imm);
    }
    if is_identifier(tok) {
        return Ok(Raw::Label(tok));
    }
    Err(AsmErrorKind::MalformedOperand(tok.to_string()))
}

fn build(p: &Pending<'_>, labels: &BTreeMap<String, usize>) -> Result<Instruction, AsmErrorKind> {
    let expected = match p.opcode {
        Opcode::Movi | Opcode::Ld | Opcode::St | Opcode::Cmp | Opcode::Mrs => 2,
        Opcode::Add | Opcode::Shl | Opcode::And => 3,
        Opcode::Bge | Opcode::Call | Opcode::Flush | Opcode::Rdcyc => 1,
        Opcode::Ret | Opcode::Yield | Opcode::Fence | Opcode::Halt | Opcode::Nop => 0,
    };
    if p.operands.len() != expected {
        return Err(AsmErrorKind::OperandCount {
            mnemonic: p.opcode.mnemonic(),
            expected,
            found: p.operands.len(),
        });
    }
    let ops = &p.operands;
    let malformed = |i: usize| AsmErrorKind::MalformedOperand(describe(&ops[i]));
    let reg = |i: usize| match ops[i] {
        Raw::Reg(r) => Ok(r),
        _ => Err(malformed(i)),
    };
    let mem = |i: usize| match ops[i] {
        Raw::Mem(m) => Ok(m),
        _ => Err(malformed(i)),
    };
    let operand = |i: usize| match ops[i] {
        Raw::Reg(r) => Ok(Operand::Reg(r)),
        Raw::Imm(v) => Ok(Operand::Imm(v)),
        _ => Err(malformed(i)),
    };
    let target = |i: usize| match ops[i] {
        Raw::Label(name) => labels
            .get(name)
            .copied()
            .ok_or_else(|| AsmErrorKind::UndefinedLabel(name.to_string())),
        _ => Err(malformed(i)),
    };

    Ok(match p.opcode {
        Opcode::Movi => {
            let value = match ops[1] {
                Raw::Imm(v) => Constant::Imm(v),
                Raw::Label(_) => Constant::Code(target(1)?),
                _ => return Err(malformed(1)),
            };
            Instruction::Movi { rd: reg(0)?, value }
        }
        Opcode::Ld => Instruction::Ld {
            rd: reg(0)?,
            addr: mem(1)?,
        },
        Opcode::St => Instruction::St {
            rs: reg(0)?,
            addr: mem(1)?,
        },
        Opcode::Add => Instruction::Add {
            rd: reg(0)?,
            ra: reg(1)?,
            rb: operand(2)?,
        },
        Opcode::Shl => Instruction::Shl {
            rd: reg(0)?,
            ra: reg(1)?,
            rb: operand(2)?,
        },
        Opcode::And => Instruction::And {
            rd: reg(0)?,
            ra: reg(1)?,
            rb: operand(2)?,
        },
        Opcode::Cmp => Instruction::Cmp {
            ra: reg(0)?,
            rb: operand(1)?,
        },
        Opcode::Bge => Instruction::Bge { target: target(0)? },
        Opcode::Call => Instruction::Call { target: target(0)? },
        Opcode::Ret => Instruction::Ret,
        Opcode::Flush => Instruction::Flush { addr: mem(0)? },
        Opcode::Rdcyc => Instruction::Rdcyc { rd: reg(0)? },
        Opcode::Mrs => Instruction::Mrs {
            rd: reg(0)?,
            sysreg: match ops[1] {
                Raw::Sys(s) => s,
                _ => return Err(malformed(1)),
            },
        },
        Opcode::Yield => Instruction::Yield,
        Opcode::Fence => Instruction::Fence,
        Opcode::Halt => Instruction::Halt,
        Opcode::Nop => Instruction::Nop,
    })
}

fn describe(raw: &Raw<'_>) -> String {
    match raw {
        Raw::Reg(r) => r.to_string(),
        Raw::Imm(v) => v.to_string(),
        Raw::Mem(m) => format_mem(m),
        Raw::Sys(s) => s.to_string(),
        Raw::Label(l) => l.to_string(),
    }
}

fn format_mem(m: &MemOperand) -> String {
    if m.offset < 0 {
        format!("[{}-{}]", m.base, m.offset.unsigned_abs())
    } else {
        format!("[{}+{}]", m.base, m.offset)
    }
}

fn format_operand(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => r.to_string(),
        Operand::Imm(v) => v.to_string(),
    }
}

/// Renders a program back to assembler text. Every label is emitted; code
/// targets without a label get a synthetic `L<index>` name, and a non-zero
/// entry point without one gets `entry:`.
pub fn disassemble(program: &Program) -> String {
    let mut names: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, &idx) in &program.labels {
        names.entry(idx).or_default().push(name);
    }
    if program.entry != 0 && !program.labels.contains_key("entry") {
        names.entry(program.entry).or_default().push("entry");
    }
    let mut synthetic = BTreeMap::new();
    for instr in &program.instructions {
        if let Some(t) = instr.code_refs() {
            if !names.contains_key(&t) {
                synthetic.insert(t, format!("L{t}"));
            }
        }
    }
    let target_name = |t: usize| -> String {
        names
            .get(&t)
            .map(|v| v[0].to_string())
            .or_else(|| synthetic.get(&t).cloned())
            .expect("every code reference has a name")
    };

    let mut out = String::new();
    for (idx, instr) in program.instructions.iter().enumerate() {
        for name in names.get(&idx).into_iter().flatten() {
            let _ = writeln!(out, "{name}:");
        }
        if let Some(s) = synthetic.get(&idx) {
            let _ = writeln!(out, "{s}:");
        }
        let m = instr.opcode().mnemonic();
        let body = match instr {
            Instruction::Movi { rd, value } => match value {
                Constant::Imm(v) => format!("{m} {rd}, {v}"),
                Constant::Code(t) => format!("{m} {rd}, {}", target_name(*t)),
            },
            Instruction::Ld { rd, addr } => format!("{m} {rd}, {}", format_mem(addr)),
            Instruction::St { rs, addr } => format!("{m} {rs}, {}", format_mem(addr)),
            Instruction::Add { rd, ra, rb }
            | Instruction::Shl { rd, ra, rb }
            | Instruction::And { rd, ra, rb } => {
                format!("{m} {rd}, {ra}, {}", format_operand(rb))
            }
            Instruction::Cmp { ra, rb } => format!("{m} {ra}, {}", format_operand(rb)),
            Instruction::Bge { target } | Instruction::Call { target } => {
                format!("{m} {}", target_name(*target))
            }
            Instruction::Flush { addr } => format!("{m} {}", format_mem(addr)),
            Instruction::Rdcyc { rd } => format!("{m} {rd}"),
            Instruction::Mrs { rd, sysreg } => format!("{m} {rd}, {sysreg}"),
            Instruction::Ret
            | Instruction::Yield
            | Instruction::Fence
            | Instruction::Halt
            | Instruction::Nop => m.to_string(),
        };
        let _ = writeln!(out, "    {body}");
    }
    // Labels may point one past the last instruction.
    for name in names.get(&program.instructions.len()).into_iter().flatten() {
        let _ = writeln!(out, "{name}:");
    }
    out
}
