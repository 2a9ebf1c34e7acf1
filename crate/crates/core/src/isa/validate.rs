//! Static checks over an assembled program.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::assembler::Program;
use super::instruction::{Instruction, Opcode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    /// RSB capacity the call-depth estimate is compared against.
    pub rsb_size: usize,
    /// Whether `FLUSH` should be reported as privileged.
    pub flush_is_privileged: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            rsb_size: 16,
            flush_is_privileged: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallDepth {
    Bounded(usize),
    /// The call graph has a cycle reachable from the entry.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub call_depth: CallDepth,
    /// Set when `call_depth` can exceed the RSB, i.e. overflow on the way
    /// in and underflow on the way out are possible.
    pub exceeds_rsb: bool,
    pub privileged: Vec<(usize, Opcode)>,
    pub unreachable: Vec<usize>,
}

impl ValidationReport {
    /// True when the report carries no findings.
    pub fn is_empty(&self) -> bool {
        !self.exceeds_rsb && self.privileged.is_empty() && self.unreachable.is_empty()
    }
}

pub fn validate(program: &Program, opts: ValidateOptions) -> ValidationReport {
    let privileged = program
        .instructions
        .iter()
        .enumerate()
        .filter(|(_, i)| match i.opcode() {
            Opcode::Mrs => true,
            Opcode::Flush => opts.flush_is_privileged,
            _ => false,
        })
        .map(|(pc, i)| (pc, i.opcode()))
        .collect();

    let call_depth = {
        let mut memo = HashMap::new();
        let mut on_stack = BTreeSet::new();
        function_depth(program, program.entry, &mut memo, &mut on_stack)
    };
    let exceeds_rsb = match call_depth {
        CallDepth::Bounded(d) => d > opts.rsb_size,
        CallDepth::Unbounded => true,
    };

    ValidationReport {
        call_depth,
        exceeds_rsb,
        privileged,
        unreachable: unreachable(program),
    }
}

/// Intraprocedural successors; `CALL` falls through to the next instruction.
fn successors(program: &Program, pc: usize) -> Vec<usize> {
    let next = pc + 1;
    match program.instructions[pc] {
        Instruction::Ret | Instruction::Halt => vec![],
        Instruction::Bge { target } => vec![target, next],
        _ => vec![next],
    }
    .into_iter()
    .filter(|&p| p < program.len())
    .collect()
}

/// Body of the function starting at `start`.
fn function_body(program: &Program, start: usize) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    let mut work = vec![start];
    while let Some(pc) = work.pop() {
        if pc >= program.len() || !seen.insert(pc) {
            continue;
        }
        work.extend(successors(program, pc));
    }
    seen.into_iter().collect()
}

fn function_depth(
    program: &Program,
    start: usize,
    memo: &mut HashMap<usize, CallDepth>,
    on_stack: &mut BTreeSet<usize>,
) -> CallDepth {
    if let Some(&d) = memo.get(&start) {
        return d;
    }
    if !on_stack.insert(start) {
        return CallDepth::Unbounded;
    }
    let mut depth = CallDepth::Bounded(0);
    for pc in function_body(program, start) {
        if let Instruction::Call { target } = program.instructions[pc] {
            depth = match (depth, function_depth(program, target, memo, on_stack)) {
                (CallDepth::Bounded(a), CallDepth::Bounded(b)) => CallDepth::Bounded(a.max(b + 1)),
                _ => CallDepth::Unbounded,
            };
        }
    }
    on_stack.remove(&start);
    memo.insert(start, depth);
    depth
}

fn unreachable(program: &Program) -> Vec<usize> {
    let mut seen = vec![false; program.len()];
    let mut work = vec![program.entry];
    while let Some(pc) = work.pop() {
        if pc >= program.len() || seen[pc] {
            continue;
        }
        seen[pc] = true;
        work.extend(successors(program, pc));
        // Call targets and code addresses materialized with MOVI (return
        // slot overwrites) are entry points too.
        if let Some(t) = program.instructions[pc].code_refs() {
            work.push(t);
        }
    }
    seen.iter()
        .enumerate()
        .filter(|(_, &s)| !s)
        .map(|(pc, _)| pc)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    #[test]
    fn straight_line_program_has_empty_report() {
        let p = assemble("MOVI r1, 1\nADD r1, r1, 2\nHALT").unwrap();
        let r = validate(&p, ValidateOptions::default());
        assert!(r.is_empty(), "{r:?}");
        assert_eq!(r.call_depth, CallDepth::Bounded(0));
    }

    #[test]
    fn mrs_is_listed_as_privileged() {
        let p = assemble("MRS r1, s3\nHALT").unwrap();
        let r = validate(&p, ValidateOptions::default());
        assert_eq!(r.privileged, vec![(0, Opcode::Mrs)]);
    }

    #[test]
    fn flush_is_privileged_only_when_gated() {
        let p = assemble("FLUSH [r1]\nHALT").unwrap();
        assert!(validate(&p, ValidateOptions::default())
            .privileged
            .is_empty());
        let gated = ValidateOptions {
            flush_is_privileged: true,
            ..Default::default()
        };
        assert_eq!(validate(&p, gated).privileged, vec![(0, Opcode::Flush)]);
    }

    #[test]
    fn deep_call_chain_exceeds_rsb() {
        let mut src = String::from("CALL f0\nHALT\n");
        for i in 0..40 {
            if i < 39 {
                src += &format!("f{i}:\nCALL f{}\nRET\n", i + 1);
            } else {
                src += &format!("f{i}:\nRET\n");
            }
        }
        let p = assemble(&src).unwrap();
        let r = validate(&p, ValidateOptions::default());
        assert_eq!(r.call_depth, CallDepth::Bounded(40));
        assert!(r.exceeds_rsb);
        assert!(r.unreachable.is_empty());
    }

    #[test]
    fn recursion_is_unbounded() {
        let p = assemble("CALL f\nHALT\nf:\nCMP r1, 0\nBGE done\nCALL f\ndone:\nRET").unwrap();
        let r = validate(&p, ValidateOptions::default());
        assert_eq!(r.call_depth, CallDepth::Unbounded);
        assert!(r.exceeds_rsb);
    }

    #[test]
    fn code_after_halt_is_unreachable() {
        let p = assemble("HALT\nNOP\nNOP").unwrap();
        assert_eq!(
            validate(&p, ValidateOptions::default()).unreachable,
            vec![1, 2]
        );
    }
}
