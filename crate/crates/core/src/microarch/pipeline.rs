//! The speculative core.
//!
//! Instructions are fetched one per cycle along the predicted path and
//! dispatched in fetch order. Because an instruction's timing only depends
//! on older instructions, its issue, completion and retirement cycles are
//! fixed at dispatch:
//!
//! * issue = max(fetch + 1, operands ready, serialization barriers)
//! * complete = issue + latency (ALU 1, loads per the memory hierarchy)
//! * retire = max(complete, previous retire + 1)
//!
//! A misprediction, a fault at retirement or a store that turns out to alias
//! a bypassing load is a *redirect* at some cycle `E`: every younger
//! instruction is squashed and fetch restarts at `E + 1`. A squashed
//! instruction executed iff it issued before `E`; its cache fill survives if
//! it completed by `E`, or if it was in flight and the profile keeps
//! in-flight fills. Cache effects are queued as timed events and applied to
//! the hierarchy in cycle order.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::{CpuProfile, ExceptionPolicy, Pipeline, SquashPolicy};
use super::state::MachineState;
use super::trace::{EventKind, Trace, TraceEvent};
use crate::isa::{Constant, Instruction, Operand, Program, Reg, SysReg, NUM_REGS, SP};
use crate::memory::{line_of, FaultKind, Level, Privilege};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLimits {
    pub max_cycles: u64,
    /// Keep per-event trace records (the transient set is always kept).
    pub record: bool,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            max_cycles: 1_000_000,
            record: false,
        }
    }
}

impl RunLimits {
    pub fn recording() -> RunLimits {
        RunLimits {
            record: true,
            ..RunLimits::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exit {
    Halted,
    /// `YIELD` retired; `arch.pc` points past it, ready to resume.
    Yielded,
}

/// An architectural fault raised at retirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Error)]
pub enum ArchFault {
    #[error("page fault at {0:#x}")]
    PageFault(u64),
    #[error("privileged access to {0:#x}")]
    Privilege(u64),
    #[error("privileged system register {0}")]
    SysReg(SysReg),
    #[error("privileged flush of {0:#x}")]
    Flush(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub exit: Exit,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub trace: Trace,
}

impl RunReport {
    pub fn cycles(&self) -> u64 {
        self.end_cycle - self.start_cycle
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("max_cycles must be positive")]
    NoBudget,
    #[error("cycle limit of {limit} exceeded")]
    CycleLimit { limit: u64, trace: Box<Trace> },
    #[error("unhandled fault at pc {pc}: {fault}")]
    Fault {
        pc: usize,
        fault: ArchFault,
        trace: Box<Trace>,
    },
    #[error("control reached pc {pc} outside the program")]
    InvalidPc { pc: usize, trace: Box<Trace> },
}

/// Whether a cache fill started by an instruction squashed at `resolve`
/// leaves its line behind.
pub fn fill_survives(policy: SquashPolicy, issue: u64, complete: u64, resolve: u64) -> bool {
    if issue >= resolve {
        false
    } else if complete <= resolve {
        true
    } else {
        policy == SquashPolicy::KeepInflightFills
    }
}

/// What dependents of a faulting access see before the fault retires.
pub fn transient_value(policy: ExceptionPolicy, real: u64) -> u64 {
    match policy {
        ExceptionPolicy::DeferredForwardValue => real,
        ExceptionPolicy::DeferredForwardZero => 0,
    }
}

/// Runs `program` from `state.arch.pc` until a `HALT` or `YIELD` retires.
pub fn run(
    program: &Program,
    state: &mut MachineState,
    profile: &CpuProfile,
    limits: RunLimits,
) -> Result<RunReport, RunError> {
    if limits.max_cycles == 0 {
        return Err(RunError::NoBudget);
    }
    Engine::new(program, state, profile, limits).run()
}

#[derive(Debug, Clone, Copy)]
struct Val {
    v: u64,
    ready: u64,
}

#[derive(Debug, Clone)]
struct View {
    regs: [Val; NUM_REGS],
    flags: Val,
}

impl View {
    fn reg(&self, r: Reg) -> Val {
        self.regs[r.index()]
    }

    fn operand(&self, op: Operand) -> Val {
        match op {
            Operand::Reg(r) => self.reg(r),
            Operand::Imm(i) => Val {
                v: i as u64,
                ready: 0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Why {
    Mispredict,
    Fault(ArchFault),
    StoreAlias,
}

#[derive(Debug, Clone, Copy)]
struct Redirect {
    at: u64,
    /// First squashed instruction.
    from_seq: u64,
    target: Option<usize>,
    why: Why,
}

#[derive(Debug, Clone, Copy)]
struct StoreInfo {
    addr: u64,
    addr_ready: u64,
    value: u64,
    data_ready: u64,
}

#[derive(Debug, Clone, Copy)]
enum Retire {
    Nothing,
    Branch(bool),
    Transfer(usize),
    End(Exit),
}

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    pc: usize,
    view_before: View,
    retire: u64,
    /// Younger instructions may not issue before this cycle.
    barrier: u64,
    store: Option<StoreInfo>,
    redirects: Vec<Redirect>,
    faults: bool,
    on_retire: Retire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum CacheOp {
    Invalidate,
    Access,
}

#[derive(Debug, Clone, Copy)]
struct CacheEvent {
    time: u64,
    seq: u64,
    line: u64,
    op: CacheOp,
    /// Cycle the request left for the hierarchy (fills only).
    start: u64,
}

enum Lookup {
    Present,
    InFlight(u64),
    At(Level),
}

struct Engine<'a> {
    program: &'a Program,
    st: &'a mut MachineState,
    profile: &'a CpuProfile,
    limits: RunLimits,
    start: u64,
    deadline: u64,
    view: View,
    rob: VecDeque<Entry>,
    next_seq: u64,
    fetch_pc: usize,
    fetch_at: u64,
    fetch_blocked: bool,
    /// Retire and barrier cycles of the last retired instruction.
    retired_tail: (u64, u64),
    pending: Vec<CacheEvent>,
    trace: Trace,
    exit: Option<(Exit, u64, usize)>,
}

impl<'a> Engine<'a> {
    fn new(
        program: &'a Program,
        st: &'a mut MachineState,
        profile: &'a CpuProfile,
        limits: RunLimits,
    ) -> Engine<'a> {
        let start = st.cycle();
        let mut regs = [Val { v: 0, ready: start }; NUM_REGS];
        for (slot, &v) in regs.iter_mut().zip(st.arch.regs.iter()) {
            slot.v = v;
        }
        let view = View {
            regs,
            flags: Val {
                v: u64::from(st.arch.flags),
                ready: start,
            },
        };
        Engine {
            program,
            fetch_pc: st.arch.pc,
            st,
            profile,
            limits,
            start,
            deadline: start.saturating_add(limits.max_cycles),
            view,
            rob: VecDeque::new(),
            next_seq: 0,
            fetch_at: start,
            fetch_blocked: false,
            retired_tail: (start, start),
            pending: Vec::new(),
            trace: Trace::default(),
            exit: None,
        }
    }

    fn record(
        &mut self,
        cycle: u64,
        seq: u64,
        kind: EventKind,
        pc: usize,
        detail: impl FnOnce() -> String,
    ) {
        if self.limits.record {
            self.trace.events.push(TraceEvent {
                cycle,
                seq,
                kind,
                pc,
                detail: detail(),
            });
        }
    }

    fn tail(&self) -> (u64, u64) {
        self.rob
            .back()
            .map_or(self.retired_tail, |e| (e.retire, e.barrier))
    }

    fn earliest_redirect(&self) -> Option<Redirect> {
        self.rob
            .iter()
            .flat_map(|e| e.redirects.iter().copied())
            .min_by_key(|r| (r.at, r.from_seq))
    }

    fn run(mut self) -> Result<RunReport, RunError> {
        loop {
            let fetch_t = if self.fetch_blocked {
                None
            } else {
                let mut t = self.fetch_at;
                let rob_size = self.profile.rob_size;
                if self.rob.len() >= rob_size {
                    t = t.max(self.rob[self.rob.len() - rob_size].retire + 1);
                }
                Some(t)
            };
            let redirect = self.earliest_redirect();
            match (fetch_t, redirect) {
                (f, Some(r)) if f.is_none_or(|f| r.at < f) => {
                    self.check_deadline(r.at)?;
                    self.retire_upto(r.at);
                    if self.exit.is_some() {
                        return Ok(self.finish());
                    }
                    self.apply_redirect(r)?;
                }
                (Some(t), _) => {
                    self.check_deadline(t)?;
                    self.retire_upto(t.saturating_sub(1));
                    if self.exit.is_some() {
                        return Ok(self.finish());
                    }
                    self.commit_events(t);
                    self.dispatch(t);
                }
                _ => {
                    let (last, _) = self.tail();
                    self.check_deadline(last)?;
                    self.retire_upto(u64::MAX);
                    if self.exit.is_some() {
                        return Ok(self.finish());
                    }
                    let pc = self.fetch_pc;
                    let trace = Box::new(self.abort());
                    return Err(RunError::InvalidPc { pc, trace });
                }
            }
        }
    }

    fn check_deadline(&mut self, t: u64) -> Result<(), RunError> {
        if t > self.deadline {
            let limit = self.limits.max_cycles;
            let trace = Box::new(self.abort());
            return Err(RunError::CycleLimit { limit, trace });
        }
        Ok(())
    }

    fn retire_upto(&mut self, t: u64) {
        while let Some(head) = self.rob.front() {
            if head.retire > t || head.faults {
                break;
            }
            let e = self.rob.pop_front().expect("non-empty");
            if let Some(s) = e.store {
                self.st.mem.poke(s.addr, s.value);
                self.pending.push(CacheEvent {
                    time: e.retire,
                    seq: e.seq,
                    line: line_of(s.addr),
                    op: CacheOp::Access,
                    start: e.retire,
                });
            }
            match e.on_retire {
                Retire::Nothing => {}
                Retire::Branch(taken) => self.st.pht.update(e.pc, taken),
                Retire::Transfer(target) => self.st.btb.update(e.pc, target),
                Retire::End(exit) => {
                    let resume = match exit {
                        Exit::Halted => e.pc,
                        Exit::Yielded => e.pc + 1,
                    };
                    self.exit = Some((exit, e.retire, resume));
                }
            }
            self.retired_tail = (e.retire, e.barrier);
            self.trace.retired += 1;
            self.record(e.retire, e.seq, EventKind::Retire, e.pc, String::new);
            if self.exit.is_some() {
                break;
            }
        }
    }

    fn apply_redirect(&mut self, r: Redirect) -> Result<(), RunError> {
        let idx = self
            .rob
            .iter()
            .position(|e| e.seq >= r.from_seq)
            .unwrap_or(self.rob.len());
        if idx < self.rob.len() {
            self.view = self.rob[idx].view_before.clone();
        }
        let squashed: Vec<Entry> = self.rob.drain(idx..).collect();
        for e in self.rob.iter_mut() {
            e.redirects
                .retain(|x| (x.at, x.from_seq) != (r.at, r.from_seq));
        }
        self.trace.squashes += 1;
        if r.why == Why::Mispredict {
            self.trace.mispredicts += 1;
        }
        let why = r.why;
        if self.limits.record {
            for e in &squashed {
                self.record(r.at, e.seq, EventKind::Squash, e.pc, || match why {
                    Why::Mispredict => "mispredict".into(),
                    Why::Fault(f) => format!("fault: {f}"),
                    Why::StoreAlias => "store alias".into(),
                });
            }
        }
        if let Why::Fault(fault) = r.why {
            let pc = squashed[0].pc;
            self.trace.faults += 1;
            self.record(r.at, squashed[0].seq, EventKind::Fault, pc, || {
                fault.to_string()
            });
            if r.target.is_none() {
                self.retired_tail.0 = self.retired_tail.0.max(r.at);
                let trace = Box::new(self.abort());
                self.st.arch.pc = pc;
                return Err(RunError::Fault { pc, fault, trace });
            }
        }
        self.fetch_pc = r.target.expect("recoverable redirect");
        self.fetch_at = r.at + 1;
        self.fetch_blocked = false;
        Ok(())
    }

    fn commit_events(&mut self, horizon: u64) {
        if self.pending.iter().all(|e| e.time > horizon) {
            return;
        }
        let mut due: Vec<CacheEvent> = Vec::new();
        self.pending.retain(|e| {
            if e.time <= horizon {
                due.push(*e);
                false
            } else {
                true
            }
        });
        self.apply_events(due);
    }

    fn apply_events(&mut self, mut due: Vec<CacheEvent>) {
        due.sort_by_key(|e| (e.time, e.seq, e.op));
        for e in due {
            match e.op {
                CacheOp::Access => {
                    self.st.mem.cache.access_line(e.line);
                }
                CacheOp::Invalidate => {
                    self.st.mem.cache.invalidate_line(e.line);
                }
            }
        }
    }

    /// State of `line` as seen by an access issued at `t`.
    fn lookup(&self, line: u64, t: u64) -> Lookup {
        let mut latest: Option<&CacheEvent> = None;
        let mut inflight: Option<u64> = None;
        for e in self.pending.iter().filter(|e| e.line == line) {
            if e.time <= t {
                if latest.is_none_or(|l| (e.time, e.seq) > (l.time, l.seq)) {
                    latest = Some(e);
                }
            } else if e.op == CacheOp::Access && e.start <= t {
                inflight = Some(inflight.map_or(e.time, |i| i.min(e.time)));
            }
        }
        match latest {
            Some(e) if e.op == CacheOp::Access => Lookup::Present,
            Some(_) => Lookup::At(Level::Dram),
            None => match inflight {
                Some(ready) => Lookup::InFlight(ready),
                None => Lookup::At(self.st.mem.cache.peek(line)),
            },
        }
    }

    fn finish(mut self) -> RunReport {
        let (exit, end, resume) = self.exit.expect("finished runs have an exit");
        let pending = std::mem::take(&mut self.pending);
        self.apply_events(pending);
        self.writeback(resume);
        self.st.mem.counter.advance_to(end);
        let mut trace = std::mem::take(&mut self.trace);
        trace.sort();
        RunReport {
            exit,
            start_cycle: self.start,
            end_cycle: end,
            trace,
        }
    }

    /// Ends a failed run: drops speculative work, commits what survives.
    fn abort(&mut self) -> Trace {
        // Everything still in flight is younger than the last retired
        // instruction; the architectural state is the view before it.
        if let Some(first) = self.rob.front() {
            self.view = first.view_before.clone();
        }
        let pc = self.rob.front().map_or(self.fetch_pc, |e| e.pc);
        self.rob.clear();
        let pending = std::mem::take(&mut self.pending);
        self.apply_events(pending);
        self.writeback(pc);
        let end = self.retired_tail.0;
        self.st.mem.counter.advance_to(end);
        let mut trace = std::mem::take(&mut self.trace);
        trace.sort();
        trace
    }

    fn writeback(&mut self, pc: usize) {
        for (dst, v) in self.st.arch.regs.iter_mut().zip(self.view.regs.iter()) {
            *dst = v.v;
        }
        self.st.arch.flags = self.view.flags.v != 0;
        self.st.arch.pc = pc;
    }

    fn dispatch(&mut self, t: u64) {
        let pc = self.fetch_pc;
        let Some(&instr) = self.program.get(pc) else {
            self.fetch_blocked = true;
            return;
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.record(t, seq, EventKind::Fetch, pc, || instr.opcode().to_string());

        let (tail_retire, tail_barrier) = self.tail();
        let kill = self.earliest_redirect().map(|r| r.at);
        let in_order = self.profile.pipeline == Pipeline::InOrder;
        let mut floor = (t + 1).max(tail_barrier);
        if in_order {
            floor = floor.max(tail_retire);
        }
        let view_before = self.view.clone();

        let mut issue = floor;
        let complete;
        let mut next_pc = pc + 1;
        let mut store = None;
        let mut redirects: Vec<Redirect> = Vec::new();
        let mut fault = None;
        let mut serializing = false;
        let mut on_retire = Retire::Nothing;
        // Fetch resumes no earlier than this (control stalls).
        let mut resume_fetch = t + 1;

        match instr {
            Instruction::Movi { rd, value } => {
                complete = issue + 1;
                let v = match value {
                    Constant::Imm(i) => i as u64,
                    Constant::Code(c) => c as u64,
                };
                self.write(rd, v, complete);
            }
            Instruction::Add { rd, ra, rb }
            | Instruction::Shl { rd, ra, rb }
            | Instruction::And { rd, ra, rb } => {
                let a = self.view.reg(ra);
                let b = self.view.operand(rb);
                issue = issue.max(a.ready).max(b.ready);
                complete = issue + 1;
                let v = match instr {
                    Instruction::Add { .. } => a.v.wrapping_add(b.v),
                    Instruction::Shl { .. } => a.v.wrapping_shl((b.v & 63) as u32),
                    _ => a.v & b.v,
                };
                self.write(rd, v, complete);
            }
            Instruction::Cmp { ra, rb } => {
                let a = self.view.reg(ra);
                let b = self.view.operand(rb);
                issue = issue.max(a.ready).max(b.ready);
                complete = issue + 1;
                self.view.flags = Val {
                    v: u64::from(a.v as i64 >= b.v as i64),
                    ready: complete,
                };
            }
            Instruction::Bge { target } => {
                let flags = self.view.flags;
                issue = issue.max(flags.ready);
                let resolve = issue + 1 + self.profile.branch_resolve_extra;
                complete = resolve;
                let taken = flags.v != 0;
                let actual = if taken { target } else { pc + 1 };
                on_retire = Retire::Branch(taken);
                if in_order {
                    next_pc = actual;
                    resume_fetch = resolve + 1;
                } else {
                    let predicted = self.st.pht.predict(pc);
                    next_pc = if predicted { target } else { pc + 1 };
                    self.record(t, seq, EventKind::Predict, pc, || {
                        format!(
                            "{} -> {next_pc}",
                            if predicted { "taken" } else { "not-taken" }
                        )
                    });
                    if predicted != taken {
                        redirects.push(Redirect {
                            at: resolve,
                            from_seq: seq + 1,
                            target: Some(actual),
                            why: Why::Mispredict,
                        });
                    }
                }
            }
            Instruction::Call { target } => {
                let sp = self.view.reg(SP);
                issue = issue.max(sp.ready);
                complete = issue + 1;
                let slot = sp.v.wrapping_sub(8);
                fault = self.store_fault(slot);
                store = Some(StoreInfo {
                    addr: slot,
                    addr_ready: issue,
                    value: (pc + 1) as u64,
                    data_ready: issue,
                });
                self.write(SP, slot, complete);
                self.st.rsb.push(pc + 1);
                next_pc = target;
                on_retire = Retire::Transfer(target);
            }
            Instruction::Ret => {
                let sp = self.view.reg(SP);
                let predicted =
                    self.st
                        .rsb
                        .pop(&self.st.btb, pc, self.profile.effective_underflow());
                issue = issue.max(sp.ready);
                let ld = self.load(seq, pc, sp.v, issue, kill);
                issue = ld.issue;
                fault = ld.fault;
                let actual = ld.value as usize;
                let resolve = ld.complete + self.profile.return_resolve_extra;
                complete = resolve;
                self.write(SP, sp.v.wrapping_add(8), issue + 1);
                on_retire = Retire::Transfer(actual);
                redirects.extend(ld.redirect);
                if in_order {
                    next_pc = actual;
                    resume_fetch = resolve + 1;
                } else {
                    self.record(t, seq, EventKind::Predict, pc, || match predicted {
                        Some(p) => format!("return -> {p}"),
                        None => "return -> none".into(),
                    });
                    match predicted {
                        Some(p) if p == actual => next_pc = p,
                        Some(p) => {
                            next_pc = p;
                            redirects.push(Redirect {
                                at: resolve,
                                from_seq: seq + 1,
                                target: Some(actual),
                                why: Why::Mispredict,
                            });
                        }
                        None => {
                            next_pc = actual;
                            resume_fetch = resolve + 1;
                        }
                    }
                }
            }
            Instruction::Ld { rd, addr } => {
                let base = self.view.reg(addr.base);
                issue = issue.max(base.ready);
                let a = base.v.wrapping_add(addr.offset as u64);
                let ld = self.load(seq, pc, a, issue, kill);
                issue = ld.issue;
                complete = ld.complete;
                fault = ld.fault;
                redirects.extend(ld.redirect);
                self.write(rd, ld.value, complete);
            }
            Instruction::St { rs, addr } => {
                let base = self.view.reg(addr.base);
                let data = self.view.reg(rs);
                let addr_ready = issue.max(base.ready);
                let a = base.v.wrapping_add(addr.offset as u64);
                issue = addr_ready;
                complete = addr_ready.max(data.ready) + 1;
                fault = self.store_fault(a);
                store = Some(StoreInfo {
                    addr: a,
                    addr_ready,
                    value: data.v,
                    data_ready: data.ready,
                });
            }
            Instruction::Flush { addr } => {
                serializing = true;
                let base = self.view.reg(addr.base);
                issue = issue.max(tail_retire).max(base.ready);
                complete = issue + 1;
                let a = base.v.wrapping_add(addr.offset as u64);
                if self.st.flush_is_privileged && self.st.arch.privilege == Privilege::User {
                    fault = Some(ArchFault::Flush(a));
                } else if kill.is_none_or(|k| issue < k) {
                    self.pending.push(CacheEvent {
                        time: issue,
                        seq,
                        line: line_of(a),
                        op: CacheOp::Invalidate,
                        start: issue,
                    });
                }
            }
            Instruction::Rdcyc { rd } => {
                serializing = true;
                issue = issue.max(tail_retire);
                complete = issue + 1;
                let v = if kill.is_none_or(|k| issue < k) {
                    self.st.mem.counter.read_at(issue)
                } else {
                    0
                };
                self.write(rd, v, complete);
            }
            Instruction::Mrs { rd, sysreg } => {
                complete = issue + 1;
                let real = self.st.sysregs.get(&sysreg).copied().unwrap_or(0);
                let v = if self.st.arch.privilege == Privilege::Kernel {
                    real
                } else {
                    fault = Some(ArchFault::SysReg(sysreg));
                    if self.profile.sysreg_transient_forward {
                        real
                    } else {
                        0
                    }
                };
                self.write(rd, v, complete);
            }
            Instruction::Yield | Instruction::Halt => {
                serializing = true;
                issue = issue.max(tail_retire);
                complete = issue + 1;
                self.fetch_blocked = true;
                on_retire = Retire::End(if instr == Instruction::Halt {
                    Exit::Halted
                } else {
                    Exit::Yielded
                });
            }
            Instruction::Fence => {
                serializing = true;
                issue = issue.max(tail_retire);
                complete = issue + 1;
            }
            Instruction::Nop => {
                complete = issue + 1;
            }
        }

        let retire = complete.max(tail_retire + 1);
        let executed = kill.is_none_or(|k| issue < k);
        if executed {
            self.record(issue, seq, EventKind::Execute, pc, || {
                format!("complete={complete}")
            });
        } else {
            // Squashed before it issued: it can neither resolve nor fault.
            redirects.clear();
            fault = None;
        }
        if let Some(f) = fault {
            redirects.push(Redirect {
                at: retire,
                from_seq: seq,
                target: self.st.arch.recovery_pc,
                why: Why::Fault(f),
            });
        }
        let barrier = if serializing { retire } else { tail_barrier };
        self.rob.push_back(Entry {
            seq,
            pc,
            view_before,
            retire,
            barrier,
            store,
            redirects,
            faults: fault.is_some(),
            on_retire,
        });
        if !self.fetch_blocked {
            self.fetch_pc = next_pc;
        }
        self.fetch_at = resume_fetch;
    }

    fn write(&mut self, rd: Reg, v: u64, ready: u64) {
        self.view.regs[rd.index()] = Val { v, ready };
    }

    fn store_fault(&self, addr: u64) -> Option<ArchFault> {
        match self.st.mem.page_table.check(addr, self.st.arch.privilege) {
            Ok(()) => None,
            Err(FaultKind::PageFault) => Some(ArchFault::PageFault(addr)),
            Err(FaultKind::Privilege) => Some(ArchFault::Privilege(addr)),
        }
    }

    fn load(&mut self, seq: u64, pc: usize, addr: u64, floor: u64, kill: Option<u64>) -> LoadOut {
        let stl = self.profile.stl_speculation;
        let mut issue = floor;
        if !stl {
            for s in self.rob.iter().filter_map(|e| e.store) {
                issue = issue.max(s.addr_ready);
            }
        }
        let mut forward = None;
        let mut alias_at: Option<u64> = None;
        for s in self.rob.iter().rev().filter_map(|e| e.store) {
            if s.addr_ready > issue {
                if s.addr == addr {
                    alias_at = Some(alias_at.map_or(s.addr_ready, |a| a.min(s.addr_ready)));
                }
                continue;
            }
            if s.addr == addr {
                forward = Some(s);
                break;
            }
        }
        let executed = kill.is_none_or(|k| issue < k);
        let lat = self.profile.latencies;
        let real = forward.map_or_else(|| self.st.mem.peek(addr), |s| s.value);

        let mut out = LoadOut {
            issue,
            complete: issue + lat.l1,
            value: real,
            fault: None,
            redirect: None,
        };
        let mut touches_cache = true;
        match self.st.mem.page_table.check(addr, self.st.arch.privilege) {
            Ok(()) => {}
            Err(FaultKind::PageFault) => {
                out.fault = Some(ArchFault::PageFault(addr));
                out.value = 0;
                out.complete = issue + lat.page_fault;
                touches_cache = false;
            }
            Err(FaultKind::Privilege) => {
                out.fault = Some(ArchFault::Privilege(addr));
                out.value = transient_value(self.profile.exception_policy, real);
            }
        }
        if touches_cache {
            if let Some(s) = forward {
                out.complete = issue.max(s.data_ready) + lat.l1;
            } else {
                let line = line_of(addr);
                let (complete, fill) = match self.lookup(line, issue) {
                    Lookup::Present => (issue + lat.l1, false),
                    Lookup::InFlight(ready) => (ready.max(issue + 1), false),
                    Lookup::At(level) => (issue + lat.of(level), level != Level::L1),
                };
                out.complete = complete;
                if executed {
                    let persists = match kill {
                        Some(k) => fill_survives(self.profile.squash_policy, issue, complete, k),
                        None => true,
                    };
                    if fill && persists {
                        self.pending.push(CacheEvent {
                            time: complete,
                            seq,
                            line,
                            op: CacheOp::Access,
                            start: issue,
                        });
                        if kill.is_some() {
                            self.trace.transient_set.insert(line);
                        }
                        self.record(complete, seq, EventKind::Fill, pc, || {
                            format!("line={line:#x}")
                        });
                    } else if !fill {
                        self.pending.push(CacheEvent {
                            time: issue,
                            seq,
                            line,
                            op: CacheOp::Access,
                            start: issue,
                        });
                    }
                }
            }
        }
        if executed {
            if let Some(at) = alias_at {
                out.redirect = Some(Redirect {
                    at,
                    from_seq: seq,
                    target: Some(pc),
                    why: Why::StoreAlias,
                });
            }
        }
        out
    }
}

struct LoadOut {
    issue: u64,
    complete: u64,
    value: u64,
    fault: Option<ArchFault>,
    redirect: Option<Redirect>,
}
