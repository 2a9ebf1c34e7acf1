use std::collections::BTreeSet;

use super::layout::{ORACLE, ORACLE_LINES};
use super::{
    default_threshold, flush_lines, reload, AttackError, AttackOutcome, Scenario, SecretLocation,
    Variant,
};
use crate::countermeasures::with_benign_gadget;
use crate::isa::{assemble, Program};
use crate::memory::line_of;
use crate::microarch::{
    run, ArchContext, CpuProfile, MachineState, RunError, RunLimits, RunReport, DEFAULT_STACK_TOP,
};

/// Fixed counter seed of every experiment.
pub(crate) const SEED: u64 = 0x5eed;

/// One experiment: a fresh core plus the outcome being filled in.
pub(crate) struct Lab<'a> {
    pub(crate) profile: &'a CpuProfile,
    pub(crate) state: MachineState,
    pub(crate) outcome: AttackOutcome,
    pub(crate) transient: BTreeSet<u64>,
    pub(crate) threshold: i64,
}

impl<'a> Lab<'a> {
    pub(crate) fn new(
        variant: Variant,
        profile: &'a CpuProfile,
        scenario: Scenario,
        expected: &[u8],
    ) -> Lab<'a> {
        let state = MachineState::new(profile, SEED);
        let threshold = default_threshold(&state);
        Lab {
            profile,
            state,
            outcome: AttackOutcome::new(variant, &profile.name, scenario, expected),
            transient: BTreeSet::new(),
            threshold,
        }
    }

    pub(crate) fn program(&self, src: &str) -> Program {
        let p = assemble(src).expect("attack programs assemble");
        if self.profile.mitigations.rsb_refill_on_cs {
            with_benign_gadget(&p)
        } else {
            p
        }
    }

    pub(crate) fn context(program: &Program, regs: &[(u8, u64)]) -> ArchContext {
        let mut ctx = ArchContext::new(program.entry, DEFAULT_STACK_TOP);
        for &(r, v) in regs {
            ctx.regs[usize::from(r)] = v;
        }
        ctx.recovery_pc = program.label("recover");
        ctx
    }

    /// Runs from the current architectural context.
    pub(crate) fn resume(&mut self, program: &Program) -> Result<RunReport, RunError> {
        let r = run(program, &mut self.state, self.profile, RunLimits::default())?;
        self.transient.extend(r.trace.transient_set.iter().copied());
        Ok(r)
    }

    pub(crate) fn exec(
        &mut self,
        program: &Program,
        regs: &[(u8, u64)],
    ) -> Result<RunReport, RunError> {
        self.state.arch = Lab::context(program, regs);
        self.resume(program)
    }

    /// Flush the oracle, run `victim`, reload, decode one byte.
    pub(crate) fn measure(
        &mut self,
        victim: impl FnOnce(&mut Lab<'a>) -> Result<(), AttackError>,
    ) -> Result<(), AttackError> {
        flush_lines(&mut self.state, ORACLE, ORACLE_LINES)?;
        victim(self)?;
        let probe = reload(&mut self.state, ORACLE, ORACLE_LINES, self.threshold);
        self.outcome
            .recovered
            .push(probe.unique_hit().map(|i| i as u8));
        self.outcome.probe_latencies.push(probe.latencies);
        Ok(())
    }

    pub(crate) fn finish(mut self, result: Result<(), AttackError>) -> AttackOutcome {
        if let Err(e) = result {
            self.outcome.error = Some(e.to_string());
        }
        self.outcome.transient_lines = self.transient.len();
        self.outcome.finish()
    }

    pub(crate) fn place(&mut self, addr: u64, loc: SecretLocation) {
        let line = line_of(addr);
        match loc {
            SecretLocation::L1 => {
                self.state.mem.cache.access_line(line);
            }
            SecretLocation::MainMemory => {
                self.state.mem.cache.invalidate_line(line);
            }
        }
    }
}
