//! Mitigation flags and the experiments that show what each one buys.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::lab::Lab;
use crate::attacks::{AttackOutcome, Scenario, SecretLocation, Variant, WindowTrigger};
use crate::isa::{Instruction, Program, SP};
use crate::memory::line_of;
use crate::microarch::{ArchContext, CpuProfile, MachineState};

/// Mitigations a profile can be hardened with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationSet {
    /// `FLUSH` faults in user mode.
    pub privileged_flush: bool,
    /// Uniform jitter added to every cycle-counter reading.
    pub pmu_noise_amplitude: u64,
    pub rsb_flush_on_cs: bool,
    /// Stuff the RSB with the benign gadget on every context switch.
    pub rsb_refill_on_cs: bool,
    pub btb_fallback_disabled: bool,
}

/// Code index of the benign delay gadget the RSB is stuffed with.
pub const BENIGN_GADGET_PC: usize = 1024;

/// Length of the NOP sled in the benign gadget.
pub const BENIGN_SLED_LEN: usize = 32;

/// Returns `program` with the benign gadget (a NOP sled and `HALT`) placed at
/// [`BENIGN_GADGET_PC`]. The gap is padded with `HALT`.
///
/// # Panics
///
/// If `program` already reaches into the reserved range.
pub fn with_benign_gadget(program: &Program) -> Program {
    assert!(
        program.len() <= BENIGN_GADGET_PC,
        "program overlaps the benign gadget at {BENIGN_GADGET_PC}"
    );
    let mut out = program.clone();
    out.instructions.resize(BENIGN_GADGET_PC, Instruction::Halt);
    out.instructions
        .extend(std::iter::repeat_n(Instruction::Nop, BENIGN_SLED_LEN));
    out.instructions.push(Instruction::Halt);
    out.labels
        .insert("benign_gadget".to_string(), BENIGN_GADGET_PC);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MitigationError {
    #[error("rsb_flush_on_cs and rsb_refill_on_cs are mutually exclusive")]
    Exclusive,
    #[error("at least 100 trials are needed, got {0}")]
    TooFewTrials(usize),
    #[error("unknown mitigation flag `{0}`")]
    UnknownFlag(String),
}

impl MitigationSet {
    pub fn check(&self) -> Result<(), MitigationError> {
        if self.rsb_flush_on_cs && self.rsb_refill_on_cs {
            return Err(MitigationError::Exclusive);
        }
        Ok(())
    }

    /// Parses a comma-separated flag list such as
    /// `rsb_flush_on_cs,btb_fallback_disabled,pmu_noise_amplitude=150`.
    pub fn from_flags(list: &str) -> Result<MitigationSet, MitigationError> {
        let mut m = MitigationSet::default();
        for flag in list.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let (name, value) = match flag.split_once('=') {
                Some((n, v)) => (n, Some(v)),
                None => (flag, None),
            };
            let unknown = || MitigationError::UnknownFlag(flag.to_string());
            match (name, value) {
                ("privileged_flush", None) => m.privileged_flush = true,
                ("rsb_flush_on_cs", None) => m.rsb_flush_on_cs = true,
                ("rsb_refill_on_cs", None) => m.rsb_refill_on_cs = true,
                ("btb_fallback_disabled", None) => m.btb_fallback_disabled = true,
                ("pmu_noise_amplitude" | "pmu_noise", Some(v)) => {
                    m.pmu_noise_amplitude = v.parse().map_err(|_| unknown())?
                }
                _ => return Err(unknown()),
            }
        }
        m.check()?;
        Ok(m)
    }

    /// Flags set in either; the larger noise amplitude.
    pub fn union(self, other: MitigationSet) -> MitigationSet {
        MitigationSet {
            privileged_flush: self.privileged_flush || other.privileged_flush,
            pmu_noise_amplitude: self.pmu_noise_amplitude.max(other.pmu_noise_amplitude),
            rsb_flush_on_cs: self.rsb_flush_on_cs || other.rsb_flush_on_cs,
            rsb_refill_on_cs: self.rsb_refill_on_cs || other.rsb_refill_on_cs,
            btb_fallback_disabled: self.btb_fallback_disabled || other.btb_fallback_disabled,
        }
    }
}

/// Hardens `profile` with `mitigations` on top of whatever it already has.
pub fn apply(
    profile: &CpuProfile,
    mitigations: MitigationSet,
) -> Result<CpuProfile, MitigationError> {
    let merged = profile.mitigations.union(mitigations);
    merged.check()?;
    Ok(CpuProfile {
        mitigations: merged,
        ..profile.clone()
    })
}

/// Secret used by [`demo_refill_bypass`].
pub const REFILL_DEMO_SECRET: &[u8] = b"refill";

const REFILL_DEMO_SRC: &str = "
entry:  YIELD
drain:  RET
victim: RET
gadget: LD   r2, [r1+0]
        SHL  r2, r2, 6
        ADD  r2, r2, r3
        LD   r4, [r2+0]
        HALT
done:   HALT
";

/// Top of the demo's hand-built return chain; the victim's real return
/// slot sits alone on this line.
const CHAIN_TOP: u64 = 0x7_8000;

/// Shows RSB refilling failing against an underfill on a core that falls
/// back to the BTB.
///
/// The attacker first returns from the victim's return site to the gadget
/// architecturally, which trains the BTB. It then yields (the refill
/// happens on the switch back), drains the refilled RSB with a chain of
/// `rsb_size` returns, and reaches the victim's `RET` with the RSB empty
/// and the real return slot evicted.
pub fn demo_refill_bypass(profile: &CpuProfile) -> AttackOutcome {
    use crate::attacks::layout::{ORACLE, SECRET, V4_PUBLIC};

    let scenario = Scenario::new(WindowTrigger::CacheMiss, SecretLocation::L1);
    let mut lab = Lab::new(Variant::Rsb, profile, scenario, REFILL_DEMO_SECRET);
    let prog = lab.program(REFILL_DEMO_SRC);
    let label = |l: &str| prog.label(l).expect("demo label") as u64;
    lab.state.mem.poke_bytes(SECRET, REFILL_DEMO_SECRET);
    lab.state.mem.poke(V4_PUBLIC, 256);

    let result = (|| {
        let n = profile.rsb_size as u64;
        let sp0 = CHAIN_TOP - 8 * n;
        for i in 0..REFILL_DEMO_SECRET.len() as u64 {
            // Train: the victim's RET architecturally lands on the gadget.
            // The real return of the previous round retrained it to `done`.
            let slot = CHAIN_TOP - 0x100;
            lab.state.mem.poke(slot, label("gadget"));
            let mut ctx = Lab::context(&prog, &[(1, V4_PUBLIC), (3, ORACLE)]);
            ctx.pc = label("victim") as usize;
            ctx.regs[SP.index()] = slot;
            lab.state.arch = ctx;
            lab.resume(&prog)?;
            lab.measure(|lab| {
                for k in 0..n - 1 {
                    lab.state.mem.poke(sp0 + 8 * k, label("drain"));
                }
                lab.state.mem.poke(CHAIN_TOP - 8, label("victim"));
                lab.state.mem.poke(CHAIN_TOP, label("done"));
                let mut ctx = Lab::context(&prog, &[(1, SECRET + i), (3, ORACLE)]);
                ctx.regs[SP.index()] = sp0;
                lab.state.arch = ctx;
                lab.resume(&prog)?;
                let attacker = lab
                    .state
                    .context_switch(ArchContext::default(), lab.profile);
                lab.place(SECRET + i, SecretLocation::L1);
                lab.state.mem.cache.invalidate_line(line_of(CHAIN_TOP));
                lab.state.context_switch(attacker, lab.profile);
                lab.resume(&prog)?;
                Ok(())
            })?;
        }
        Ok(())
    })();
    lab.finish(result)
}

/// Fraction of Flush+Reload hit/miss classifications that are right when
/// every counter reading carries uniform noise of `amplitude`. Half the
/// trials (chosen at random) touch the line between flush and reload.
pub fn pmu_noise_effect(
    profile: &CpuProfile,
    amplitude: u64,
    trials: usize,
) -> Result<f64, MitigationError> {
    pmu_noise_effect_seeded(profile, amplitude, trials, 0x5eed)
}

pub fn pmu_noise_effect_seeded(
    profile: &CpuProfile,
    amplitude: u64,
    trials: usize,
    seed: u64,
) -> Result<f64, MitigationError> {
    use crate::attacks::{default_threshold, flush_reload};
    use rand::{Rng, SeedableRng};

    if trials < 100 {
        return Err(MitigationError::TooFewTrials(trials));
    }
    let mut p = profile.clone();
    p.mitigations.pmu_noise_amplitude = amplitude;
    // The classifier needs FLUSH; this measures noise alone.
    p.mitigations.privileged_flush = false;
    let mut m = MachineState::new(&p, seed);
    m.mem.counter.advance_to(1 << 20);
    let threshold = default_threshold(&m);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let line = 0x20_0000;
    let mut correct = 0usize;
    for _ in 0..trials {
        let touch = rng.gen_bool(0.5);
        let (probe, ()) = flush_reload(&mut m, line, 1, threshold, |m| {
            if touch {
                m.mem.cache.access_line(line_of(line));
            }
        })
        .expect("flush is unprivileged here");
        if probe.hits[0] == touch {
            correct += 1;
        }
    }
    Ok(correct as f64 / trials as f64)
}
