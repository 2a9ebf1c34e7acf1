use super::lab::Lab;
use super::layout::*;
use super::{AttackError, AttackOutcome, Scenario, SecretLocation, Variant, WindowTrigger};
use crate::isa::{Program, SysReg};
use crate::memory::line_of;
use crate::microarch::{ArchContext, CpuProfile, Exit};

/// Oracle line the speculative-load gadget touches, as a "byte".
pub const SPECULATIVE_LOAD_MARKER: u8 = PROBE_INDEX as u8;
/// System register read by the V3a gadget.
pub const V3A_SYSREG: SysReg = SysReg(3);
/// Value planted in [`V3A_SYSREG`].
pub const SYSREG_TEST_VALUE: u8 = 0xa5;

const TRAINING_ROUNDS: usize = 5;

// r1 index, r3 oracle, r7 &bound, r8 array1.
const V1_SRC: &str = "
entry:  LD   r5, [r7+0]
        ADD  r6, r1, 1
        CMP  r5, r6
        BGE  body
        HALT
body:   ADD  r9, r8, r1
        LD   r2, [r9+0]
        SHL  r2, r2, 6
        ADD  r2, r2, r3
        LD   r4, [r2+0]
        HALT
recover: HALT
";

// r3 probe, r6 threshold, r7 &bound. The fall-through path is the gadget.
const SPECLOAD_SRC: &str = "
entry:  LD   r5, [r7+0]
        CMP  r5, r6
        BGE  skip
        LD   r4, [r3+0]
skip:   HALT
recover: HALT
";

// r1 &secret, r3 oracle. The victim swaps its return slot, yields, and
// returns from the (meanwhile evicted) stack.
const RSB_SRC: &str = "
entry:  CALL victim
        LD   r2, [r1+0]
        SHL  r2, r2, 6
        ADD  r2, r2, r3
        LD   r4, [r2+0]
        HALT
victim: MOVI r6, done
        ST   r6, [sp+0]
        YIELD
        RET
done:   HALT
";

const V3A_SRC: &str = "
entry:  CALL victim
        MRS  r2, s3
        SHL  r2, r2, 6
        ADD  r2, r2, r3
        LD   r4, [r2+0]
        HALT
victim: MOVI r6, done
        ST   r6, [sp+0]
        YIELD
        RET
done:   HALT
";

// r1 &kernel secret, r3 oracle, r7 &delay.
const V3_SRC: &str = "
entry:  LD   r5, [r7+0]
        LD   r2, [r1+0]
        SHL  r2, r2, 6
        ADD  r2, r2, r3
        LD   r4, [r2+0]
        HALT
recover: HALT
";

// r3 oracle, r7 &slow, r8 &public, r9 &ptr.
const V4_SRC: &str = "
entry:  LD   r5, [r7+0]
        ST   r8, [r5+0]
        LD   r6, [r9+0]
        LD   r2, [r6+0]
        SHL  r2, r2, 6
        ADD  r2, r2, r3
        LD   r4, [r2+0]
        HALT
";

fn check_secret(secret: &[u8]) -> Result<(), AttackError> {
    if secret.is_empty() || secret.len() > 64 {
        return Err(AttackError::SecretLength(secret.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct V1Options {
    /// Call the victim with an in-bounds index instead of the malicious one,
    /// so the gadget never runs on secret data.
    pub in_bounds_only: bool,
}

pub fn run_spectre_v1(
    profile: &CpuProfile,
    scenario: Scenario,
    secret: &[u8],
) -> Result<AttackOutcome, AttackError> {
    run_spectre_v1_with(profile, scenario, secret, V1Options::default())
}

pub fn run_spectre_v1_with(
    profile: &CpuProfile,
    scenario: Scenario,
    secret: &[u8],
    opts: V1Options,
) -> Result<AttackOutcome, AttackError> {
    if scenario.window_trigger == WindowTrigger::SpeculativeLoad {
        return Ok(speculative_load_outcome(profile, Variant::V1));
    }
    check_secret(secret)?;
    let mut lab = Lab::new(Variant::V1, profile, scenario, secret);
    let prog = lab.program(V1_SRC);
    for k in 0..ARRAY1_LEN {
        lab.state.mem.poke(ARRAY1 + k, k);
    }
    lab.state.mem.poke(BOUND, ARRAY1_LEN);
    lab.state.mem.poke_bytes(SECRET, secret);

    let result = (|| {
        for i in 0..secret.len() as u64 {
            let train = i % ARRAY1_LEN;
            let base = [(3, ORACLE), (7, BOUND), (8, ARRAY1)];
            for _ in 0..TRAINING_ROUNDS {
                lab.exec(&prog, &[(1, train), base[0], base[1], base[2]])?;
            }
            let x = if opts.in_bounds_only {
                train
            } else {
                (SECRET + i).wrapping_sub(ARRAY1)
            };
            lab.measure(|lab| {
                lab.place(SECRET + i, scenario.secret_location);
                let unmap = scenario.window_trigger == WindowTrigger::PageFault;
                if unmap {
                    lab.state.mem.page_table.unmap(BOUND);
                } else {
                    lab.state.mem.cache.invalidate_line(line_of(BOUND));
                }
                let r = lab.exec(&prog, &[(1, x), base[0], base[1], base[2]]);
                if unmap {
                    lab.state.mem.page_table.map(BOUND);
                }
                r?;
                Ok(())
            })?;
        }
        Ok(())
    })();
    Ok(lab.finish(result))
}

/// Whether a single load in the shadow of a mispredicted branch leaves its
/// line cached.
pub fn speculative_load_test(profile: &CpuProfile) -> bool {
    speculative_load_outcome(profile, Variant::V1).success
}

/// [`speculative_load_test`] as a full outcome; the "secret" is the probe
/// line index.
pub fn speculative_load_outcome(profile: &CpuProfile, variant: Variant) -> AttackOutcome {
    let mut lab = Lab::new(
        variant,
        profile,
        Scenario::speculative_load(),
        &[SPECULATIVE_LOAD_MARKER],
    );
    let prog = lab.program(SPECLOAD_SRC);
    let probe = oracle_line(PROBE_INDEX);
    lab.state.mem.poke(BOUND, 0);
    let result = (|| {
        for _ in 0..TRAINING_ROUNDS {
            lab.exec(&prog, &[(3, probe), (6, 1), (7, BOUND)])?;
        }
        lab.measure(|lab| {
            lab.state.mem.page_table.unmap(BOUND);
            let r = lab.exec(&prog, &[(3, probe), (6, 0), (7, BOUND)]);
            lab.state.mem.page_table.map(BOUND);
            r?;
            Ok(())
        })
    })();
    lab.finish(result)
}

/// Runs the return-slot-tampering victim up to its `YIELD`, lets `away`
/// act while the core belongs to another context, then resumes it.
fn rsb_round(
    lab: &mut Lab<'_>,
    prog: &Program,
    regs: &[(u8, u64)],
    away: impl FnOnce(&mut Lab<'_>),
) -> Result<(), AttackError> {
    let r = lab.exec(prog, regs)?;
    if r.exit != Exit::Yielded {
        return Ok(());
    }
    let victim = lab
        .state
        .context_switch(ArchContext::default(), lab.profile);
    away(lab);
    lab.state
        .mem
        .cache
        .invalidate_line(line_of(victim.regs[15]));
    lab.state.context_switch(victim, lab.profile);
    lab.resume(prog)?;
    Ok(())
}

pub fn run_spectre_rsb(
    profile: &CpuProfile,
    scenario: Scenario,
    secret: &[u8],
) -> Result<AttackOutcome, AttackError> {
    match scenario.window_trigger {
        WindowTrigger::SpeculativeLoad => {
            return Ok(speculative_load_outcome(profile, Variant::Rsb))
        }
        WindowTrigger::PageFault => {
            return Err(AttackError::UndefinedScenario {
                variant: Variant::Rsb,
                scenario,
            })
        }
        WindowTrigger::CacheMiss => {}
    }
    check_secret(secret)?;
    let mut lab = Lab::new(Variant::Rsb, profile, scenario, secret);
    let prog = lab.program(RSB_SRC);
    lab.state.mem.poke_bytes(SECRET, secret);
    let result = (|| {
        for i in 0..secret.len() as u64 {
            lab.measure(|lab| {
                rsb_round(lab, &prog, &[(1, SECRET + i), (3, ORACLE)], |lab| {
                    lab.place(SECRET + i, scenario.secret_location)
                })
            })?;
        }
        Ok(())
    })();
    Ok(lab.finish(result))
}

/// Meltdown on a system register, driven through the SpectreRSB harness.
pub fn run_meltdown_v3a(profile: &CpuProfile) -> Result<AttackOutcome, AttackError> {
    let scenario = Scenario::new(WindowTrigger::CacheMiss, SecretLocation::L1);
    let mut lab = Lab::new(Variant::V3a, profile, scenario, &[SYSREG_TEST_VALUE]);
    let prog = lab.program(V3A_SRC);
    lab.state
        .sysregs
        .insert(V3A_SYSREG, u64::from(SYSREG_TEST_VALUE));
    let result = lab.measure(|lab| rsb_round(lab, &prog, &[(3, ORACLE)], |_| ()));
    Ok(lab.finish(result))
}

/// Meltdown on a kernel page. The secret is cached; an older evicted load
/// holds the faulting load back from retiring.
pub fn run_meltdown_v3(profile: &CpuProfile, secret: &[u8]) -> Result<AttackOutcome, AttackError> {
    check_secret(secret)?;
    let scenario = Scenario::new(WindowTrigger::CacheMiss, SecretLocation::L1);
    let mut lab = Lab::new(Variant::V3, profile, scenario, secret);
    let prog = lab.program(V3_SRC);
    lab.state.mem.poke_bytes(KERNEL_SECRET, secret);
    lab.state.mem.page_table.set_privileged(KERNEL_SECRET, true);
    let result = (|| {
        for i in 0..secret.len() as u64 {
            lab.measure(|lab| {
                lab.place(KERNEL_SECRET + i, SecretLocation::L1);
                lab.state.mem.cache.invalidate_line(line_of(DELAY));
                lab.exec(&prog, &[(1, KERNEL_SECRET + i), (3, ORACLE), (7, DELAY)])?;
                Ok(())
            })?;
        }
        Ok(())
    })();
    Ok(lab.finish(result))
}

/// Speculative store bypass: the store that redirects the pointer waits on
/// a slow address, the load behind it reads the stale pointer.
pub fn run_spectre_v4(profile: &CpuProfile, secret: &[u8]) -> Result<AttackOutcome, AttackError> {
    check_secret(secret)?;
    let scenario = Scenario::new(WindowTrigger::CacheMiss, SecretLocation::L1);
    let mut lab = Lab::new(Variant::V4, profile, scenario, secret);
    let prog = lab.program(V4_SRC);
    lab.state.mem.poke_bytes(SECRET, secret);
    lab.state.mem.poke(V4_SLOW, V4_PTR);
    lab.state.mem.poke(V4_PUBLIC, ORACLE_LINES as u64);
    let result = (|| {
        for i in 0..secret.len() as u64 {
            lab.measure(|lab| {
                lab.state.mem.poke(V4_PTR, SECRET + i);
                lab.state.mem.cache.invalidate_line(line_of(V4_SLOW));
                lab.place(V4_PTR, SecretLocation::L1);
                lab.place(SECRET + i, SecretLocation::L1);
                lab.exec(
                    &prog,
                    &[(3, ORACLE), (7, V4_SLOW), (8, V4_PUBLIC), (9, V4_PTR)],
                )?;
                Ok(())
            })?;
        }
        Ok(())
    })();
    Ok(lab.finish(result))
}

/// Runs `variant` under `scenario`. V3, V3a and V4 each have one fixed
/// setting (cache-miss window, cached secret); any other scenario is
/// undefined for them. V3a ignores `secret` and leaks a system register.
pub fn run_attack(
    profile: &CpuProfile,
    variant: Variant,
    scenario: Scenario,
    secret: &[u8],
) -> Result<AttackOutcome, AttackError> {
    let fixed = Scenario::new(WindowTrigger::CacheMiss, SecretLocation::L1);
    match variant {
        Variant::V1 => run_spectre_v1(profile, scenario, secret),
        Variant::Rsb => run_spectre_rsb(profile, scenario, secret),
        _ if scenario != fixed => Err(AttackError::UndefinedScenario { variant, scenario }),
        Variant::V3 => run_meltdown_v3(profile, secret),
        Variant::V3a => run_meltdown_v3a(profile),
        Variant::V4 => run_spectre_v4(profile, secret),
    }
}
