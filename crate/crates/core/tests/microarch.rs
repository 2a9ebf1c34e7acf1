mod common;

use common::{random_program, run_model as model, run_reference as reference, Outcome, UNMAPPED};
use proptest::prelude::*;
use transient_sim::countermeasures::{apply, MitigationSet};
use transient_sim::isa::assemble;
use transient_sim::microarch::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_profile_matches_the_reference_interpreter(seed in any::<u64>(), warm in any::<u64>()) {
        let g = random_program(seed, true);
        let want = reference(&g);
        prop_assert!(want.outcome == Outcome::Halted, "{:?}", want.outcome);
        for p in CpuProfile::all() {
            let got = model(&g, &p, warm);
            prop_assert_eq!(&got, &want, "{}", p.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Mitigations change timing and predictor state, never results.
    #[test]
    fn mitigations_preserve_architectural_state(seed in any::<u64>()) {
        let g = random_program(seed, false);
        let want = reference(&g);
        let m = MitigationSet {
            pmu_noise_amplitude: 50,
            btb_fallback_disabled: true,
            rsb_refill_on_cs: true,
            ..MitigationSet::default()
        };
        for p in [CpuProfile::cortex_a72(), CpuProfile::intel_i7()] {
            let h = apply(&p, m).unwrap();
            prop_assert_eq!(&model(&g, &h, seed), &want);
        }
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>()) {
        let g = random_program(seed, true);
        let p = CpuProfile::intel_i7();
        let trace = |g: &common::Generated| {
            let mut st = MachineState::new(&p, 3);
            st.arch.regs = g.regs;
            st.arch.recovery_pc = Some(g.recovery_pc);
            st.mem.page_table.unmap(UNMAPPED);
            run(&g.program, &mut st, &p, RunLimits::recording()).unwrap()
        };
        prop_assert_eq!(trace(&g), trace(&g));
    }

    #[test]
    fn squashed_instructions_never_retire(seed in any::<u64>()) {
        let g = random_program(seed, true);
        for p in [CpuProfile::cortex_a9(), CpuProfile::intel_i7()] {
            let mut st = MachineState::new(&p, 3);
            st.arch.regs = g.regs;
            st.arch.recovery_pc = Some(g.recovery_pc);
            st.mem.page_table.unmap(UNMAPPED);
            let r = run(&g.program, &mut st, &p, RunLimits::recording()).unwrap();
            let retired: std::collections::BTreeSet<u64> =
                r.trace.of_kind(EventKind::Retire).map(|e| e.seq).collect();
            for s in r.trace.of_kind(EventKind::Squash) {
                prop_assert!(!retired.contains(&s.seq));
            }
            let order: Vec<u64> = r.trace.of_kind(EventKind::Retire).map(|e| e.seq).collect();
            prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn in_order_cores_leave_no_transient_lines(seed in any::<u64>()) {
        let g = random_program(seed, false);
        for p in [CpuProfile::cortex_a53(), CpuProfile::cortex_a8()] {
            let mut st = MachineState::new(&p, 3);
            st.arch.regs = g.regs;
            st.arch.recovery_pc = Some(g.recovery_pc);
            st.mem.page_table.unmap(UNMAPPED);
            let r = run(&g.program, &mut st, &p, RunLimits::recording()).unwrap();
            prop_assert!(r.trace.transient_set.is_empty());
            prop_assert_eq!(r.trace.of_kind(EventKind::Squash).count(), 0);
        }
    }
}

/// Nested calls and returns with an untouched stack: every return is
/// predicted by the RSB, whatever the nesting depth up to its size.
#[test]
fn rsb_agrees_with_the_stack() {
    for depth in 1..=16 {
        let mut src = String::from("entry: CALL f0\nHALT\n");
        for d in 0..depth {
            if d + 1 < depth {
                src.push_str(&format!("f{d}: CALL f{}\nRET\n", d + 1));
            } else {
                src.push_str(&format!("f{d}: NOP\nRET\n"));
            }
        }
        let prog = assemble(&src).unwrap();
        for p in [CpuProfile::cortex_a72(), CpuProfile::intel_i7()] {
            let mut st = MachineState::new(&p, 1);
            let r = run(&prog, &mut st, &p, RunLimits::recording()).unwrap();
            assert_eq!(
                r.trace.of_kind(EventKind::Squash).count(),
                0,
                "depth {depth}"
            );
            assert!(r
                .trace
                .of_kind(EventKind::Predict)
                .all(|e| !e.detail.contains("none")));
        }
    }
}

#[test]
fn straight_line_code_retires_in_order_without_squashes() {
    let prog = assemble("MOVI r1, 5\nADD r2, r1, 3\nSHL r3, r2, 2\nAND r4, r3, 12\nHALT").unwrap();
    for p in CpuProfile::all() {
        let mut st = MachineState::new(&p, 1);
        let r = run(&prog, &mut st, &p, RunLimits::recording()).unwrap();
        let pcs: Vec<usize> = r.trace.of_kind(EventKind::Retire).map(|e| e.pc).collect();
        assert_eq!(pcs, [0, 1, 2, 3, 4]);
        assert_eq!(r.trace.of_kind(EventKind::Squash).count(), 0);
        assert_eq!(st.arch.regs[4], 0);
        assert_eq!(st.arch.regs[3], 32);
    }
}

/// The generator is only useful if the equivalence check meets speculation.
#[test]
fn random_programs_exercise_speculation() {
    let p = CpuProfile::intel_i7();
    let (mut mispredicts, mut faults, mut transient, mut calls, mut aliases) = (0, 0, 0, 0, 0);
    for seed in 0..300 {
        let g = random_program(seed, true);
        calls += g
            .program
            .instructions
            .iter()
            .filter(|i| matches!(i, transient_sim::isa::Instruction::Call { .. }))
            .count();
        let mut st = MachineState::new(&p, 1);
        st.arch.regs = g.regs;
        st.arch.recovery_pc = Some(g.recovery_pc);
        st.mem.page_table.unmap(UNMAPPED);
        let r = run(&g.program, &mut st, &p, RunLimits::recording()).unwrap();
        aliases += r
            .trace
            .of_kind(EventKind::Squash)
            .filter(|e| e.detail.contains("store alias"))
            .count();
        mispredicts += r.trace.mispredicts;
        faults += r.trace.faults;
        transient += r.trace.transient_set.len();
    }
    println!("mispredicts {mispredicts} faults {faults} transient {transient} calls {calls} aliases {aliases}");
    assert!(mispredicts > 300 && faults > 20 && transient > 50 && calls > 100 && aliases > 20);
}
