use transient_sim::attacks::*;
use transient_sim::microarch::CpuProfile;

const SECRET: &[u8] = b"The Magic Words are Squeamish Ossifrage";

fn scenario(w: WindowTrigger, l: SecretLocation) -> Scenario {
    Scenario::new(w, l)
}

fn v1_row(p: &CpuProfile) -> [bool; 5] {
    use SecretLocation::*;
    use WindowTrigger::*;
    [
        speculative_load_test(p),
        run_spectre_v1(p, scenario(CacheMiss, L1), SECRET)
            .unwrap()
            .success,
        run_spectre_v1(p, scenario(PageFault, L1), SECRET)
            .unwrap()
            .success,
        run_spectre_v1(p, scenario(CacheMiss, MainMemory), SECRET)
            .unwrap()
            .success,
        run_spectre_v1(p, scenario(PageFault, MainMemory), SECRET)
            .unwrap()
            .success,
    ]
}

#[test]
fn spectre_v1_grid() {
    let t = true;
    let f = false;
    assert_eq!(v1_row(&CpuProfile::cortex_a53()), [f, f, f, f, f]);
    assert_eq!(v1_row(&CpuProfile::cortex_a8()), [f, f, f, f, f]);
    assert_eq!(v1_row(&CpuProfile::cortex_a9()), [t, f, t, f, t]);
    assert_eq!(v1_row(&CpuProfile::cortex_a72()), [t, t, t, t, t]);
    assert_eq!(v1_row(&CpuProfile::intel_i7()), [t, t, t, t, t]);
}

#[test]
fn spectre_rsb_grid() {
    use SecretLocation::*;
    let cell = |p: &CpuProfile, l| {
        run_spectre_rsb(p, scenario(WindowTrigger::CacheMiss, l), SECRET)
            .unwrap()
            .success
    };
    let expect = [
        ("cortex_a53", false, false),
        ("cortex_a8", false, false),
        ("cortex_a9", false, false),
        ("cortex_a72", true, false),
        ("intel_i7", true, true),
    ];
    for (name, l1, dram) in expect {
        let p = CpuProfile::builtin(name).unwrap();
        assert_eq!((cell(&p, L1), cell(&p, MainMemory)), (l1, dram), "{name}");
    }
}

#[test]
fn rsb_page_fault_is_undefined() {
    let p = CpuProfile::intel_i7();
    let s = scenario(WindowTrigger::PageFault, SecretLocation::L1);
    assert!(matches!(
        run_spectre_rsb(&p, s, SECRET),
        Err(AttackError::UndefinedScenario {
            variant: Variant::Rsb,
            ..
        })
    ));
}

#[test]
fn meltdown_and_store_bypass_grid() {
    let expect = [
        ("cortex_a53", false, false, false),
        ("cortex_a8", false, false, false),
        ("cortex_a9", false, false, false),
        ("cortex_a72", false, true, true),
        ("intel_i7", true, true, true),
    ];
    for (name, v3, v3a, v4) in expect {
        let p = CpuProfile::builtin(name).unwrap();
        let got = (
            run_meltdown_v3(&p, SECRET).unwrap().success,
            run_meltdown_v3a(&p).unwrap().success,
            run_spectre_v4(&p, SECRET).unwrap().success,
        );
        assert_eq!(got, (v3, v3a, v4), "{name}");
    }
}

#[test]
fn successful_outcomes_recover_the_exact_secret() {
    let p = CpuProfile::intel_i7();
    let secret: Vec<u8> = (1..=64).map(|i| (i * 37 % 255 + 1) as u8).collect();
    let o = run_spectre_v1(
        &p,
        scenario(WindowTrigger::CacheMiss, SecretLocation::MainMemory),
        &secret,
    )
    .unwrap();
    assert!(o.success);
    let got: Vec<u8> = o.recovered.iter().map(|b| b.unwrap()).collect();
    assert_eq!(got, secret);
    assert_eq!(o.probe_latencies.len(), 64);
    assert!(o.probe_latencies.iter().all(|row| row.len() == 256));
}

#[test]
fn in_bounds_calls_leak_nothing() {
    for p in CpuProfile::all() {
        let o = run_spectre_v1_with(
            &p,
            scenario(WindowTrigger::CacheMiss, SecretLocation::L1),
            SECRET,
            V1Options {
                in_bounds_only: true,
            },
        )
        .unwrap();
        assert!(!o.success, "{}", p.name);
        for (i, (row, rec)) in o.probe_latencies.iter().zip(&o.recovered).enumerate() {
            let hits: Vec<usize> = (0..256).filter(|&k| row[k] < 102).collect();
            // The only cached line is the one the legitimate access used.
            assert_eq!(hits, vec![i % 16], "{}", p.name);
            assert_eq!(*rec, Some((i % 16) as u8));
        }
    }
}

#[test]
fn longer_windows_never_hurt() {
    for p in CpuProfile::all() {
        for loc in [SecretLocation::L1, SecretLocation::MainMemory] {
            let miss = run_spectre_v1(&p, scenario(WindowTrigger::CacheMiss, loc), SECRET).unwrap();
            let fault =
                run_spectre_v1(&p, scenario(WindowTrigger::PageFault, loc), SECRET).unwrap();
            assert!(!miss.success || fault.success, "{}", p.name);
        }
    }
}

#[test]
fn outcome_json_shape() {
    let p = CpuProfile::cortex_a72();
    let o = run_spectre_v1(
        &p,
        scenario(WindowTrigger::CacheMiss, SecretLocation::L1),
        b"HI",
    )
    .unwrap();
    let j = o.to_json();
    let keys: Vec<&str> = j.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    assert_eq!(
        keys,
        [
            "probe_latencies",
            "profile",
            "recovered_hex",
            "scenario",
            "success",
            "variant"
        ]
    );
    assert_eq!(j["recovered_hex"], "4849");
    assert_eq!(j["variant"], "v1");
    assert_eq!(j["scenario"], "cachemiss-l1");
}

#[test]
fn failed_bytes_print_as_question_marks() {
    let p = CpuProfile::cortex_a53();
    let o = run_spectre_v1(
        &p,
        scenario(WindowTrigger::CacheMiss, SecretLocation::L1),
        b"HI",
    )
    .unwrap();
    assert_eq!(o.recovered_hex(), "????");
}

#[test]
fn privileged_flush_turns_every_cell_red() {
    let mut p = CpuProfile::intel_i7();
    p.mitigations.privileged_flush = true;
    let s = scenario(WindowTrigger::PageFault, SecretLocation::L1);
    let o = run_spectre_v1(&p, s, SECRET).unwrap();
    assert!(!o.success);
    assert!(o.error.unwrap().contains("privileged"));
    assert!(!run_meltdown_v3(&p, SECRET).unwrap().success);
    assert!(!speculative_load_test(&p));
}

#[test]
fn bad_secret_lengths_are_rejected() {
    let p = CpuProfile::intel_i7();
    let s = scenario(WindowTrigger::CacheMiss, SecretLocation::L1);
    assert_eq!(
        run_spectre_v1(&p, s, &[]).unwrap_err(),
        AttackError::SecretLength(0)
    );
    assert_eq!(
        run_spectre_v4(&p, &[1; 65]).unwrap_err(),
        AttackError::SecretLength(65)
    );
}
