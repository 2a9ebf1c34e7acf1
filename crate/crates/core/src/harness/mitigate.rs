//! Paired runs of every experiment with and without a mitigation set.

use serde::Serialize;

use super::matrix::MATRIX_SECRET;
use crate::attacks::{
    run_attack, speculative_load_test, Scenario, SecretLocation, Variant, WindowTrigger,
};
use crate::countermeasures::{
    apply, demo_refill_bypass, pmu_noise_effect_seeded, MitigationError, MitigationSet,
};
use crate::covert::{run_channel, ChannelConfig};
use crate::microarch::CpuProfile;

const CHANNEL_MESSAGE: &[u8] = b"HI";
const CLASSIFIER_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationRow {
    pub experiment: String,
    /// Whether the attack works on the unmitigated profile.
    pub baseline: bool,
    pub mitigated: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationReport {
    pub profile: String,
    pub mitigations: MitigationSet,
    pub rows: Vec<MitigationRow>,
}

impl MitigationReport {
    /// Every attack that worked before is stopped.
    pub fn blocks_everything(&self) -> bool {
        self.rows.iter().all(|r| !r.mitigated)
    }
}

fn attack_row(
    name: &str,
    base: &CpuProfile,
    hard: &CpuProfile,
    variant: Variant,
    scenario: Scenario,
) -> MitigationRow {
    let run = |p: &CpuProfile| match run_attack(p, variant, scenario, MATRIX_SECRET) {
        Ok(o) => (
            o.success,
            o.error.clone().unwrap_or_else(|| o.recovered_hex()),
        ),
        Err(e) => (false, e.to_string()),
    };
    let (baseline, _) = run(base);
    let (mitigated, detail) = run(hard);
    MitigationRow {
        experiment: name.to_string(),
        baseline,
        mitigated,
        detail,
    }
}

/// Runs the attack suite, the covert channel, and the demonstrations that
/// belong to the flags in `set`, on `base` and on `base` hardened with `set`.
pub fn mitigation_suite(
    base: &CpuProfile,
    set: MitigationSet,
    seed: u64,
) -> Result<MitigationReport, MitigationError> {
    use SecretLocation::*;
    use WindowTrigger::*;
    let hard = apply(base, set)?;
    let mut rows = vec![MitigationRow {
        experiment: "speculative-load".into(),
        baseline: speculative_load_test(base),
        mitigated: speculative_load_test(&hard),
        detail: String::new(),
    }];
    let cases = [
        (
            "spectre-v1 cachemiss-l1",
            Variant::V1,
            Scenario::new(CacheMiss, L1),
        ),
        (
            "spectre-v1 pagefault-dram",
            Variant::V1,
            Scenario::new(PageFault, MainMemory),
        ),
        (
            "spectre-rsb cachemiss-l1",
            Variant::Rsb,
            Scenario::new(CacheMiss, L1),
        ),
        (
            "spectre-rsb cachemiss-dram",
            Variant::Rsb,
            Scenario::new(CacheMiss, MainMemory),
        ),
        ("meltdown-v3", Variant::V3, Scenario::new(CacheMiss, L1)),
        ("meltdown-v3a", Variant::V3a, Scenario::new(CacheMiss, L1)),
        ("spectre-v4", Variant::V4, Scenario::new(CacheMiss, L1)),
    ];
    for (name, v, s) in cases {
        rows.push(attack_row(name, base, &hard, v, s));
    }

    let channel = |p: &CpuProfile| {
        let cfg = ChannelConfig {
            bits_per_cs: 3,
            seed,
            ..ChannelConfig::default()
        };
        match run_channel(CHANNEL_MESSAGE, cfg, p) {
            Ok(r) => (
                r.bits_sent > 0 && r.bit_errors == 0,
                match r.aborted {
                    Some(a) => a,
                    None => format!(
                        "{} bit errors, {:.4} bits/kcycle",
                        r.bit_errors, r.bandwidth_bits_per_kcycle
                    ),
                },
            ),
            Err(e) => (false, e.to_string()),
        }
    };
    let (baseline, _) = channel(base);
    let (mitigated, detail) = channel(&hard);
    rows.push(MitigationRow {
        experiment: "covert-channel".into(),
        baseline,
        mitigated,
        detail,
    });

    if hard.mitigations.rsb_refill_on_cs {
        let o = demo_refill_bypass(&hard);
        rows.push(MitigationRow {
            experiment: "refill-bypass".into(),
            baseline: demo_refill_bypass(base).success,
            mitigated: o.success,
            detail: o.recovered_hex(),
        });
    }

    let amplitude = hard.mitigations.pmu_noise_amplitude;
    if amplitude > 0 {
        let before = pmu_noise_effect_seeded(base, 0, CLASSIFIER_TRIALS, seed)?;
        let after = pmu_noise_effect_seeded(base, amplitude, CLASSIFIER_TRIALS, seed)?;
        rows.push(MitigationRow {
            experiment: "flush-reload-classifier".into(),
            baseline: before == 1.0,
            mitigated: after == 1.0,
            detail: format!("accuracy {after:.3} at amplitude {amplitude}"),
        });
    }

    Ok(MitigationReport {
        profile: base.name.clone(),
        mitigations: set,
        rows,
    })
}
