use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transient_sim::countermeasures::{apply, MitigationSet};
use transient_sim::covert::*;
use transient_sim::microarch::CpuProfile;

fn i7() -> CpuProfile {
    CpuProfile::intel_i7()
}

fn random_message(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}

#[test]
fn sender_fills_the_rsb_with_one_gadget() {
    for (bits, symbol) in [(1, 1), (3, 5), (1, 0)] {
        let mut ch = Channel::new(&i7(), ChannelConfig::with_bits(bits)).unwrap();
        ch.state.rsb.flush();
        ch.sender_inject(symbol).unwrap();
        let pad = ch.image().landing_pad(symbol);
        let live = ch.state.rsb.live();
        assert_eq!(live.len(), 16);
        assert!(live.iter().all(|&a| a == pad), "{live:?}");
    }
}

#[test]
fn symbol_out_of_range() {
    let mut ch = Channel::new(&i7(), ChannelConfig::with_bits(2)).unwrap();
    assert!(matches!(
        ch.sender_inject(4),
        Err(ChannelError::Symbol { symbol: 4, bits: 2 })
    ));
}

#[test]
fn receiver_reads_what_the_sender_sent() {
    let mut ch = Channel::new(&i7(), ChannelConfig::with_bits(3)).unwrap();
    for s in [0, 7, 3, 3, 5] {
        assert_eq!(ch.transfer(s).unwrap().symbol, Some(s));
    }
}

#[test]
fn hi_arrives_intact_at_one_bit() {
    let r = run_channel(b"HI", ChannelConfig::with_bits(1), &i7()).unwrap();
    assert_eq!((r.bits_sent, r.bit_errors), (16, 0));
    assert_eq!(r.received_hex, "4849");
    assert_eq!(r.symbols_sent, 16);
}

#[test]
fn noise_free_transfer_is_exact_at_every_width() {
    let msg = random_message(256, 1);
    for b in 1..=6 {
        for m in [&b"HI"[..], &msg[..]] {
            let r = run_channel(m, ChannelConfig::with_bits(b), &i7()).unwrap();
            assert_eq!(r.bit_errors, 0, "b={b}");
            assert_eq!(r.erasures, 0);
            assert_eq!(hex(m), r.received_hex);
        }
    }
}

fn hex(m: &[u8]) -> String {
    m.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn cortex_a72_carries_the_channel_too() {
    let r = run_channel(
        b"HI",
        ChannelConfig::with_bits(3),
        &CpuProfile::cortex_a72(),
    )
    .unwrap();
    assert_eq!(r.bit_errors, 0);
}

#[test]
fn in_order_cores_carry_nothing() {
    for p in [CpuProfile::cortex_a53(), CpuProfile::cortex_a8()] {
        let r = run_channel(b"HI", ChannelConfig::with_bits(1), &p).unwrap();
        assert_eq!(r.erasures, r.symbols_sent);
    }
}

#[test]
fn memory_law() {
    let reports = sweep_bits(b"HI", &i7(), 1..=6, 0.0).unwrap();
    let mem: Vec<u64> = reports.iter().map(|r| r.required_memory_bytes).collect();
    assert_eq!(mem, [128, 256, 512, 1024, 2048, 4096]);
    assert!(reports.iter().all(|r| r.bit_errors == 0));
    let csv = sweep_csv(&reports);
    assert!(csv.starts_with("b,bandwidth,errors,memory\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn bandwidth_peaks_at_three_bits() {
    let msg = random_message(96, 2);
    let bw: Vec<f64> = sweep_bits(&msg, &i7(), 1..=6, 0.0)
        .unwrap()
        .iter()
        .map(|r| r.bandwidth_bits_per_kcycle)
        .collect();
    assert!(bw[0] < bw[1] && bw[1] < bw[2], "{bw:?}");
    assert!(bw[2] > bw[3] && bw[3] > bw[4] && bw[4] > bw[5], "{bw:?}");
}

/// Closed form b / (2C + r 2^b + k) with the default constants: the peak
/// is at 3 for any per-symbol overhead k in (-1000, 2000).
#[test]
fn closed_form_argmax() {
    let (c, r) = (1000.0, 250.0);
    for k in [0.0, 300.0, 1000.0, 1900.0] {
        let f = |b: i32| b as f64 / (2.0 * c + r * 2f64.powi(b) + k);
        let best = (1..=6).max_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap();
        assert_eq!(best, 3, "k={k}");
    }
}

#[test]
fn measured_overhead_is_inside_the_peak_condition() {
    let r = run_channel(&random_message(64, 3), ChannelConfig::with_bits(3), &i7()).unwrap();
    let k = r.total_cycles as f64 / r.symbols_sent as f64 - 2000.0 - 8.0 * 250.0;
    assert!(k > 0.0 && k < 2000.0, "k={k}");
}

#[test]
fn rsb_flush_without_btb_fallback_erases_everything() {
    let m = MitigationSet {
        rsb_flush_on_cs: true,
        btb_fallback_disabled: true,
        ..Default::default()
    };
    for p in CpuProfile::all() {
        let h = apply(&p, m).unwrap();
        let r = run_channel(&random_message(128, 4), ChannelConfig::with_bits(1), &h).unwrap();
        assert_eq!(r.erasures, r.symbols_sent, "{}", p.name);
    }
}

#[test]
fn refill_erases_everything_too() {
    let m = MitigationSet {
        rsb_refill_on_cs: true,
        ..Default::default()
    };
    let h = apply(&i7(), m).unwrap();
    let r = run_channel(b"HI", ChannelConfig::with_bits(2), &h).unwrap();
    assert_eq!(r.erasures, r.symbols_sent);
}

#[test]
fn privileged_flush_closes_the_channel() {
    let m = MitigationSet {
        privileged_flush: true,
        ..Default::default()
    };
    let h = apply(&i7(), m).unwrap();
    let mut ch = Channel::new(&h, ChannelConfig::with_bits(1)).unwrap();
    ch.receiver_arm().unwrap();
    ch.sender_inject(1).unwrap();
    assert!(matches!(ch.receiver_decode(), Err(ChannelError::Flush(_))));

    let r = run_channel(b"HI", ChannelConfig::with_bits(1), &h).unwrap();
    assert_eq!(r.bits_sent, 0);
    assert_eq!(r.bandwidth_bits_per_kcycle, 0.0);
    assert!(r.aborted.is_some());
}

#[test]
fn shifted_receiver_pads_break_the_channel() {
    let msg = random_message(32, 5);
    for shift in 1..GADGET_STRIDE {
        let ch = Channel::with_image(&i7(), ChannelConfig::with_bits(2), shift).unwrap();
        let r = run_channel_on(ch, &msg).unwrap();
        assert_eq!(r.erasures, r.symbols_sent, "shift {shift}");
    }
    // A whole slot lands every symbol on its neighbour's pad.
    let ch = Channel::with_image(&i7(), ChannelConfig::with_bits(2), GADGET_STRIDE).unwrap();
    let r = run_channel_on(ch, &msg).unwrap();
    let correct: u64 = (0..4).map(|s| r.confusion[s][s]).sum();
    assert_eq!(correct, 0);
}

#[test]
fn noise_turns_into_erasures_at_rate_p() {
    let cfg = ChannelConfig {
        bits_per_cs: 2,
        noise_probability: 0.2,
        ..ChannelConfig::default()
    };
    let r = run_channel(&random_message(500, 6), cfg, &i7()).unwrap();
    assert_eq!(r.symbol_errors, r.erasures);
    let rate = r.symbol_error_rate();
    // 1000 symbols, sd ~ 0.0126.
    assert!((rate - 0.2).abs() < 0.05, "{rate}");
    assert_eq!(r.bit_errors, 2 * r.erasures);
}

#[test]
fn latency_trace_has_one_row_per_symbol() {
    let cfg = ChannelConfig {
        bits_per_cs: 1,
        record_latencies: true,
        ..ChannelConfig::default()
    };
    let r = run_channel(b"HI", cfg, &i7()).unwrap();
    let t = r.latency_trace.as_ref().unwrap();
    assert_eq!(t.len(), 16);
    // 0x48 = 0100_1000: symbol 0 -> line 0 hot.
    assert!(t[0][0] < 100 && t[0][1] >= 100);
    assert!(t[1][1] < 100 && t[1][0] >= 100);
    let csv = r.latency_csv();
    assert_eq!(csv.lines().count(), 1 + 32);
}

#[test]
fn report_json_has_the_documented_keys() {
    let r = run_channel(b"HI", ChannelConfig::with_bits(3), &i7()).unwrap();
    let j = r.to_json();
    for k in [
        "bits_per_cs",
        "bits_sent",
        "bit_errors",
        "total_cycles",
        "bandwidth_bits_per_kcycle",
        "required_memory_bytes",
        "confusion",
    ] {
        assert!(j.get(k).is_some(), "{k}");
    }
    assert_eq!(j["required_memory_bytes"], 512);
}

#[test]
fn symbol_packing_round_trips() {
    let m = random_message(33, 7);
    for b in 1..=6 {
        let s = to_symbols(&m, b);
        assert_eq!(s.len(), (m.len() * 8).div_ceil(b as usize));
        assert!(s.iter().all(|&x| x < 1 << b));
        let d: Vec<Option<usize>> = s.into_iter().map(Some).collect();
        assert_eq!(from_symbols(&d, b, m.len()), m);
    }
    assert_eq!(to_symbols(b"H", 3), vec![0b010, 0b010, 0b000]);
}

#[test]
fn bad_configs() {
    for b in [0, 7] {
        assert_eq!(
            Channel::new(&i7(), ChannelConfig::with_bits(b)).unwrap_err(),
            ChannelError::Bits(b)
        );
    }
    let cfg = ChannelConfig {
        noise_probability: 1.5,
        ..ChannelConfig::default()
    };
    assert!(matches!(
        run_channel(b"x", cfg, &i7()),
        Err(ChannelError::Noise(_))
    ));
}
