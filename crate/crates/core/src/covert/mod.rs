//! Covert channel through the per-core return stack buffer.
//!
//! The sender fills the RSB with the return address of gadget `k` by
//! calling the gadget recursively, then yields. The receiver's next `RET`
//! (whose real return slot is slow) speculatively runs the landing pad at
//! that address in its own address space, which touches oracle line `k`.
//! Flush+Reload over `2^b` lines then reads the symbol.

mod image;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{default_threshold, flush_lines, reload};
use crate::countermeasures::with_benign_gadget;
use crate::isa::{Program, SP};
use crate::memory::{Privilege, PrivilegedFlushError};
use crate::microarch::{run, ArchContext, CpuProfile, MachineState, RunError, RunLimits};

pub use image::{ChannelImage, GADGET_BASE, GADGET_STRIDE};

/// Base of the receiver's oracle.
pub const CHANNEL_ORACLE: u64 = 0x10_0000;
const SENDER_STACK: u64 = 0xa_0000;
const RECEIVER_STACK: u64 = 0xb_0000;
const INTERLOPER_STACK: u64 = 0xc_0000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub bits_per_cs: u32,
    pub context_switch_cost: u64,
    /// Flush plus reload of one oracle line.
    pub probe_cost_per_line: u64,
    /// Chance that an unrelated context runs between sender and receiver.
    pub noise_probability: f64,
    /// Recursive calls per injection; `None` means the RSB size.
    pub rsb_fill_depth: Option<usize>,
    pub seed: u64,
    /// Keep every probe's latencies in the report.
    pub record_latencies: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bits_per_cs: 1,
            context_switch_cost: 1000,
            probe_cost_per_line: 250,
            noise_probability: 0.0,
            rsb_fill_depth: None,
            seed: 0x5eed,
            record_latencies: false,
        }
    }
}

impl ChannelConfig {
    pub fn with_bits(bits_per_cs: u32) -> ChannelConfig {
        ChannelConfig {
            bits_per_cs,
            ..ChannelConfig::default()
        }
    }

    pub fn symbols(&self) -> usize {
        1 << self.bits_per_cs
    }

    /// One oracle line per symbol.
    pub fn required_memory_bytes(&self) -> u64 {
        self.symbols() as u64 * 64
    }

    pub fn check(&self) -> Result<(), ChannelError> {
        if !(1..=6).contains(&self.bits_per_cs) {
            return Err(ChannelError::Bits(self.bits_per_cs));
        }
        if !(0.0..=1.0).contains(&self.noise_probability) {
            return Err(ChannelError::Noise(self.noise_probability));
        }
        if self.rsb_fill_depth == Some(0) {
            return Err(ChannelError::FillDepth);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("bits_per_cs must be in 1..=6, got {0}")]
    Bits(u32),
    #[error("noise_probability must be in [0, 1], got {0}")]
    Noise(f64),
    #[error("rsb_fill_depth must be positive")]
    FillDepth,
    #[error("symbol {symbol} does not fit in {bits} bits")]
    Symbol { symbol: usize, bits: u32 },
    #[error(transparent)]
    Flush(#[from] PrivilegedFlushError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
}

/// What the receiver read in one slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    /// `None` is an erasure: no oracle line or several were hot.
    pub symbol: Option<usize>,
    pub latencies: Vec<i64>,
}

#[derive(Debug, Clone, Copy)]
enum Ctx {
    Sender,
    Receiver,
    Interloper,
}

/// Sender, receiver and interloper contexts time-sharing one core.
#[derive(Debug, Clone)]
pub struct Channel {
    pub profile: CpuProfile,
    pub config: ChannelConfig,
    pub state: MachineState,
    image: ChannelImage,
    interloper: Program,
    receiver: Option<ArchContext>,
    rng: ChaCha8Rng,
    threshold: i64,
    /// Simulated cycles spent running the three programs.
    pub run_cycles: u64,
}

impl Channel {
    pub fn new(profile: &CpuProfile, config: ChannelConfig) -> Result<Channel, ChannelError> {
        Channel::with_image(profile, config, 0)
    }

    /// Like [`Channel::new`], with the receiver's landing pads moved by
    /// `receiver_shift` instructions.
    pub fn with_image(
        profile: &CpuProfile,
        config: ChannelConfig,
        receiver_shift: usize,
    ) -> Result<Channel, ChannelError> {
        config.check()?;
        let mut image = ChannelImage::build(config.bits_per_cs, receiver_shift);
        let mut interloper = image::interloper();
        if profile.mitigations.rsb_refill_on_cs {
            image.sender = with_benign_gadget(&image.sender);
            image.receiver = with_benign_gadget(&image.receiver);
            interloper = with_benign_gadget(&interloper);
        }
        let state = MachineState::new(profile, config.seed);
        let threshold = default_threshold(&state);
        Ok(Channel {
            profile: profile.clone(),
            config,
            state,
            image,
            interloper,
            receiver: None,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            threshold,
            run_cycles: 0,
        })
    }

    pub fn image(&self) -> &ChannelImage {
        &self.image
    }

    fn depth(&self) -> usize {
        self.config.rsb_fill_depth.unwrap_or(self.profile.rsb_size)
    }

    fn exec(&mut self, which: Ctx) -> Result<(), ChannelError> {
        let program = match which {
            Ctx::Sender => &self.image.sender,
            Ctx::Receiver => &self.image.receiver,
            Ctx::Interloper => &self.interloper,
        };
        let r = run(
            program,
            &mut self.state,
            &self.profile,
            RunLimits::default(),
        )?;
        self.run_cycles += r.cycles();
        Ok(())
    }

    /// Hands the core to `next`, running the scheduler's mitigations.
    fn switch_to(&mut self, next: ArchContext) -> ArchContext {
        self.state.context_switch(next, &self.profile)
    }

    /// Receiver runs up to its `YIELD`: one call deep, about to return.
    pub fn receiver_arm(&mut self) -> Result<(), ChannelError> {
        let mut ctx = ArchContext::new(self.image.receiver_entry, RECEIVER_STACK);
        ctx.regs[3] = CHANNEL_ORACLE;
        self.state.arch = ctx;
        self.exec(Ctx::Receiver)?;
        let parked = self.switch_to(ArchContext::default());
        self.receiver = Some(parked);
        Ok(())
    }

    /// Sender fills the RSB with gadget `symbol`'s return address and yields.
    pub fn sender_inject(&mut self, symbol: usize) -> Result<(), ChannelError> {
        if symbol >= self.config.symbols() {
            return Err(ChannelError::Symbol {
                symbol,
                bits: self.config.bits_per_cs,
            });
        }
        let mut ctx = ArchContext::new(self.image.gadget_entry(symbol), SENDER_STACK);
        ctx.regs[1] = self.depth() as u64;
        ctx.regs[3] = CHANNEL_ORACLE;
        self.state.arch = ctx;
        self.exec(Ctx::Sender)?;
        Ok(())
    }

    /// An unrelated context: one call (an RSB entry pointing nowhere
    /// useful) and one random oracle line touched.
    pub fn interloper_run(&mut self) -> Result<(), ChannelError> {
        let line = self.rng.gen_range(0..self.config.symbols() as u64);
        let mut ctx = ArchContext::new(self.interloper.entry, INTERLOPER_STACK);
        ctx.regs[3] = CHANNEL_ORACLE + line * 64;
        self.switch_to(ctx);
        self.exec(Ctx::Interloper)?;
        Ok(())
    }

    /// Switches back to the armed receiver, lets its `RET` run, and reads
    /// the oracle with Flush+Reload.
    pub fn receiver_decode(&mut self) -> Result<Decoded, ChannelError> {
        let ctx = self
            .receiver
            .take()
            .expect("receiver_arm before receiver_decode");
        let slot = ctx.regs[SP.index()];
        self.switch_to(ctx);
        let n = self.config.symbols();
        flush_lines(&mut self.state, CHANNEL_ORACLE, n)?;
        self.state
            .mem
            .flush_line(slot, Privilege::User, self.state.flush_is_privileged)?;
        self.exec(Ctx::Receiver)?;
        let probe = reload(&mut self.state, CHANNEL_ORACLE, n, self.threshold);
        Ok(Decoded {
            symbol: probe.unique_hit(),
            latencies: probe.latencies,
        })
    }

    /// One context-switch pair carrying one symbol.
    pub fn transfer(&mut self, symbol: usize) -> Result<Decoded, ChannelError> {
        self.receiver_arm()?;
        let sender = ArchContext::new(0, SENDER_STACK);
        self.switch_to(sender);
        self.sender_inject(symbol)?;
        if self.config.noise_probability > 0.0 && self.rng.gen_bool(self.config.noise_probability) {
            self.interloper_run()?;
        }
        self.receiver_decode()
    }

    /// Cost the scheduler charges per symbol besides running the programs.
    pub fn fixed_cost_per_symbol(&self) -> u64 {
        2 * self.config.context_switch_cost
            + self.config.symbols() as u64 * self.config.probe_cost_per_line
    }
}

/// Splits `message` into `bits`-wide symbols, most significant bit first;
/// the last symbol is zero-padded.
pub fn to_symbols(message: &[u8], bits: u32) -> Vec<usize> {
    let total = message.len() * 8;
    let bit = |i: usize| -> usize {
        if i < total {
            usize::from(message[i / 8] >> (7 - i % 8) & 1)
        } else {
            0
        }
    };
    (0..total.div_ceil(bits as usize))
        .map(|s| (0..bits as usize).fold(0, |acc, j| acc << 1 | bit(s * bits as usize + j)))
        .collect()
}

/// Inverse of [`to_symbols`]; erased symbols decode as zero bits.
pub fn from_symbols(symbols: &[Option<usize>], bits: u32, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for (s, sym) in symbols.iter().enumerate() {
        let v = sym.unwrap_or(0);
        for j in 0..bits as usize {
            let i = s * bits as usize + j;
            if i < len * 8 && v >> (bits as usize - 1 - j) & 1 == 1 {
                out[i / 8] |= 1 << (7 - i % 8);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub profile: String,
    pub bits_per_cs: u32,
    /// Payload bits; padding in the last symbol is not counted.
    pub bits_sent: u64,
    /// Erased bits count as errors.
    pub bit_errors: u64,
    pub symbols_sent: u64,
    pub symbol_errors: u64,
    pub erasures: u64,
    pub total_cycles: u64,
    pub bandwidth_bits_per_kcycle: f64,
    /// Kilobytes per million cycles.
    pub bandwidth_kb_per_mcycle: f64,
    pub required_memory_bytes: u64,
    /// `confusion[sent][decoded]`; the last column counts erasures.
    pub confusion: Vec<Vec<u64>>,
    pub received_hex: String,
    /// Why the transfer stopped early.
    pub aborted: Option<String>,
    /// Per-symbol reload latencies when recording was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_trace: Option<Vec<Vec<i64>>>,
}

impl ChannelReport {
    pub fn bandwidth_bits_per_cycle(&self) -> f64 {
        self.bandwidth_bits_per_kcycle / 1000.0
    }

    pub fn symbol_error_rate(&self) -> f64 {
        if self.symbols_sent == 0 {
            0.0
        } else {
            self.symbol_errors as f64 / self.symbols_sent as f64
        }
    }

    /// The report JSON: `{bits_per_cs, bits_sent, bit_errors, total_cycles,
    /// bandwidth_bits_per_kcycle, required_memory_bytes, confusion}` plus
    /// the extra fields of this struct.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Latency grid as CSV: one row per (symbol, line).
    pub fn latency_csv(&self) -> String {
        let mut s = String::from("symbol,line,latency\n");
        for (i, row) in self.latency_trace.iter().flatten().enumerate() {
            for (line, l) in row.iter().enumerate() {
                s.push_str(&format!("{i},{line},{l}\n"));
            }
        }
        s
    }
}

/// Sends `message` through a fresh channel.
pub fn run_channel(
    message: &[u8],
    config: ChannelConfig,
    profile: &CpuProfile,
) -> Result<ChannelReport, ChannelError> {
    run_channel_on(Channel::new(profile, config)?, message)
}

/// Sends `message` through `channel`.
pub fn run_channel_on(mut channel: Channel, message: &[u8]) -> Result<ChannelReport, ChannelError> {
    let config = channel.config;
    let b = config.bits_per_cs;
    let n = config.symbols();
    let sent = to_symbols(message, b);
    let payload_bits = message.len() as u64 * 8;

    let mut decoded: Vec<Option<usize>> = Vec::with_capacity(sent.len());
    let mut trace = Vec::new();
    let mut confusion = vec![vec![0u64; n + 1]; n];
    let mut aborted = None;
    for &s in &sent {
        match channel.transfer(s) {
            Ok(d) => {
                confusion[s][d.symbol.unwrap_or(n)] += 1;
                decoded.push(d.symbol);
                if config.record_latencies {
                    trace.push(d.latencies);
                }
            }
            Err(ChannelError::Flush(e)) => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let symbols_sent = decoded.len() as u64;
    let mut bit_errors = 0;
    let mut symbol_errors = 0;
    let mut erasures = 0;
    for (i, (&s, d)) in sent.iter().zip(&decoded).enumerate() {
        if *d != Some(s) {
            symbol_errors += 1;
        }
        if d.is_none() {
            erasures += 1;
        }
        for j in 0..b as usize {
            let pos = (i * b as usize + j) as u64;
            if pos >= payload_bits {
                break;
            }
            let shift = b as usize - 1 - j;
            let ok = d.is_some_and(|d| (d >> shift) & 1 == (s >> shift) & 1);
            if !ok {
                bit_errors += 1;
            }
        }
    }
    let bits_sent = if aborted.is_some() { 0 } else { payload_bits };
    let total_cycles = channel.run_cycles + symbols_sent * channel.fixed_cost_per_symbol();
    let per_cycle = if total_cycles == 0 {
        0.0
    } else {
        bits_sent as f64 / total_cycles as f64
    };
    Ok(ChannelReport {
        profile: channel.profile.name.clone(),
        bits_per_cs: b,
        bits_sent,
        bit_errors,
        symbols_sent,
        symbol_errors,
        erasures,
        total_cycles,
        bandwidth_bits_per_kcycle: per_cycle * 1000.0,
        bandwidth_kb_per_mcycle: per_cycle * 1e6 / 8.0 / 1024.0,
        required_memory_bytes: config.required_memory_bytes(),
        confusion,
        received_hex: from_symbols(&decoded, b, message.len())
            .iter()
            .map(|x| format!("{x:02x}"))
            .collect(),
        aborted,
        latency_trace: config.record_latencies.then_some(trace),
    })
}

/// One report per `bits_per_cs` in `bits`.
pub fn sweep_bits(
    message: &[u8],
    profile: &CpuProfile,
    bits: impl IntoIterator<Item = u32>,
    noise_probability: f64,
) -> Result<Vec<ChannelReport>, ChannelError> {
    let base = ChannelConfig {
        noise_probability,
        ..ChannelConfig::default()
    };
    sweep_bits_with(message, profile, bits, base)
}

/// [`sweep_bits`] with every other setting taken from `base`.
pub fn sweep_bits_with(
    message: &[u8],
    profile: &CpuProfile,
    bits: impl IntoIterator<Item = u32>,
    base: ChannelConfig,
) -> Result<Vec<ChannelReport>, ChannelError> {
    bits.into_iter()
        .map(|b| {
            run_channel(
                message,
                ChannelConfig {
                    bits_per_cs: b,
                    ..base
                },
                profile,
            )
        })
        .collect()
}

/// Sweep table as CSV with header `b,bandwidth,errors,memory`.
pub fn sweep_csv(reports: &[ChannelReport]) -> String {
    let mut s = String::from("b,bandwidth,errors,memory\n");
    for r in reports {
        s.push_str(&format!(
            "{},{:.4},{},{}\n",
            r.bits_per_cs, r.bandwidth_bits_per_kcycle, r.bit_errors, r.required_memory_bytes
        ));
    }
    s
}
