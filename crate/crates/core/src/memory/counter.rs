use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The user-visible cycle counter.
///
/// `resolution` models coarse timers (a counting thread ticks slower than
/// the core); `noise_amplitude` adds uniform integer jitter in
/// `[-noise_amplitude, +noise_amplitude]` to every reading.
#[derive(Debug, Clone)]
pub struct CycleCounter {
    current: u64,
    pub resolution: u64,
    pub noise_amplitude: u64,
    rng: ChaCha8Rng,
}

impl CycleCounter {
    pub fn new(resolution: u64, noise_amplitude: u64, seed: u64) -> CycleCounter {
        assert!(resolution > 0, "counter resolution must be positive");
        CycleCounter {
            current: 0,
            resolution,
            noise_amplitude,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Current simulated cycle (exact, not quantized).
    pub fn now(&self) -> u64 {
        self.current
    }

    /// Moves time forward to `cycle`; never moves it back.
    pub fn advance_to(&mut self, cycle: u64) {
        self.current = self.current.max(cycle);
    }

    pub fn advance(&mut self, cycles: u64) {
        self.current += cycles;
    }

    /// A reading of the counter as software sees it.
    pub fn read(&mut self) -> u64 {
        self.read_at(self.current)
    }

    /// A reading taken at `cycle`.
    pub fn read_at(&mut self, cycle: u64) -> u64 {
        let quantized = cycle / self.resolution * self.resolution;
        if self.noise_amplitude == 0 {
            return quantized;
        }
        let a = self.noise_amplitude as i64;
        let jitter = self.rng.gen_range(-a..=a);
        quantized.saturating_add_signed(jitter)
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}
