//! Experiment runner: configs in, reports out.

mod config;
pub mod golden;
mod matrix;
mod mitigate;
mod report;

use thiserror::Error;

use crate::attacks::{run_attack, AttackError, Scenario, SecretLocation, WindowTrigger};
use crate::countermeasures::MitigationError;
use crate::covert::{run_channel, sweep_bits_with, ChannelError};
use crate::microarch::CpuProfile;

pub use config::{
    load_config, parse_hex, parse_seed, to_hex, ConfigError, ExperimentConfig, ExperimentKind,
    Format, ProfileOverrides, ProfileSpec, DEFAULT_PROFILE, DEFAULT_SEED, SEED_ENV,
};
pub use golden::{Column, Table};
pub use matrix::{run_matrix, CellResult, DiffEntry, SuiteReport, MATRIX_SECRET};
pub use mitigate::{mitigation_suite, MitigationReport, MitigationRow};
pub use report::{emit_report, Report};

/// Default secret for `attack` when none is given.
pub const DEFAULT_SECRET: &[u8] = b"Squeamish Ossifrage";
/// Default message for `covert`.
pub const DEFAULT_MESSAGE: &[u8] = b"HI";
/// Length of the default `sweep` message: 1920 bits fill whole symbols at
/// every width from 1 to 6, so no width pays for padding.
pub const SWEEP_MESSAGE_LEN: usize = 240;

/// Pseudo-random default `sweep` message.
pub fn sweep_message(seed: u64) -> Vec<u8> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..SWEEP_MESSAGE_LEN).map(|_| rng.gen()).collect()
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
}

impl HarnessError {
    /// Errors in what was asked for, as opposed to failures while running.
    pub fn is_usage(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Mitigation(_) => true,
            HarnessError::Attack(e) => {
                matches!(
                    e,
                    AttackError::UndefinedScenario { .. } | AttackError::SecretLength(_)
                )
            }
            HarnessError::Channel(e) => !matches!(e, ChannelError::Run(_)),
        }
    }
}

pub fn list_profiles() -> Report {
    Report::Profiles(CpuProfile::all())
}

/// Runs the experiment `config` describes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::Attack => {
            let variant = config.variant.ok_or(ConfigError::Missing("variant"))?;
            let profile = config.resolve_profile()?;
            let scenario = Scenario::new(
                config.scenario.unwrap_or(WindowTrigger::CacheMiss),
                config.secret_loc.unwrap_or(SecretLocation::L1),
            );
            let secret = config.secret()?.unwrap_or_else(|| DEFAULT_SECRET.to_vec());
            Ok(Report::Attack(run_attack(
                &profile, variant, scenario, &secret,
            )?))
        }
        ExperimentKind::Covert => {
            let profile = config.resolve_profile()?;
            let message = config
                .message()?
                .unwrap_or_else(|| DEFAULT_MESSAGE.to_vec());
            Ok(Report::Channel(run_channel(
                &message,
                config.channel_config()?,
                &profile,
            )?))
        }
        ExperimentKind::Sweep => {
            let profile = config.resolve_profile()?;
            let message = match config.message()? {
                Some(m) => m,
                None => sweep_message(config.effective_seed()?),
            };
            let bits = if config.bits.is_empty() {
                (1..=6).collect()
            } else {
                config.bits.clone()
            };
            Ok(Report::Sweep(sweep_bits_with(
                &message,
                &profile,
                bits,
                config.channel_config()?,
            )?))
        }
        ExperimentKind::Matrix => Ok(Report::Matrix(run_matrix(&config.matrix_profiles()?)?)),
        ExperimentKind::MitigationDemo => {
            let mut base = config.clone();
            base.mitigations = Default::default();
            let profile = base.resolve_profile()?;
            Ok(Report::Mitigation(mitigation_suite(
                &profile,
                config.mitigations,
                config.effective_seed()?,
            )?))
        }
    }
}
