//! Experiment config files.

use std::fmt;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::attacks::{SecretLocation, Variant, WindowTrigger};
use crate::countermeasures::{apply, MitigationError, MitigationSet};
use crate::covert::{ChannelConfig, ChannelError};
use crate::memory::{CacheGeometry, EvictionParams};
use crate::microarch::{
    CpuProfile, ExceptionPolicy, Pipeline, ProfileError, RsbUnderflow, SquashPolicy,
};

/// Seed used when neither the command line, the config nor the
/// environment gives one.
pub const DEFAULT_SEED: u64 = 0x5eed;
pub const SEED_ENV: &str = "TRANSIENT_SIM_SEED";
pub const DEFAULT_PROFILE: &str = "intel_i7";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Attack,
    Covert,
    Sweep,
    MitigationDemo,
    Matrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Table,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            _ => Err(format!("unknown format `{s}` (json, csv, table)")),
        }
    }
}

/// Changes to a built-in profile. Unset fields keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileOverrides {
    /// Built-in profile to start from.
    pub base: Option<String>,
    pub name: Option<String>,
    pub pipeline: Option<Pipeline>,
    pub rsb_size: Option<usize>,
    pub rsb_underflow: Option<RsbUnderflow>,
    pub squash_policy: Option<SquashPolicy>,
    pub branch_resolve_extra: Option<u64>,
    pub return_resolve_extra: Option<u64>,
    pub stl_speculation: Option<bool>,
    pub exception_policy: Option<ExceptionPolicy>,
    pub sysreg_transient_forward: Option<bool>,
    pub l1_latency: Option<u64>,
    pub l2_latency: Option<u64>,
    pub dram_latency: Option<u64>,
    pub page_fault_latency: Option<u64>,
    pub l1: Option<CacheGeometry>,
    pub l2: Option<CacheGeometry>,
    pub eviction: Option<EvictionParams>,
    pub rob_size: Option<usize>,
    pub pht_index_bits: Option<u32>,
    pub counter_resolution: Option<u64>,
}

impl ProfileOverrides {
    pub fn apply_to(&self, p: &mut CpuProfile) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    p.$field = v;
                }
            )*};
        }
        set!(
            name,
            pipeline,
            rsb_size,
            rsb_underflow,
            squash_policy,
            branch_resolve_extra,
            return_resolve_extra,
            stl_speculation,
            exception_policy,
            sysreg_transient_forward,
            l1,
            l2,
            rob_size,
            pht_index_bits,
            counter_resolution
        );
        if let Some(e) = self.eviction {
            p.eviction = Some(e);
        }
        let l = &mut p.latencies;
        for (slot, v) in [
            (&mut l.l1, self.l1_latency),
            (&mut l.l2, self.l2_latency),
            (&mut l.dram, self.dram_latency),
            (&mut l.page_fault, self.page_fault_latency),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
}

/// `"profile": "cortex_a72"` or `"profile": {"base": "cortex_a72", ...}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    Name(String),
    Inline(Box<ProfileOverrides>),
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Name(DEFAULT_PROFILE.to_string())
    }
}

impl ProfileSpec {
    pub fn base_name(&self) -> &str {
        match self {
            ProfileSpec::Name(n) => n,
            ProfileSpec::Inline(o) => o.base.as_deref().unwrap_or(DEFAULT_PROFILE),
        }
    }
}

impl Serialize for ProfileSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ProfileSpec::Name(n) => s.serialize_str(n),
            ProfileSpec::Inline(o) => o.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ProfileSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ProfileSpec;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a profile name or a profile override object")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ProfileSpec, E> {
                Ok(ProfileSpec::Name(v.to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<ProfileSpec, A::Error> {
                ProfileOverrides::deserialize(de::value::MapAccessDeserializer::new(map))
                    .map(|o| ProfileSpec::Inline(Box::new(o)))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub profile: ProfileSpec,
    /// Profiles for `matrix`; empty means all built-ins.
    #[serde(default)]
    pub profiles: Vec<String>,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub scenario: Option<WindowTrigger>,
    #[serde(default)]
    pub secret_loc: Option<SecretLocation>,
    #[serde(default)]
    pub secret_hex: Option<String>,
    #[serde(default)]
    pub message_hex: Option<String>,
    #[serde(default)]
    pub channel: ChannelConfig,
    /// Widths for `sweep`; empty means 1..=6.
    #[serde(default)]
    pub bits: Vec<u32>,
    #[serde(default)]
    pub mitigations: MitigationSet,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Mitigation(#[from] MitigationError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("invalid hex in {field}: {value:?}")]
    Hex { field: &'static str, value: String },
    #[error("`{0}` is required for this experiment")]
    Missing(&'static str),
    #[error("{0} is not a valid seed")]
    Seed(String),
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment,
            profile: ProfileSpec::default(),
            profiles: Vec::new(),
            variant: None,
            scenario: None,
            secret_loc: None,
            secret_hex: None,
            message_hex: None,
            channel: ChannelConfig::default(),
            bits: Vec::new(),
            mitigations: MitigationSet::default(),
            seed: None,
            format: Format::Json,
        }
    }

    /// Parses a config and checks that it resolves.
    pub fn from_json(text: &str, path: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant the experiment will rely on.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolve_profile()?;
        for name in &self.profiles {
            CpuProfile::builtin(name)?;
        }
        self.channel.check()?;
        for &b in &self.bits {
            ChannelConfig::with_bits(b).check()?;
        }
        self.secret()?;
        self.message()?;
        seed_from_env()?;
        Ok(())
    }

    /// Base profile with overrides and mitigations applied.
    pub fn resolve_profile(&self) -> Result<CpuProfile, ConfigError> {
        let mut p = CpuProfile::builtin(self.profile.base_name())?;
        if let ProfileSpec::Inline(o) = &self.profile {
            o.apply_to(&mut p);
        }
        let p = apply(&p, self.mitigations)?;
        p.validate()?;
        Ok(p)
    }

    /// Profiles `matrix` runs on, each with the config's mitigations.
    pub fn matrix_profiles(&self) -> Result<Vec<CpuProfile>, ConfigError> {
        let names: Vec<String> = if self.profiles.is_empty() {
            crate::microarch::PROFILE_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            self.profiles.clone()
        };
        names
            .iter()
            .map(|n| Ok(apply(&CpuProfile::builtin(n)?, self.mitigations)?))
            .collect()
    }

    pub fn secret(&self) -> Result<Option<Vec<u8>>, ConfigError> {
        decode_field("secret_hex", self.secret_hex.as_deref())
    }

    pub fn message(&self) -> Result<Option<Vec<u8>>, ConfigError> {
        decode_field("message_hex", self.message_hex.as_deref())
    }

    /// Config seed, else `TRANSIENT_SIM_SEED`, else [`DEFAULT_SEED`].
    pub fn effective_seed(&self) -> Result<u64, ConfigError> {
        match self.seed {
            Some(s) => Ok(s),
            None => Ok(seed_from_env()?.unwrap_or(DEFAULT_SEED)),
        }
    }

    /// Channel settings with the effective seed.
    pub fn channel_config(&self) -> Result<ChannelConfig, ConfigError> {
        Ok(ChannelConfig {
            seed: self.effective_seed()?,
            ..self.channel
        })
    }
}

fn seed_from_env() -> Result<Option<u64>, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => parse_seed(&v).map(Some),
        Err(_) => Ok(None),
    }
}

/// Decimal or `0x` hex.
pub fn parse_seed(s: &str) -> Result<u64, ConfigError> {
    let t = s.trim();
    let r = match t.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => t.parse(),
    };
    r.map_err(|_| ConfigError::Seed(s.to_string()))
}

fn decode_field(field: &'static str, v: Option<&str>) -> Result<Option<Vec<u8>>, ConfigError> {
    v.map(|s| {
        parse_hex(s).ok_or_else(|| ConfigError::Hex {
            field,
            value: s.to_string(),
        })
    })
    .transpose()
}

/// Even-length hex, optional `0x` prefix.
pub fn parse_hex(s: &str) -> Option<Vec<u8>> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: name.clone(),
        source,
    })?;
    ExperimentConfig::from_json(&text, &name)
}
