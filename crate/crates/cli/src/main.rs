use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use transient_sim::attacks::{SecretLocation, Variant, WindowTrigger};
use transient_sim::countermeasures::MitigationSet;
use transient_sim::harness::{
    emit_report, list_profiles, load_config, parse_hex, parse_seed, run_experiment,
    ExperimentConfig, ExperimentKind, Format, ProfileSpec, Report,
};
use transient_sim::microarch::CpuProfile;

#[derive(Parser, Debug)]
#[command(
    name = "transient-sim",
    version,
    about = "Transient-execution attack and RSB covert channel simulator"
)]
struct Cli {
    /// Experiment config (JSON); command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format: json, csv or table.
    #[arg(long, global = true)]
    format: Option<Format>,
    /// RNG seed (decimal or 0x hex). Falls back to TRANSIENT_SIM_SEED.
    #[arg(long, global = true, value_parser = seed)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Built-in CPU profiles.
    Profiles {
        #[command(subcommand)]
        action: ProfilesAction,
    },
    /// Run one attack.
    Attack {
        #[arg(long, value_parser = variant)]
        variant: Option<Variant>,
        #[arg(long, value_parser = profile)]
        profile: Option<String>,
        #[arg(long, value_parser = scenario)]
        scenario: Option<WindowTrigger>,
        #[arg(long = "secret-loc", value_parser = secret_loc)]
        secret_loc: Option<SecretLocation>,
        /// Secret bytes as hex (1 to 64 bytes).
        #[arg(long, value_parser = hex)]
        secret: Option<Hex>,
        #[arg(long, value_parser = flags)]
        flags: Option<MitigationSet>,
    },
    /// Send a message through the RSB covert channel.
    Covert {
        #[arg(long)]
        bits: Option<u32>,
        /// Message as hex.
        #[arg(long, value_parser = hex)]
        message: Option<Hex>,
        /// Probability of an interloper context between sender and receiver.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_parser = profile)]
        profile: Option<String>,
        #[arg(long, value_parser = flags)]
        flags: Option<MitigationSet>,
        /// Write per-symbol reload latencies as CSV.
        #[arg(long = "emit-latency-trace")]
        emit_latency_trace: Option<PathBuf>,
    },
    /// Channel bandwidth, errors and memory for each bits-per-switch.
    SweepBits {
        #[arg(long, value_parser = hex)]
        message: Option<Hex>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_parser = profile)]
        profile: Option<String>,
        /// Widths to sweep, e.g. 1,2,3 (default 1..6).
        #[arg(long, value_delimiter = ',')]
        bits: Option<Vec<u32>>,
    },
    /// Every attack on every profile, diffed against the golden tables.
    Matrix {
        /// Profiles to run (default all built-ins).
        #[arg(long, value_delimiter = ',', value_parser = profile)]
        profiles: Option<Vec<String>>,
        #[arg(long, value_parser = flags)]
        flags: Option<MitigationSet>,
    },
    /// Run the experiments with and without a mitigation set.
    Mitigate {
        /// Comma-separated: privileged_flush, rsb_flush_on_cs,
        /// rsb_refill_on_cs, btb_fallback_disabled, pmu_noise_amplitude=N.
        #[arg(long, value_parser = flags)]
        flags: Option<MitigationSet>,
        #[arg(long, value_parser = profile)]
        profile: Option<String>,
    },
    /// Run the experiment a config file describes.
    Run,
}

#[derive(Subcommand, Debug)]
enum ProfilesAction {
    List,
}

fn variant(s: &str) -> Result<Variant, String> {
    Variant::from_name(s).ok_or_else(|| format!("unknown variant `{s}` (v1, v3, v3a, v4, rsb)"))
}

fn scenario(s: &str) -> Result<WindowTrigger, String> {
    WindowTrigger::from_name(s)
        .ok_or_else(|| format!("unknown scenario `{s}` (specload, cachemiss, pagefault)"))
}

fn secret_loc(s: &str) -> Result<SecretLocation, String> {
    SecretLocation::from_name(s).ok_or_else(|| format!("unknown secret location `{s}` (l1, dram)"))
}

fn profile(s: &str) -> Result<String, String> {
    CpuProfile::builtin(s)
        .map(|p| p.name)
        .map_err(|e| e.to_string())
}

/// Bytes given as hex on the command line.
#[derive(Debug, Clone)]
struct Hex(Vec<u8>);

fn hex(s: &str) -> Result<Hex, String> {
    parse_hex(s)
        .map(Hex)
        .ok_or_else(|| format!("`{s}` is not even-length hex"))
}

fn flags(s: &str) -> Result<MitigationSet, String> {
    MitigationSet::from_flags(s).map_err(|e| e.to_string())
}

fn seed(s: &str) -> Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    ExitCode::from(2)
}

/// Config file (or defaults) for `kind`, with the command-line flags on top.
fn build_config(cli: &Cli) -> Result<(ExperimentConfig, Option<PathBuf>), String> {
    let base = match &cli.config {
        Some(p) => Some(load_config(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let kind = match &cli.command {
        Command::Profiles { .. } => unreachable!("handled before"),
        Command::Attack { .. } => ExperimentKind::Attack,
        Command::Covert { .. } => ExperimentKind::Covert,
        Command::SweepBits { .. } => ExperimentKind::Sweep,
        Command::Matrix { .. } => ExperimentKind::Matrix,
        Command::Mitigate { .. } => ExperimentKind::MitigationDemo,
        Command::Run => match &base {
            Some(c) => c.experiment,
            None => return Err("`run` needs --config".into()),
        },
    };
    let mut cfg = base.unwrap_or_else(|| ExperimentConfig::new(kind));
    cfg.experiment = kind;
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let set_profile = |cfg: &mut ExperimentConfig, p: &Option<String>| {
        if let Some(p) = p {
            match &mut cfg.profile {
                ProfileSpec::Inline(o) => o.base = Some(p.clone()),
                spec => *spec = ProfileSpec::Name(p.clone()),
            }
        }
    };
    let set_flags = |cfg: &mut ExperimentConfig, f: &Option<MitigationSet>| {
        if let Some(f) = f {
            cfg.mitigations = cfg.mitigations.union(*f);
        }
    };
    let to_hex = transient_sim::harness::to_hex;
    let mut trace = None;
    match &cli.command {
        Command::Attack {
            variant,
            profile,
            scenario,
            secret_loc,
            secret,
            flags,
        } => {
            cfg.variant = variant.or(cfg.variant);
            cfg.scenario = scenario.or(cfg.scenario);
            cfg.secret_loc = secret_loc.or(cfg.secret_loc);
            if let Some(s) = secret {
                cfg.secret_hex = Some(to_hex(&s.0));
            }
            set_profile(&mut cfg, profile);
            set_flags(&mut cfg, flags);
        }
        Command::Covert {
            bits,
            message,
            noise,
            profile,
            flags,
            emit_latency_trace,
        } => {
            if let Some(b) = bits {
                cfg.channel.bits_per_cs = *b;
            }
            if let Some(n) = noise {
                cfg.channel.noise_probability = *n;
            }
            if let Some(m) = message {
                cfg.message_hex = Some(to_hex(&m.0));
            }
            if emit_latency_trace.is_some() {
                cfg.channel.record_latencies = true;
                trace = emit_latency_trace.clone();
            }
            set_profile(&mut cfg, profile);
            set_flags(&mut cfg, flags);
        }
        Command::SweepBits {
            message,
            noise,
            profile,
            bits,
        } => {
            if let Some(n) = noise {
                cfg.channel.noise_probability = *n;
            }
            if let Some(m) = message {
                cfg.message_hex = Some(to_hex(&m.0));
            }
            if let Some(b) = bits {
                cfg.bits = b.clone();
            }
            set_profile(&mut cfg, profile);
        }
        Command::Matrix { profiles, flags } => {
            if let Some(p) = profiles {
                cfg.profiles = p.clone();
            }
            set_flags(&mut cfg, flags);
        }
        Command::Mitigate { flags, profile } => {
            set_profile(&mut cfg, profile);
            set_flags(&mut cfg, flags);
        }
        Command::Run | Command::Profiles { .. } => {}
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((cfg, trace))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Profiles {
        action: ProfilesAction::List,
    } = cli.command
    {
        print!(
            "{}",
            emit_report(&list_profiles(), cli.format.unwrap_or(Format::Table))
        );
        return ExitCode::SUCCESS;
    }
    let (cfg, trace) = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => return usage_error(&e),
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) if e.is_usage() => return usage_error(&e.to_string()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let (Some(path), Report::Channel(r)) = (&trace, &report) {
        if let Err(e) = std::fs::write(path, r.latency_csv()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }
    print!("{}", emit_report(&report, cfg.format));
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
