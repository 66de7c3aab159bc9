//! `pbb84`: secret-key-rate sweeps and Monte-Carlo validation from one JSON
//! configuration file.
//!
//! Exit codes: 0 success, 1 I/O failure (reading the configuration, writing
//! results), 2 invalid configuration or command line, 3 a statistical
//! validation ran and failed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pbb84_core::keyrate::{Baseline, Mode, SecurityParams};
use pbb84_core::montecarlo::{validate_bounds, validate_channel_model};
use pbb84_core::optimizer::{sweep, OptimizationSpec, SweepPoint};
use pbb84_core::protocol::{ChannelParams, ProtocolParams};

#[derive(Parser)]
#[command(name = "pbb84", version, about = "Finite-key rates for a passively basis-choosing receiver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the key rate over channel transmittance and write a CSV table.
    Keyrate(RunArgs),
    /// Check the simulator against the channel model and the finite-key
    /// bounds; prints a JSON report.
    McValidate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured accounting mode (finite | asymptotic).
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Override the configured baseline (passive | active-approx).
    #[arg(long, value_parser = parse_baseline)]
    baseline: Option<Baseline>,
    /// Override the configured output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the pulse count (protocol.n and mc.pulses).
    #[arg(long)]
    pulses: Option<u64>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "finite" => Ok(Mode::Finite),
        "asymptotic" => Ok(Mode::Asymptotic),
        other => Err(format!("unknown mode {other:?}, expected finite or asymptotic")),
    }
}

fn parse_baseline(s: &str) -> Result<Baseline, String> {
    match s {
        "passive" => Ok(Baseline::Passive),
        "active-approx" => Ok(Baseline::ActiveApprox),
        other => Err(format!("unknown baseline {other:?}, expected passive or active-approx")),
    }
}

/// Everything a run needs beyond the command line.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    protocol: ProtocolParams,
    #[serde(default)]
    security: SecurityParams,
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default = "default_baseline")]
    baseline: Baseline,
    /// Re-optimize (p_z, mu_s) at every sweep point instead of using
    /// `protocol` as is.
    #[serde(default)]
    optimize_each: bool,
    #[serde(default)]
    optimizer: Option<OptimizationSpec>,
    #[serde(default)]
    sweep: Option<SweepConfig>,
    #[serde(default)]
    mc: Option<McConfig>,
    #[serde(default)]
    output_path: Option<PathBuf>,
}

fn default_mode() -> Mode {
    Mode::Finite
}

fn default_baseline() -> Baseline {
    Baseline::Passive
}

/// Logarithmic transmittance grid for `keyrate`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    eta_min: f64,
    eta_max: f64,
    points: usize,
}

/// Monte-Carlo validation setup for `mc-validate`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct McConfig {
    eta: f64,
    /// Pulses per simulated run (also becomes `protocol.n` for the bounds).
    pulses: u64,
    /// Independent runs for the bound-coverage check.
    #[serde(default = "default_trials")]
    trials: u64,
    seed: u64,
    #[serde(default)]
    validate_channel: bool,
    #[serde(default)]
    validate_bounds: bool,
    #[serde(default = "default_z_threshold")]
    z_threshold: f64,
}

fn default_trials() -> u64 {
    100
}

fn default_z_threshold() -> f64 {
    5.0
}

enum Failure {
    Io(String),
    Config(String),
    Statistical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Statistical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Config(m) | Failure::Statistical(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Keyrate(args) => run_keyrate(&args),
        Command::McValidate(args) => run_mc_validate(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", args.config.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("parsing {}: {e}", args.config.display())))?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(baseline) = args.baseline {
        cfg.baseline = baseline;
    }
    if let Some(out) = &args.out {
        cfg.output_path = Some(out.clone());
    }
    if let Some(pulses) = args.pulses {
        cfg.protocol.n = pulses;
        if let Some(mc) = &mut cfg.mc {
            mc.pulses = pulses;
        }
    }
    Ok(cfg)
}

fn run_keyrate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let sweep_cfg = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Failure::Config("keyrate needs a `sweep` section".into()))?;
    let out = cfg
        .output_path
        .as_ref()
        .ok_or_else(|| Failure::Config("keyrate needs `output_path` or --out".into()))?;
    let etas = eta_grid(sweep_cfg)?;
    let spec = cfg.optimizer.unwrap_or_default();
    let points = sweep(
        &cfg.protocol,
        &etas,
        &cfg.security,
        cfg.mode,
        cfg.baseline,
        cfg.optimize_each,
        &spec,
    );
    let failed = points.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} points failed and carry a zero rate", points.len());
        for p in points.iter().filter(|p| p.error.is_some()).take(3) {
            eprintln!("  eta {:e}: {}", p.eta, p.error.as_deref().unwrap_or(""));
        }
    }
    write_csv(out, &points)?;
    Ok(())
}

fn eta_grid(s: &SweepConfig) -> Result<Vec<f64>, Failure> {
    if !(s.eta_min > 0.0 && s.eta_max <= 1.0 && s.eta_min <= s.eta_max) {
        return Err(Failure::Config(format!(
            "sweep range [{}, {}] must satisfy 0 < eta_min <= eta_max <= 1",
            s.eta_min, s.eta_max
        )));
    }
    if s.points == 0 {
        return Err(Failure::Config("sweep needs at least one point".into()));
    }
    if s.points == 1 {
        return Ok(vec![s.eta_min]);
    }
    let (lo, hi) = (s.eta_min.ln(), s.eta_max.ln());
    Ok((0..s.points)
        .map(|i| (lo + (hi - lo) * i as f64 / (s.points - 1) as f64).exp())
        .collect())
}

/// Write the sweep as CSV through a sibling temp file and an atomic rename, so
/// readers never see a half-written table.
fn write_csv(path: &Path, points: &[SweepPoint]) -> Result<(), Failure> {
    let mut body = String::from("eta,rate,key_length,n_z1_lower,n_ph1_upper,e_bit,p_z,mu_s,mode,baseline\n");
    for p in points {
        body.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}\n",
            p.eta, p.rate, p.key_length, p.n_z1_lower, p.n_ph1_upper, p.e_bit, p.p_z, p.mu_s,
            p.mode, p.baseline,
        ));
    }
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Failure::Io(format!("writing {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(body.as_bytes()).map_err(io)?;
    tmp.persist(path)
        .map_err(|e| Failure::Io(format!("writing {}: {}", path.display(), e.error)))?;
    Ok(())
}

/// What `mc-validate` prints.
#[derive(Serialize)]
struct ValidationOutput {
    channel: Option<pbb84_core::montecarlo::AgreementReport>,
    bounds: Option<pbb84_core::montecarlo::BoundsSoundnessReport>,
}

fn run_mc_validate(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let mc = cfg
        .mc
        .as_ref()
        .ok_or_else(|| Failure::Config("mc-validate needs an `mc` section".into()))?;
    if !mc.validate_channel && !mc.validate_bounds {
        return Err(Failure::Config(
            "mc-validate needs validate_channel and/or validate_bounds set".into(),
        ));
    }
    let ch = ChannelParams { eta: mc.eta };
    let config_err = |e: pbb84_core::Error| Failure::Config(e.to_string());

    let channel = if mc.validate_channel {
        Some(
            validate_channel_model(&cfg.protocol, &ch, mc.pulses, mc.seed, mc.z_threshold)
                .map_err(config_err)?,
        )
    } else {
        None
    };
    let bounds = if mc.validate_bounds {
        let p = ProtocolParams { n: mc.pulses, ..cfg.protocol };
        Some(validate_bounds(&p, &ch, &cfg.security, mc.trials, mc.seed).map_err(config_err)?)
    } else {
        None
    };

    let output = ValidationOutput { channel, bounds };
    let json = serde_json::to_string_pretty(&output)
        .map_err(|e| Failure::Io(format!("serializing report: {e}")))?;
    println!("{json}");

    let channel_ok = output.channel.as_ref().is_none_or(|r| r.pass);
    let bounds_ok = output.bounds.as_ref().is_none_or(|r| r.pass);
    if !channel_ok || !bounds_ok {
        return Err(Failure::Statistical(format!(
            "validation failed (channel ok: {channel_ok}, bounds ok: {bounds_ok})"
        )));
    }
    Ok(())
}
