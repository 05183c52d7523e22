//! Command-line front end. Frequencies are given in Hz and converted to
//! rad/s internally. Exit codes: 0 success, 2 configuration error, 3 numeric
//! failure.

use crate::analysis::{self, DesignSpec, PredictionReport};
use crate::baseband::{averaged_transit_time, AveragedModel, ClassicPhaseModel, DelayModel, LoopFilterKind};
use crate::core_types::{validate_params, LoopParams, LoopVariant};
use crate::detectors::PdCharacteristic;
use crate::export::{fmt_num, CsvTable};
use crate::ode_engine::{self, ClassicRhs, DelayRhs, EventSpec, IntegratorConfig, OdeError, PortraitConfig};
use crate::signal_sim::{self, demod_ber, pull_in_time_ensemble, SignalSimConfig, SimError, DEFAULT_SEEDS};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "COSTAS_LAB_SEED";
/// Seed used when neither flag, environment nor config sets one.
pub const DEFAULT_SEED: u32 = 0xACE1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BlowUp { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Model fidelity of `simulate`, `sweep` and `portrait`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Signal,
    Phase,
    Delay,
    Averaged,
}

/// Single JSON configuration shared by every subcommand. Flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Carrier frequency, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<f64>,
    /// Symbol rate, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_t_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    /// Explicit loop constants; replaces the design step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<LoopParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<Fidelity>,
    /// Initial frequency offset, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_f0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_carrier: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<LoopFilterKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    /// Sweep offsets, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portrait: Option<PortraitConfig>,
    /// Lead-lag `(τ1, τ2)` for the hold-in analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leadlag: Option<(f64, f64)>,
}

/// Digest of the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes").to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Run record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u32,
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

#[derive(Debug, Parser)]
#[command(name = "costas-lab", version, about = "Costas loop design, acquisition predictions and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design loop constants from carrier and symbol rate.
    Design(CommonArgs),
    /// Closed-form lock-in, pull-in and hold-in predictions.
    Predict(CommonArgs),
    /// One run at the configured fidelity.
    Simulate(CommonArgs),
    /// Pull-in time over a list of offsets.
    Sweep(CommonArgs),
    /// Classified phase portrait of the two-state phase model.
    Portrait(CommonArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON file holding explicit loop constants.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// bpsk | qpsk | mbpsk | mqpsk | mbpsk-imag | mqpsk-imag
    #[arg(long)]
    pub variant: Option<String>,
    /// Carrier frequency in Hz.
    #[arg(long)]
    pub f0: Option<f64>,
    /// Symbol rate in Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    /// Crossover as a fraction of the carrier (at most 0.1).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Loop filter integrator time constant in seconds.
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long, value_enum)]
    pub fidelity: Option<Fidelity>,
    /// Initial frequency offset in Hz.
    #[arg(long)]
    pub delta_f0: Option<f64>,
    /// Run length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u32>,
    /// Comma-separated sweep offsets in Hz.
    #[arg(long, value_delimiter = ',')]
    pub offsets: Option<Vec<f64>>,
    /// Sweep range `lo:hi:step` in Hz.
    #[arg(long)]
    pub range: Option<String>,
    /// Lead-lag time constants `tau1,tau2` in seconds for the hold-in analysis.
    #[arg(long, value_delimiter = ',')]
    pub leadlag: Option<Vec<f64>>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory; results go to stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| config_err(format!("bad range `{s}`"))))
        .collect::<Result<_, _>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err(config_err(format!("range must be lo:hi:step, got `{s}`")));
    };
    if !(step > 0.0 && hi >= lo) {
        return Err(config_err(format!("range needs step > 0 and hi >= lo, got `{s}`")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + step * k as f64).collect())
}

/// Merges file config, flags and the seed environment variable.
pub fn resolve_config(args: &CommonArgs, env_seed: Option<String>) -> Result<RunConfig, CliError> {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cfg.schema {
        if s != 1 {
            return Err(config_err(format!("unsupported schema {s}")));
        }
    }
    if let Some(path) = &args.params {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.params = Some(serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?);
    }
    macro_rules! over {
        ($field:ident, $val:expr) => {
            if let Some(v) = $val {
                cfg.$field = Some(v);
            }
        };
    }
    over!(variant, args.variant.clone());
    over!(f0, args.f0);
    over!(fs, args.fs);
    over!(omega_t_ratio, args.ratio);
    over!(tau1, args.tau1);
    over!(fidelity, args.fidelity);
    over!(delta_f0, args.delta_f0);
    over!(duration, args.duration);
    over!(offsets, args.offsets.clone());
    if let Some(r) = &args.range {
        cfg.offsets = Some(parse_range(r)?);
    }
    if let Some(ll) = &args.leadlag {
        let [t1, t2] = ll[..] else {
            return Err(config_err("--leadlag takes exactly two values tau1,tau2"));
        };
        cfg.leadlag = Some((t1, t2));
    }
    if let Some(s) = env_seed {
        let s = s.trim();
        let v = s.parse::<u32>().map_err(|_| config_err(format!("{SEED_ENV} must be an unsigned 32-bit integer, got `{s}`")))?;
        cfg.seed = Some(v);
    }
    over!(seed, args.seed);
    cfg.schema = Some(1);
    Ok(cfg)
}

fn variant_of(cfg: &RunConfig) -> Result<LoopVariant, CliError> {
    let name = cfg.variant.as_deref().ok_or_else(|| config_err("missing --variant"))?;
    LoopVariant::from_short_name(name).map_err(config_err)
}

/// Loop constants from explicit params or from the design step, with the
/// configured offset applied.
pub fn loop_params(cfg: &RunConfig) -> Result<LoopParams, CliError> {
    let mut p = match cfg.params {
        Some(p) => {
            let v = validate_params(&p);
            if !v.is_empty() {
                let msg = v.iter().map(|x| format!("{}: {}", x.field, x.message)).collect::<Vec<_>>().join("; ");
                return Err(config_err(format!("invalid params: {msg}")));
            }
            p
        }
        None => analysis::design(&design_spec(cfg)?).map_err(config_err)?,
    };
    if let Some(df) = cfg.delta_f0 {
        p = p.with_offset(2.0 * PI * df);
    }
    Ok(p)
}

fn design_spec(cfg: &RunConfig) -> Result<DesignSpec, CliError> {
    let variant = variant_of(cfg)?;
    let f0 = cfg.f0.ok_or_else(|| config_err("missing --f0"))?;
    let fs = cfg.fs.ok_or_else(|| config_err("missing --fs"))?;
    let mut spec = DesignSpec::new(f0, fs, variant);
    if let Some(r) = cfg.omega_t_ratio {
        spec.omega_t_ratio = r;
    }
    if let Some(t) = cfg.tau1 {
        spec.tau1 = t;
    }
    if let Some(m) = cfg.m {
        spec.m = m;
    }
    spec.validate().map_err(config_err)?;
    Ok(spec)
}

fn default_offsets(p: &LoopParams, variant: LoopVariant) -> Vec<f64> {
    let lo = analysis::lock_in_range(p, variant);
    let hi = match analysis::pull_in_range(p, variant) {
        Ok(analysis::PullInRange::Finite(w)) => w,
        _ => 10.0 * lo,
    };
    (1..=9).map(|k| lo + (hi - lo) * k as f64 / 10.0).collect()
}

fn prediction(cfg: &RunConfig) -> Result<PredictionReport, CliError> {
    let variant = variant_of(cfg)?;
    let p = loop_params(cfg)?;
    let offsets: Vec<f64> = match &cfg.offsets {
        Some(o) => o.iter().map(|f| 2.0 * PI * f).collect(),
        None => default_offsets(&p, variant),
    };
    analysis::predict(&p, variant, &offsets, cfg.leadlag).map_err(config_err)
}

/// Output of one subcommand: stdout text plus named artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub artifacts: Vec<(String, String)>,
    pub seed: u32,
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn seed_of(cfg: &RunConfig) -> u32 {
    cfg.seed.unwrap_or(DEFAULT_SEED)
}

pub fn cmd_design(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let variant = variant_of(cfg)?;
    let p = loop_params(cfg)?;
    let report = prediction(cfg)?;
    let doc = serde_json::json!({
        "schema": 1,
        "variant": variant.short_name(),
        "params": p,
        "omega_n": p.omega_n,
        "zeta": p.zeta,
        "prediction": {
            "delta_omega_l": report.delta_omega_l,
            "t_l": report.t_l,
            "delta_omega_p": report.delta_omega_p,
        },
    });
    let text = json(&doc);
    Ok(Outcome { stdout: text.clone(), artifacts: vec![("design.json".into(), text)], seed: seed_of(cfg) })
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let text = json(&prediction(cfg)?);
    Ok(Outcome { stdout: text.clone(), artifacts: vec![("prediction.json".into(), text)], seed: seed_of(cfg) })
}

fn pd_of(cfg: &RunConfig, variant: LoopVariant) -> Result<PdCharacteristic, CliError> {
    PdCharacteristic::new(variant, cfg.m.unwrap_or(1.0)).map_err(config_err)
}

fn default_integrator(p: &LoopParams, t_end: f64) -> IntegratorConfig {
    let h = 2.0 * PI / p.omega_n / 400.0;
    let steps = (t_end / h).ceil();
    IntegratorConfig::rk4(h, t_end).with_stride((steps / 20_000.0).ceil().max(1.0) as usize)
}

fn signal_config(cfg: &RunConfig, variant: LoopVariant, p: LoopParams, duration: f64) -> Result<SignalSimConfig, CliError> {
    let f0 = match cfg.f0 {
        Some(f) => f,
        None => p.omega1 / (2.0 * PI),
    };
    let fs = cfg.fs.ok_or_else(|| config_err("signal fidelity needs the symbol rate --fs"))?;
    let n = cfg.samples_per_carrier.unwrap_or(if variant.is_conventional() { 8 } else { 32 });
    let mut source = signal_sim::ModulatedSource::new(variant, f0, fs, seed_of(cfg));
    source.m = cfg.m.unwrap_or(1.0);
    Ok(SignalSimConfig {
        source,
        loop_settings: signal_sim::LoopSettings { params: p, f_samp: n as f64 * f0 },
        detector: signal_sim::LockDetector::for_params(&p),
        duration,
    })
}

fn phase_run(
    cfg: &RunConfig,
    variant: LoopVariant,
    p: LoopParams,
    fidelity: Fidelity,
    t_end: f64,
) -> Result<ode_engine::Solution, CliError> {
    let pd = pd_of(cfg, variant)?;
    let filter = cfg.filter.unwrap_or(LoopFilterKind::Pi);
    let classic = ClassicPhaseModel::new(p, pd).with_filter(filter);
    let integ = match cfg.integrator {
        Some(mut i) => {
            i.t_end = t_end;
            i
        }
        None => default_integrator(&p, t_end),
    };
    let state0 = [cfg.x0.unwrap_or(0.0), cfg.theta0.unwrap_or(0.0)];
    let spec = EventSpec::for_classic(&classic);
    Ok(match fidelity {
        Fidelity::Phase => ode_engine::integrate(&mut ClassicRhs(classic), &state0, &integ, Some(spec))?,
        Fidelity::Delay => {
            let dm = DelayModel::new(p, pd).map_err(config_err)?.with_filter(filter);
            ode_engine::integrate(&mut DelayRhs::new(dm), &state0, &integ, Some(spec))?
        }
        _ => unreachable!("two-state fidelities only"),
    })
}

#[derive(Debug, Clone, Serialize)]
struct SimulateSummary {
    schema: u32,
    fidelity: Fidelity,
    variant: String,
    delta_f0: f64,
    locked: bool,
    t_lock: Option<f64>,
    pull_in_time: Option<f64>,
    cycle_slips: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_freq_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ber: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blew_up: Option<bool>,
}

fn averaged_time(p: &LoopParams, variant: LoopVariant) -> Option<f64> {
    let dwl = analysis::lock_in_range(p, variant);
    let dw0 = p.delta_omega0.abs();
    if dw0 <= dwl {
        return Some(0.0);
    }
    averaged_transit_time(&AveragedModel::new(*p, variant), dw0, dwl)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let variant = variant_of(cfg)?;
    let p = loop_params(cfg)?;
    let fidelity = cfg.fidelity.unwrap_or(Fidelity::Signal);
    let duration = cfg.duration.unwrap_or(1e-3);
    if !(duration > 0.0) {
        return Err(config_err("duration must be positive"));
    }
    let delta_f0 = p.delta_omega0 / (2.0 * PI);
    let mut summary = SimulateSummary {
        schema: 1,
        fidelity,
        variant: variant.short_name().into(),
        delta_f0,
        locked: false,
        t_lock: None,
        pull_in_time: None,
        cycle_slips: 0,
        final_freq_error: None,
        ber: None,
        blew_up: None,
    };
    let csv = match fidelity {
        Fidelity::Signal => {
            let sc = signal_config(cfg, variant, p, duration)?;
            let run = signal_sim::run_config(&sc)?;
            summary.locked = run.result.locked;
            summary.t_lock = run.result.t_lock;
            summary.pull_in_time = run.result.pull_in_time;
            summary.cycle_slips = run.result.cycle_slips;
            summary.final_freq_error = Some(run.result.final_freq_error);
            summary.ber = demod_ber(&run, &sc.source).ok();
            run.trace.to_csv(cfg.record_stride.unwrap_or(1))
        }
        Fidelity::Phase | Fidelity::Delay => {
            let sol = phase_run(cfg, variant, p, fidelity, duration)?;
            if sol.blew_up() {
                let t = sol.events.last().map_or(f64::NAN, |e| e.t);
                return Err(CliError::Numeric(format!("state became non-finite at t = {t} (step {})", sol.steps)));
            }
            summary.locked = sol.locked_at_end;
            summary.t_lock = sol.t_lock;
            summary.pull_in_time = sol.t_lock;
            summary.cycle_slips = sol.cycle_slips;
            summary.blew_up = Some(false);
            sol.trajectory.to_csv()
        }
        Fidelity::Averaged => {
            let t = averaged_time(&p, variant);
            summary.locked = t.is_some();
            summary.pull_in_time = t;
            summary.t_lock = t.map(|t| t + analysis::lock_time(&p));
            let mut table = CsvTable::new(&["t", "delta_omega"]);
            if let Some(tp) = t.filter(|&t| t > 0.0) {
                let model = AveragedModel::new(p, variant);
                let dwl = analysis::lock_in_range(&p, variant);
                let n = 200;
                for k in 0..=n {
                    let w = p.delta_omega0.abs() - (p.delta_omega0.abs() - dwl) * k as f64 / n as f64;
                    let tk = if k == 0 { 0.0 } else { averaged_transit_time(&model, p.delta_omega0.abs(), w).unwrap_or(tp) };
                    table.row(vec![fmt_num(tk), fmt_num(w)]);
                }
            }
            table.finish()
        }
    };
    let text = json(&summary);
    Ok(Outcome {
        stdout: text.clone(),
        artifacts: vec![("timeseries.csv".into(), csv), ("summary.json".into(), text)],
        seed: seed_of(cfg),
    })
}

/// One sweep row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta_f0: f64,
    pub t_p_theory: Option<f64>,
    pub t_p_sim: Option<f64>,
    pub locked: bool,
}

fn sweep_row(cfg: &RunConfig, variant: LoopVariant, base: LoopParams, f: f64) -> Result<SweepRow, CliError> {
    let p = base.with_offset(2.0 * PI * f);
    let theory = analysis::pull_in_time_formula(&p, variant, p.delta_omega0).ok();
    let fidelity = cfg.fidelity.unwrap_or(Fidelity::Signal);
    let (sim, locked) = match fidelity {
        Fidelity::Averaged => {
            let t = averaged_time(&p, variant);
            (t, t.is_some())
        }
        Fidelity::Signal => {
            let window = 4.0 * 2.0 * PI / p.omega_n;
            let duration = cfg.duration.unwrap_or(match theory {
                Some(t) => 3.0 * t + 2.0 * window + 100e-6,
                None => 2e-3,
            });
            let sc = signal_config(cfg, variant, base, duration)?;
            let seeds: Vec<u32> = match (&cfg.seeds, cfg.seed) {
                (Some(s), _) => s.clone(),
                (None, Some(s)) => vec![s],
                (None, None) => DEFAULT_SEEDS.to_vec(),
            };
            let e = pull_in_time_ensemble(&sc, f, &seeds)?;
            (e.median, e.median.is_some())
        }
        Fidelity::Phase | Fidelity::Delay => {
            let t_end = cfg.duration.unwrap_or_else(|| theory.map_or(2e-3, |t| 3.0 * t) + 8.0 * 2.0 * PI / p.omega_n);
            let sol = phase_run(cfg, variant, p, fidelity, t_end)?;
            (sol.t_lock.filter(|_| sol.locked_at_end), sol.locked_at_end)
        }
    };
    Ok(SweepRow { delta_f0: f, t_p_theory: theory, t_p_sim: sim, locked })
}

/// Rows in input order; `jobs` worker threads.
pub fn sweep_rows(cfg: &RunConfig, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    let variant = variant_of(cfg)?;
    let base = loop_params(&RunConfig { delta_f0: None, ..cfg.clone() })?;
    let offsets = cfg.offsets.clone().ok_or_else(|| config_err("sweep needs --offsets or --range"))?;
    if offsets.is_empty() {
        return Err(config_err("sweep offset list is empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(config_err)?;
    pool.install(|| offsets.par_iter().map(|&f| sweep_row(cfg, variant, base, f)).collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut table = CsvTable::new(&["delta_f0", "T_P_theory", "T_P_sim", "locked"]);
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for r in rows {
        table.row(vec![fmt_num(r.delta_f0), opt(r.t_p_theory), opt(r.t_p_sim), r.locked.to_string()]);
    }
    table.finish()
}

pub fn cmd_sweep(cfg: &RunConfig, jobs: usize) -> Result<Outcome, CliError> {
    let csv = sweep_csv(&sweep_rows(cfg, jobs)?);
    Ok(Outcome { stdout: csv.clone(), artifacts: vec![("sweep.csv".into(), csv)], seed: seed_of(cfg) })
}

pub fn cmd_portrait(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let fidelity = cfg.fidelity.unwrap_or(Fidelity::Phase);
    if fidelity != Fidelity::Phase {
        return Err(config_err("portrait needs the two-state phase fidelity (`phase`)"));
    }
    let variant = variant_of(cfg)?;
    let p = loop_params(cfg)?;
    let pd = pd_of(cfg, variant)?;
    let model = ClassicPhaseModel::new(p, pd).with_filter(cfg.filter.unwrap_or(LoopFilterKind::Pi));
    let pc = cfg.portrait.ok_or_else(|| config_err("portrait needs a `portrait` grid in the config"))?;
    let result = ode_engine::phase_portrait(&model, &pc)?;
    let summary = serde_json::json!({
        "schema": 1,
        "has_eq": result.has_eq,
        "has_cycle": result.has_cycle,
        "outside_pull_in": result.outside_pull_in,
        "cycle_rate": result.cycle_rate,
        "boundary": result.boundary,
        "trajectories": result.trajectories,
    });
    let text = json(&summary);
    Ok(Outcome {
        stdout: text.clone(),
        artifacts: vec![("portrait.csv".into(), result.to_csv()), ("summary.json".into(), text)],
        seed: seed_of(cfg),
    })
}

fn write_outputs(dir: &Path, command: &str, cfg: &RunConfig, out: &Outcome) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for (name, body) in &out.artifacts {
        std::fs::write(dir.join(name), body).map_err(|e| config_err(format!("{name}: {e}")))?;
        names.push(name.clone());
    }
    let manifest = RunManifest {
        schema: 1,
        command: command.into(),
        config_hash: config_hash(cfg),
        seed: out.seed,
        artifacts: names,
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    std::fs::write(dir.join("manifest.json"), json(&manifest)).map_err(|e| config_err(format!("manifest: {e}")))?;
    Ok(())
}

/// Runs one parsed command; returns the stdout text.
pub fn execute(cli: &Cli, env_seed: Option<String>) -> Result<String, CliError> {
    let (name, args) = match &cli.command {
        Command::Design(a) => ("design", a),
        Command::Predict(a) => ("predict", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Portrait(a) => ("portrait", a),
    };
    let cfg = resolve_config(args, env_seed)?;
    let out = match &cli.command {
        Command::Design(_) => cmd_design(&cfg)?,
        Command::Predict(_) => cmd_predict(&cfg)?,
        Command::Simulate(_) => cmd_simulate(&cfg)?,
        Command::Sweep(a) => cmd_sweep(&cfg, a.jobs)?,
        Command::Portrait(_) => cmd_portrait(&cfg)?,
    };
    if let Some(dir) = &args.out {
        write_outputs(dir, name, &cfg, &out)?;
    }
    Ok(out.stdout)
}

/// Entry point shared by the binary and tests: parses `args`, prints results
/// and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, std::env::var(SEED_ENV).ok()) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
