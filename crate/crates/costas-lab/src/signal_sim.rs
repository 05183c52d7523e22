//! Sample-level simulation of the four digital loops: PRBS modulator,
//! mixers or Hilbert-delay pre-envelope, discrete LPFs and loop filter, NCO,
//! lock detection and symbol decisions.

use crate::analysis::{self, AnalysisError};
use crate::baseband::{classic_rhs, ClassicPhaseModel};
use crate::core_types::{count_cycle_slips, pd_period, wrap_to_period, LoopParams, LoopTag, LoopVariant, PdFlavor, SimResult};
use crate::detectors::{
    pd_conventional_bpsk, pd_conventional_qpsk, pd_modified_bpsk, pd_modified_imag, pd_modified_qpsk, sgn,
    PdCharacteristic,
};
use crate::export::{fmt_num, CsvTable};
use crate::filters::{self, DiscreteFilter, FilterError};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loop state at sample {index}")]
    BlowUp { index: usize },
    #[error("filter design failed: {0}")]
    Filter(#[from] FilterError),
    #[error("run did not lock")]
    NotLocked,
    #[error("invalid search bracket: {0}")]
    Bracket(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// 32-bit Fibonacci LFSR with taps 32, 22, 2, 1 emitting ±1 symbols.
#[derive(Debug, Clone)]
pub struct Prbs {
    state: u32,
}

/// Seed used when a zero seed would lock the register.
pub const PRBS_ZERO_SEED: u32 = 0xACE1;

impl Prbs {
    pub fn new(seed: u32) -> Self {
        Prbs { state: if seed == 0 { PRBS_ZERO_SEED } else { seed } }
    }

    pub fn next_symbol(&mut self) -> f64 {
        let s = self.state;
        let bit = ((s >> 31) ^ (s >> 21) ^ (s >> 1) ^ s) & 1;
        self.state = (s << 1) | bit;
        if bit == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Second-stream seed for QPSK.
fn quadrature_seed(seed: u32) -> u32 {
    seed ^ 0x5a5a_5a5a
}

/// Data-modulated carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatedSource {
    pub variant: LoopVariant,
    pub f_carrier: f64,
    pub f_symbol: f64,
    #[serde(default = "unit")]
    pub m: f64,
    #[serde(default)]
    pub prbs_seed: u32,
    #[serde(default)]
    pub theta1_0: f64,
}

fn unit() -> f64 {
    1.0
}

impl ModulatedSource {
    pub fn new(variant: LoopVariant, f_carrier: f64, f_symbol: f64, prbs_seed: u32) -> Self {
        ModulatedSource { variant, f_carrier, f_symbol, m: 1.0, prbs_seed, theta1_0: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.f_carrier > 0.0 && self.f_symbol > 0.0 && self.m > 0.0) {
            return Err(SimError::Config("carrier, symbol rate and amplitude must be positive".into()));
        }
        if self.f_symbol >= self.f_carrier {
            return Err(SimError::Config(format!(
                "symbol rate {} must be below the carrier {}",
                self.f_symbol, self.f_carrier
            )));
        }
        Ok(())
    }

    /// The first `n` transmitted symbol pairs `(m1, m2)`; `m2 = 0` for BPSK.
    pub fn symbols(&self, n: usize) -> Vec<(f64, f64)> {
        let mut g1 = Prbs::new(self.prbs_seed);
        let mut g2 = Prbs::new(quadrature_seed(self.prbs_seed));
        let bpsk = self.variant.is_bpsk_type();
        (0..n)
            .map(|_| {
                let a = g1.next_symbol();
                let b = g2.next_symbol();
                (self.m * a, if bpsk { 0.0 } else { self.m * b })
            })
            .collect()
    }

    /// Transmitted waveform for carrier phase `th1` and symbols `(m1, m2)`.
    pub fn waveform(&self, th1: f64, m1: f64, m2: f64) -> f64 {
        let (s, c) = th1.sin_cos();
        match self.variant.tag() {
            LoopTag::ConventionalBpsk => m1 * s,
            LoopTag::ConventionalQpsk => m1 * c + m2 * s,
            LoopTag::ModifiedBpsk => m1 * c,
            LoopTag::ModifiedQpsk => m1 * c - m2 * s,
        }
    }
}

/// Lock declaration thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockDetector {
    pub freq_window: f64,
    pub freq_tol: f64,
    pub phase_tol: f64,
}

impl LockDetector {
    /// `freq_tol = 0.01·ωn`, `phase_tol = 0.1` rad, `freq_window = 4·2π/ωn`.
    pub fn for_params(p: &LoopParams) -> Self {
        LockDetector { freq_window: 4.0 * 2.0 * PI / p.omega_n, freq_tol: 0.01 * p.omega_n, phase_tol: 0.1 }
    }
}

/// Sampling and loop constants of one digital loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSettings {
    pub params: LoopParams,
    pub f_samp: f64,
}

/// Full signal-level run description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSimConfig {
    pub source: ModulatedSource,
    #[serde(rename = "loop")]
    pub loop_settings: LoopSettings,
    pub detector: LockDetector,
    pub duration: f64,
}

impl SignalSimConfig {
    /// Reference setup: design for `(f0, fS)`, `n` samples per carrier cycle,
    /// offset `delta_f0` in Hz.
    pub fn designed(variant: LoopVariant, f0: f64, f_symbol: f64, n: u32, delta_f0: f64, seed: u32, duration: f64) -> Result<Self, SimError> {
        let params = analysis::design(&analysis::DesignSpec::new(f0, f_symbol, variant))?.with_offset(2.0 * PI * delta_f0);
        Ok(SignalSimConfig {
            source: ModulatedSource::new(variant, f0, f_symbol, seed),
            loop_settings: LoopSettings { params, f_samp: n as f64 * f0 },
            detector: LockDetector::for_params(&params),
            duration,
        })
    }

    pub fn with_offset_hz(mut self, delta_f0: f64) -> Self {
        self.loop_settings.params = self.loop_settings.params.with_offset(2.0 * PI * delta_f0);
        self
    }

    pub fn with_seed(mut self, seed: u32) -> Self {
        self.source.prbs_seed = seed;
        self
    }
}

/// Discrete loop state.
#[derive(Debug, Clone)]
pub struct DigitalLoop {
    pub params: LoopParams,
    pub variant: LoopVariant,
    pub t: f64,
    pub lpf_i: Option<DiscreteFilter>,
    pub lpf_q: Option<DiscreteFilter>,
    pub lf: DiscreteFilter,
    /// Oscillator argument, wrapped to [0, 2π).
    pub nco_phase: f64,
    /// Unwrapped copy of the NCO phase for diagnostics.
    pub nco_shadow: f64,
    pub hilbert_delay_samples: usize,
    delay_line: VecDeque<f64>,
}

impl DigitalLoop {
    pub fn new(params: LoopParams, variant: LoopVariant, f_samp: f64, f_carrier: f64) -> Result<Self, SimError> {
        if !(f_samp > 4.0 * f_carrier) {
            return Err(SimError::Config(format!(
                "sampling rate {f_samp} Hz must exceed four times the carrier {f_carrier} Hz"
            )));
        }
        let t = 1.0 / f_samp;
        let n = f_samp / f_carrier;
        let (lpf_i, lpf_q, delay) = if variant.is_conventional() {
            let w3 = params
                .omega3
                .ok_or_else(|| SimError::Config("conventional loop needs omega3".into()))?;
            let lpf = filters::bilinear(&filters::make_lpf1(w3)?, t, Some(w3))?;
            (Some(lpf.clone()), Some(lpf), 0)
        } else {
            let ni = n.round();
            if (n - ni).abs() > 1e-9 * n || !(ni as u64).is_multiple_of(4) {
                return Err(SimError::Config(format!(
                    "samples per carrier cycle must be a multiple of 4 for the Hilbert delay, got {n}"
                )));
            }
            (None, None, ni as usize / 4)
        };
        let lf = filters::bilinear(&filters::make_pi_filter(params.tau1, params.tau2)?, t, Some(params.omega_c))?;
        if (params.omega_free * t).abs() >= PI {
            return Err(SimError::Config("NCO free-running frequency aliases at this sampling rate".into()));
        }
        Ok(DigitalLoop {
            params,
            variant,
            t,
            lpf_i,
            lpf_q,
            lf,
            nco_phase: 0.0,
            nco_shadow: 0.0,
            hilbert_delay_samples: delay,
            delay_line: VecDeque::from(vec![0.0; delay]),
        })
    }

    /// Processes one input sample; returns `(ud, uf, I2, Q2)`.
    pub fn step(&mut self, u: f64) -> (f64, f64, f64, f64) {
        let (s2, c2) = self.nco_phase.sin_cos();
        let (ud, i2, q2) = match self.variant.tag() {
            LoopTag::ConventionalBpsk | LoopTag::ConventionalQpsk => {
                let bpsk = self.variant.tag() == LoopTag::ConventionalBpsk;
                let (i1, q1) = if bpsk { (2.0 * u * s2, 2.0 * u * c2) } else { (2.0 * u * c2, 2.0 * u * s2) };
                let i2 = self.lpf_i.as_mut().expect("conventional").step(i1);
                let q2 = self.lpf_q.as_mut().expect("conventional").step(q1);
                let ud = if bpsk { pd_conventional_bpsk(i2, q2) } else { pd_conventional_qpsk(i2, q2) };
                (ud, i2, q2)
            }
            LoopTag::ModifiedBpsk | LoopTag::ModifiedQpsk => {
                self.delay_line.push_back(u);
                let uh = self.delay_line.pop_front().expect("delay line is never empty");
                let um = Complex64::new(u, uh) * Complex64::new(c2, -s2);
                let ud = match self.variant.pd_flavor() {
                    PdFlavor::ComplexImag => pd_modified_imag(um, self.variant),
                    _ if self.variant.is_bpsk_type() => pd_modified_bpsk(um).map(|r| r.0).unwrap_or(0.0),
                    _ => pd_modified_qpsk(um).map(|r| r.0).unwrap_or(0.0),
                };
                (ud, um.re, um.im)
            }
        };
        let uf = self.lf.step(ud);
        let w2 = self.omega2(uf);
        self.nco_shadow += w2 * self.t;
        self.nco_phase = (self.nco_phase + w2 * self.t).rem_euclid(2.0 * PI);
        (ud, uf, i2, q2)
    }

    pub fn omega2(&self, uf: f64) -> f64 {
        self.params.omega_free + self.params.k0 * uf
    }
}

/// Full-rate record of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub t: Vec<f64>,
    pub theta_e: Vec<f64>,
    pub ud: Vec<f64>,
    pub uf: Vec<f64>,
    pub omega2: Vec<f64>,
    pub i2: Vec<f64>,
    pub q2: Vec<f64>,
}

impl Trace {
    /// CSV `t,theta_e,u_d,u_f,omega2,I2,Q2`, every `stride`-th sample.
    pub fn to_csv(&self, stride: usize) -> String {
        let mut table = CsvTable::new(&["t", "theta_e", "u_d", "u_f", "omega2", "I2", "Q2"]);
        for k in (0..self.t.len()).step_by(stride.max(1)) {
            table.row(
                [self.t[k], self.theta_e[k], self.ud[k], self.uf[k], self.omega2[k], self.i2[k], self.q2[k]]
                    .iter()
                    .map(|&v| fmt_num(v))
                    .collect(),
            );
        }
        table.finish()
    }
}

/// Symbol decision sampled mid-symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    pub t: f64,
    pub d_i: f64,
    pub d_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalRun {
    pub result: SimResult,
    pub trace: Trace,
    /// θe averaged over one symbol, centered.
    pub smoothed_theta_e: Vec<f64>,
    pub decisions: Vec<Decision>,
    pub samples_per_symbol: usize,
}

/// Centered moving average over `w` samples; shorter windows at the ends.
pub fn centered_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let w = w.max(1);
    let mut pre = vec![0.0; n + 1];
    for i in 0..n {
        pre[i + 1] = pre[i] + x[i];
    }
    let half = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + (w - half)).min(n);
            (pre[hi] - pre[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Start time of the first window of length `freq_window` over which the
/// smoothed phase error stays within `phase_tol` of the lock point and its
/// mean rate stays within `freq_tol`.
pub fn detect_lock(t: &[f64], smoothed: &[f64], period: f64, reference: f64, det: &LockDetector, dt: f64) -> Option<usize> {
    let w = (det.freq_window / dt).round() as usize;
    let n = smoothed.len();
    if w == 0 || n < w {
        return None;
    }
    let ok: Vec<bool> = smoothed.iter().map(|&s| wrap_to_period(s - reference, period).abs() < det.phase_tol).collect();
    // run length of consecutive ok samples starting at each index
    let mut run = vec![0usize; n + 1];
    for i in (0..n).rev() {
        run[i] = if ok[i] { run[i + 1] + 1 } else { 0 };
    }
    let span = t[w - 1] - t[0];
    (0..=n - w).find(|&i| run[i] >= w && ((smoothed[i + w - 1] - smoothed[i]) / span).abs() < det.freq_tol)
}

fn symbols_per_sample(src: &ModulatedSource, f_samp: f64) -> Result<usize, SimError> {
    let sps = f_samp / src.f_symbol;
    let r = sps.round();
    if r < 1.0 || (sps - r).abs() > 1e-9 * sps {
        return Err(SimError::Config(format!(
            "symbols must align with the sample grid; f_samp/f_symbol = {sps}"
        )));
    }
    Ok(r as usize)
}

/// Simulates `duration` seconds of one loop.
pub fn run_loop(source: &ModulatedSource, settings: &LoopSettings, duration: f64, detector: &LockDetector) -> Result<SignalRun, SimError> {
    source.validate()?;
    let p = settings.params;
    if p.k0 <= 0.0 || p.tau1 <= 0.0 || p.tau2 <= 0.0 {
        return Err(SimError::Config("K0, tau1 and tau2 must be positive".into()));
    }
    let mut lp = DigitalLoop::new(p, source.variant, settings.f_samp, source.f_carrier)?;
    let dt = lp.t;
    if detector.freq_window < 10.0 * dt {
        return Err(SimError::Config("lock window must span at least 10 samples".into()));
    }
    if !(duration > 0.0) {
        return Err(SimError::Config("duration must be positive".into()));
    }
    let sps = symbols_per_sample(source, settings.f_samp)?;
    let n = (duration / dt).round() as usize;
    let nsym = n / sps + 1;
    let symbols = source.symbols(nsym);
    let mut tr = Trace::default();
    for v in [&mut tr.t, &mut tr.theta_e, &mut tr.ud, &mut tr.uf, &mut tr.omega2, &mut tr.i2, &mut tr.q2] {
        v.reserve(n);
    }
    let mut decisions = Vec::with_capacity(nsym);
    for k in 0..n {
        let t = k as f64 * dt;
        let (m1, m2) = symbols[k / sps];
        let th1 = p.omega1 * t + source.theta1_0;
        let u = source.waveform(th1, m1, m2);
        let theta_e = th1 - lp.nco_shadow;
        let (ud, uf, i2, q2) = lp.step(u);
        if !(uf.is_finite() && lp.nco_shadow.is_finite()) {
            return Err(SimError::BlowUp { index: k });
        }
        if k % sps == sps / 2 {
            decisions.push(Decision { t, d_i: sgn(i2), d_q: sgn(q2) });
        }
        tr.t.push(t);
        tr.theta_e.push(theta_e);
        tr.ud.push(ud);
        tr.uf.push(uf);
        tr.omega2.push(lp.omega2(uf));
        tr.i2.push(i2);
        tr.q2.push(q2);
    }
    let period = pd_period(source.variant);
    let smoothed = centered_average(&tr.theta_e, sps);
    let lock_idx = detect_lock(&tr.t, &smoothed, period, 0.0, detector, dt);
    let t_lock = lock_idx.map(|i| tr.t[i]);
    let slips = count_cycle_slips(&smoothed, period, 0.0);
    let w = ((detector.freq_window / dt).round() as usize).clamp(1, n.max(1));
    let tail = &tr.omega2[n - w..];
    let final_freq_error = p.omega1 - tail.iter().sum::<f64>() / w as f64;
    let result = SimResult {
        t: tr.t.clone(),
        theta_e_series: tr.theta_e.clone(),
        uf_series: tr.uf.clone(),
        locked: t_lock.is_some(),
        t_lock,
        pull_in_time: t_lock,
        cycle_slips: slips,
        final_freq_error,
    };
    Ok(SignalRun { result, trace: tr, smoothed_theta_e: smoothed, decisions, samples_per_symbol: sps })
}

/// Runs a full config.
pub fn run_config(cfg: &SignalSimConfig) -> Result<SignalRun, SimError> {
    run_loop(&cfg.source, &cfg.loop_settings, cfg.duration, &cfg.detector)
}

/// Fraction of wrong symbol decisions after lock, minimized over alignment
/// shifts of ±2 symbols and the variant's phase ambiguity.
pub fn demod_ber(run: &SignalRun, source: &ModulatedSource) -> Result<f64, SimError> {
    let t_lock = run.result.t_lock.ok_or(SimError::NotLocked)?;
    let dt = run.trace.t.get(1).copied().unwrap_or(0.0);
    let start_t = t_lock + 2.0 * run.samples_per_symbol as f64 * dt;
    let sent = source.symbols(run.decisions.len() + 3);
    let first = run.decisions.iter().position(|d| d.t >= start_t).ok_or(SimError::NotLocked)?;
    let bpsk = source.variant.is_bpsk_type();
    let rotations: Vec<(f64, f64, f64, f64)> = if bpsk {
        vec![(1.0, 0.0, 0.0, 0.0), (-1.0, 0.0, 0.0, 0.0)]
    } else {
        // (dI, dQ) -> (a·dI + b·dQ, c·dI + d·dQ) for the four quarter turns
        vec![(1.0, 0.0, 0.0, 1.0), (0.0, -1.0, 1.0, 0.0), (-1.0, 0.0, 0.0, -1.0), (0.0, 1.0, -1.0, 0.0)]
    };
    let mut best = f64::INFINITY;
    for shift in -2i64..=2 {
        for &(a, b, c, d) in &rotations {
            let mut errors = 0usize;
            let mut total = 0usize;
            for k in first..run.decisions.len() {
                let j = k as i64 + shift;
                if j < 0 || j as usize >= sent.len() {
                    continue;
                }
                let (m1, m2) = sent[j as usize];
                let dec = &run.decisions[k];
                let ri = a * dec.d_i + b * dec.d_q;
                let wrong = if bpsk {
                    sgn(ri) != sgn(m1)
                } else {
                    let rq = c * dec.d_i + d * dec.d_q;
                    sgn(ri) != sgn(m1) || sgn(rq) != sgn(m2)
                };
                errors += wrong as usize;
                total += 1;
            }
            if total > 0 {
                best = best.min(errors as f64 / total as f64);
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(SimError::NotLocked)
    }
}

/// Time allowed for a run to declare lock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LockBudget {
    Fixed { seconds: f64 },
    /// `factor` times the predicted pull-in time, capped at `cap`; offsets
    /// beyond the predicted pull-in range get `cap`.
    Predicted { factor: f64, cap: f64 },
}

impl LockBudget {
    /// Ten predicted pull-in times, at most 10 ms.
    pub const DEFAULT: LockBudget = LockBudget::Predicted { factor: 10.0, cap: 10e-3 };

    pub fn seconds(&self, cfg: &SignalSimConfig, delta_f0: f64) -> f64 {
        match *self {
            LockBudget::Fixed { seconds } => seconds,
            LockBudget::Predicted { factor, cap } => {
                let p = cfg.loop_settings.params;
                analysis::pull_in_time(&p, cfg.source.variant, 2.0 * PI * delta_f0)
                    .map_or(cap, |t| (factor * t).min(cap))
            }
        }
    }
}

/// Lock verdict and time for one offset.
pub fn locks_within(cfg: &SignalSimConfig, delta_f0: f64, budget: LockBudget) -> Result<Option<f64>, SimError> {
    let limit = budget.seconds(cfg, delta_f0);
    let mut c = cfg.with_offset_hz(delta_f0);
    c.duration = limit + c.detector.freq_window;
    let run = run_config(&c)?;
    Ok(run.result.t_lock.filter(|&t| t <= limit))
}

/// Largest offset (Hz) that still locks within `budget`, by bisection to
/// 1 kHz between a locking `lo` and a failing `hi`.
pub fn measure_pull_in_range(template: &SignalSimConfig, search: (f64, f64), budget: LockBudget) -> Result<f64, SimError> {
    let (mut lo, mut hi) = search;
    if !(lo < hi) {
        return Err(SimError::Bracket(format!("need lo < hi, got {lo}, {hi}")));
    }
    if locks_within(template, lo, budget)?.is_none() {
        return Err(SimError::Bracket(format!("loop does not lock at the lower end {lo} Hz")));
    }
    if locks_within(template, hi, budget)?.is_some() {
        return Err(SimError::Bracket(format!("loop still locks at the upper end {hi} Hz")));
    }
    while hi - lo > 1e3 {
        let mid = 0.5 * (lo + hi);
        if locks_within(template, mid, budget)?.is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Seeds of the default pull-in-time ensemble.
pub const DEFAULT_SEEDS: [u32; 5] = [0xACE1, 12345, 999, 31337, 0xBEEF];

/// Median pull-in time over seeds, or `None` if fewer than half lock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleTime {
    pub delta_f0: f64,
    pub median: Option<f64>,
    pub times: Vec<Option<f64>>,
}

pub fn pull_in_time_ensemble(template: &SignalSimConfig, delta_f0: f64, seeds: &[u32]) -> Result<EnsembleTime, SimError> {
    let times = seeds
        .par_iter()
        .map(|&s| run_config(&template.with_seed(s).with_offset_hz(delta_f0)).map(|r| r.result.t_lock))
        .collect::<Result<Vec<_>, _>>()?;
    let mut locked: Vec<f64> = times.iter().flatten().copied().collect();
    locked.sort_by(f64::total_cmp);
    let median = if 2 * locked.len() > seeds.len() {
        let n = seeds.len();
        // unlocked seeds count as slower than any locked one
        let mut all: Vec<f64> = locked.clone();
        all.resize(n, f64::INFINITY);
        Some(if n % 2 == 1 { all[n / 2] } else { 0.5 * (all[n / 2 - 1] + all[n / 2]) })
            .filter(|m| m.is_finite())
    } else {
        None
    };
    Ok(EnsembleTime { delta_f0, median, times })
}

/// Inputs of the averaging-gap comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapExperiment {
    pub k0: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub omega3: f64,
    pub f0: f64,
    pub delta_omega0: f64,
    pub samples_per_carrier: u32,
    pub duration: f64,
}

impl GapExperiment {
    /// Fast BPSK loop whose first cycle slips happen at a detuning beyond
    /// the lock-in range.
    pub fn reference() -> Self {
        GapExperiment {
            k0: 4.8e6,
            tau1: 2e-5,
            tau2: 3.9789e-6,
            omega3: 1.2566e6,
            f0: 400e3,
            delta_omega0: 600_000.0,
            samples_per_carrier: 256,
            duration: 200e-6,
        }
    }

    fn params(&self) -> LoopParams {
        let w1 = 2.0 * PI * self.f0;
        LoopParams::derived(w1, w1 - self.delta_omega0, self.k0, 1.0, self.tau1, self.tau2, Some(self.omega3))
    }
}

/// Which model produced a steady phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapModel {
    Phase,
    Signal,
}

/// Mean unwrapped phase error over the last quarter of the run.
pub fn steady_phase(exp: &GapExperiment, model: GapModel) -> Result<f64, SimError> {
    let p = exp.params();
    let tail_mean = |v: &[f64]| {
        let k = v.len() - v.len() / 4;
        v[k..].iter().sum::<f64>() / (v.len() - k) as f64
    };
    match model {
        GapModel::Phase => {
            let pd = PdCharacteristic::new(LoopVariant::CONVENTIONAL_BPSK, 1.0).expect("unit amplitude");
            let m = ClassicPhaseModel::new(p, pd);
            let h = 1.0 / (exp.samples_per_carrier as f64 * exp.f0);
            let n = (exp.duration / h).round() as usize;
            let mut y = [0.0, 0.0];
            let mut th = Vec::with_capacity(n);
            for _ in 0..n {
                let k1 = classic_rhs(&m, y);
                let k2 = classic_rhs(&m, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
                let k3 = classic_rhs(&m, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
                let k4 = classic_rhs(&m, [y[0] + h * k3[0], y[1] + h * k3[1]]);
                for i in 0..2 {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                th.push(y[1]);
            }
            Ok(tail_mean(&th))
        }
        GapModel::Signal => {
            let src = ModulatedSource::new(LoopVariant::CONVENTIONAL_BPSK, exp.f0, exp.f0 / 4.0, PRBS_ZERO_SEED);
            let settings = LoopSettings { params: p, f_samp: exp.samples_per_carrier as f64 * exp.f0 };
            let run = run_loop(&src, &settings, exp.duration, &LockDetector::for_params(&p))?;
            Ok(tail_mean(&run.trace.theta_e))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub phase_model: f64,
    pub signal_model: f64,
    /// `signal − phase`.
    pub discrepancy: f64,
    /// Discrepancy reduced into (−π/2, π/2].
    pub discrepancy_mod_period: f64,
}

/// Steady phase error of the classic phase model against the signal-level
/// loop started from identical data.
pub fn averaging_gap_experiment(exp: &GapExperiment) -> Result<GapReport, SimError> {
    let a = steady_phase(exp, GapModel::Phase)?;
    let b = steady_phase(exp, GapModel::Signal)?;
    Ok(GapReport {
        phase_model: a,
        signal_model: b,
        discrepancy: b - a,
        discrepancy_mod_period: wrap_to_period(b - a, PI),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prbs_is_balanced_and_deterministic() {
        let mut a = Prbs::new(7);
        let mut b = Prbs::new(7);
        let xs: Vec<f64> = (0..10000).map(|_| a.next_symbol()).collect();
        let ys: Vec<f64> = (0..10000).map(|_| b.next_symbol()).collect();
        assert_eq!(xs, ys);
        let sum: f64 = xs.iter().sum();
        assert!(sum.abs() < 400.0);
        let mut z = Prbs::new(0);
        assert!((0..100).map(|_| z.next_symbol()).any(|s| s < 0.0));
    }

    #[test]
    fn hilbert_delay_builds_pre_envelope() {
        let p = analysis::design(&analysis::DesignSpec::new(400e3, 100e3, LoopVariant::MODIFIED_BPSK)).unwrap();
        let mut lp = DigitalLoop::new(p, LoopVariant::MODIFIED_BPSK, 12.8e6, 400e3).unwrap();
        assert_eq!(lp.hilbert_delay_samples, 8);
        assert!(DigitalLoop::new(p, LoopVariant::MODIFIED_BPSK, 3.0e6, 400e3).is_err());
        assert!(DigitalLoop::new(p, LoopVariant::MODIFIED_BPSK, 1.6e6, 400e3).is_err());
        let _ = lp.step(1.0);
    }

    #[test]
    fn centered_average_of_ramp() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = centered_average(&x, 4);
        assert!((y[10] - 9.5).abs() < 1e-12);
    }

    #[test]
    fn zero_offset_locks_fast() {
        let cfg = SignalSimConfig::designed(LoopVariant::CONVENTIONAL_BPSK, 400e3, 100e3, 8, 0.0, 1, 400e-6).unwrap();
        let run = run_config(&cfg).unwrap();
        assert!(run.result.locked);
        assert!(run.result.t_lock.unwrap() < 30e-6);
        assert_eq!(run.result.cycle_slips, 0);
        assert_eq!(demod_ber(&run, &cfg.source).unwrap(), 0.0);
    }

    #[test]
    fn determinism() {
        let cfg = SignalSimConfig::designed(LoopVariant::CONVENTIONAL_QPSK, 400e3, 100e3, 8, 30e3, 9, 200e-6).unwrap();
        let a = run_config(&cfg).unwrap();
        let b = run_config(&cfg).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn csv_header() {
        let cfg = SignalSimConfig::designed(LoopVariant::MODIFIED_QPSK, 400e3, 100e3, 32, 10e3, 9, 20e-6).unwrap();
        let mut c = cfg;
        c.detector.freq_window = 5e-6;
        let run = run_config(&c).unwrap();
        let csv = run.trace.to_csv(8);
        assert!(csv.starts_with("t,theta_e,u_d,u_f,omega2,I2,Q2\n"));
        assert_eq!(csv.lines().count(), 1 + run.trace.t.len().div_ceil(8));
    }

    #[test]
    fn unlocked_ber_is_an_error() {
        let mut cfg = SignalSimConfig::designed(LoopVariant::CONVENTIONAL_BPSK, 400e3, 100e3, 8, 300e3, 1, 100e-6).unwrap();
        cfg.detector.freq_window = 50e-6;
        let run = run_config(&cfg).unwrap();
        assert!(!run.result.locked);
        assert_eq!(demod_ber(&run, &cfg.source), Err(SimError::NotLocked));
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let cfg = SignalSimConfig::designed(LoopVariant::CONVENTIONAL_BPSK, 400e3, 100e3, 8, 0.0, 1, 1e-4).unwrap();
        let mut v = serde_json::to_value(cfg).unwrap();
        let back: SignalSimConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, cfg);
        v["source"]["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<SignalSimConfig>(v).is_err());
    }

    #[test]
    fn self_comparison_is_exact() {
        let mut e = GapExperiment::reference();
        e.duration = 20e-6;
        assert_eq!(steady_phase(&e, GapModel::Phase).unwrap(), steady_phase(&e, GapModel::Phase).unwrap());
    }
}
