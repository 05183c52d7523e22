//! Fixed-step RK4 and adaptive Dormand–Prince integration of the baseband
//! models, with lock / cycle-slip / blow-up events, plus the step-size probe
//! and the phase-portrait harness.

use crate::baseband::{averaged_rhs, classic_rhs, delay_rhs, AveragedModel, ClassicPhaseModel, DelayModel, LoopFilterKind};
use crate::core_types::wrap_to_period;
use crate::export::{fmt_num, CsvTable};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("invalid integrator config: {0}")]
    Config(String),
    #[error("step size underflow at t = {t} (h = {h}); problem is too stiff for the adaptive solver")]
    Stiffness { t: f64, h: f64 },
    #[error("right-hand side is not finite at the initial state")]
    NonFiniteStart,
    #[error("right-hand side failed at t = {t}: {message}")]
    Rhs { t: f64, message: String },
}

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum Method {
    #[serde(rename = "RK4-fixed")]
    Rk4Fixed { h: f64 },
    #[serde(rename = "RK45-adaptive")]
    Rk45Adaptive { h_min: f64, h_max: f64, rtol: f64, atol: f64 },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    #[serde(flatten)]
    pub method: Method,
    pub t_end: f64,
    /// Keep every n-th accepted step in the trajectory.
    #[serde(default = "one")]
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn rk4(h: f64, t_end: f64) -> Self {
        IntegratorConfig { method: Method::Rk4Fixed { h }, t_end, record_stride: 1 }
    }

    pub fn rk45(rtol: f64, atol: f64, h_min: f64, h_max: f64, t_end: f64) -> Self {
        IntegratorConfig { method: Method::Rk45Adaptive { h_min, h_max, rtol, atol }, t_end, record_stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: String| Err(OdeError::Config(m));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        match self.method {
            Method::Rk4Fixed { h } if !(h > 0.0 && h.is_finite()) => bad(format!("h must be positive, got {h}")),
            Method::Rk45Adaptive { h_min, h_max, rtol, atol } => {
                if !(rtol > 0.0 && atol > 0.0) {
                    bad(format!("rtol and atol must be positive, got {rtol}, {atol}"))
                } else if !(h_min > 0.0 && h_max >= h_min) {
                    bad(format!("need 0 < h_min <= h_max, got {h_min}, {h_max}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Right-hand side `dy = f(t, y)`.
pub trait OdeRhs {
    fn dim(&self) -> usize;
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError>;
}

/// Wraps a closure as an [`OdeRhs`].
pub struct FnRhs<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> FnRhs<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnRhs { dim, f }
    }
}

impl<F: FnMut(f64, &[f64], &mut [f64])> OdeRhs for FnRhs<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
        (self.f)(t, y, dy);
        Ok(())
    }
}

/// Classic phase model on `[x, θe]`.
pub struct ClassicRhs(pub ClassicPhaseModel);

impl OdeRhs for ClassicRhs {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&mut self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
        let d = classic_rhs(&self.0, [y[0], y[1]]);
        dy.copy_from_slice(&d);
        Ok(())
    }
}

/// Delay model on `[x, θe]`; remembers the last phase rate as the seed of the
/// implicit solve.
pub struct DelayRhs {
    pub model: DelayModel,
    last_rate: f64,
}

impl DelayRhs {
    pub fn new(model: DelayModel) -> Self {
        DelayRhs { last_rate: model.params.delta_omega0, model }
    }
}

impl OdeRhs for DelayRhs {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
        let (d, v) = delay_rhs(&self.model, [y[0], y[1]], self.last_rate)
            .map_err(|e| OdeError::Rhs { t, message: e.to_string() })?;
        self.last_rate = v;
        dy.copy_from_slice(&d);
        Ok(())
    }
}

/// Averaged beat-frequency model on `[Δω]`.
pub struct AveragedRhs(pub AveragedModel);

impl OdeRhs for AveragedRhs {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
        dy[0] = averaged_rhs(&self.0, y[0]).map_err(|e| OdeError::Rhs { t, message: e.to_string() })?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Lock,
    CycleSlip,
    BlowUp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub t: f64,
    pub state: Vec<f64>,
}

/// What counts as lock, slip and blow-up for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub theta_index: usize,
    pub period: f64,
    /// Phase error of the locked equilibrium.
    pub reference: f64,
    pub tol_f: f64,
    pub tol_p: f64,
    /// How long the lock condition must hold.
    pub sustain: f64,
    pub stop_on_lock: bool,
    pub blow_up_limit: f64,
}

impl EventSpec {
    /// Defaults for a two-state phase model: `tol_f = 1e-3·ωn` with a PI
    /// filter (`1e-3·K0` with a lead-lag filter), `tol_p = 0.05` rad and a
    /// sustain window of four natural periods.
    pub fn for_classic(model: &ClassicPhaseModel) -> Self {
        let p = &model.params;
        let tol_f = match model.filter {
            LoopFilterKind::Pi => 1e-3 * p.omega_n,
            LoopFilterKind::LeadLag => 1e-3 * p.k0,
        };
        EventSpec {
            theta_index: 1,
            period: model.pd.period(),
            reference: model.lock_phase().unwrap_or(0.0),
            tol_f,
            tol_p: 0.05,
            sustain: 4.0 * 2.0 * PI / p.omega_n,
            stop_on_lock: false,
            blow_up_limit: 1e12,
        }
    }

    fn cell(&self, theta: f64) -> i64 {
        ((theta - self.reference) / self.period + 0.5).floor() as i64
    }

    fn lock_condition(&self, theta: f64, rate: f64) -> bool {
        rate.abs() < self.tol_f && wrap_to_period(theta - self.reference, self.period).abs() < self.tol_p
    }
}

/// Accepted steps, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub dim: usize,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Trajectory {
    fn push(&mut self, t: f64, y: &[f64]) {
        self.t.push(t);
        self.y.extend_from_slice(y);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.y[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.y[i * self.dim + k]).collect()
    }

    /// CSV `t,x,theta_e` of a two-state trajectory.
    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(&["t", "x", "theta_e"]);
        for i in 0..self.len() {
            let s = self.state(i);
            table.row(vec![fmt_num(self.t[i]), fmt_num(s[0]), fmt_num(s[1])]);
        }
        table.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub events: Vec<Event>,
    pub t_final: f64,
    pub final_state: Vec<f64>,
    pub final_rate: Vec<f64>,
    /// Lock condition held over the final sustain window.
    pub locked_at_end: bool,
    pub t_lock: Option<f64>,
    pub cycle_slips: usize,
    pub halted: bool,
    pub steps: usize,
}

impl Solution {
    pub fn blew_up(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::BlowUp)
    }
}

/// Local interpolant over one accepted step.
enum Dense<'a> {
    Hermite { y0: &'a [f64], f0: &'a [f64], y1: &'a [f64], f1: &'a [f64] },
    Dopri { r: &'a [[f64; 5]] },
}

impl Dense<'_> {
    fn eval(&self, k: usize, s: f64, h: f64) -> f64 {
        match self {
            Dense::Hermite { y0, f0, y1, f1 } => {
                let (s2, s3) = (s * s, s * s * s);
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k]
            }
            Dense::Dopri { r } => {
                let r = &r[k];
                let s1 = 1.0 - s;
                r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * r[4])))
            }
        }
    }
}

struct EventTracker {
    spec: Option<EventSpec>,
    events: Vec<Event>,
    cond_since: Option<(f64, Vec<f64>)>,
    lock_fired: bool,
    t_lock: Option<f64>,
    slips: usize,
}

impl EventTracker {
    fn new(spec: Option<EventSpec>) -> Self {
        EventTracker { spec, events: Vec::new(), cond_since: None, lock_fired: false, t_lock: None, slips: 0 }
    }

    fn start(&mut self, t: f64, y: &[f64], f: &[f64]) {
        if let Some(s) = self.spec {
            let k = s.theta_index;
            if s.lock_condition(y[k], f[k]) {
                self.cond_since = Some((t, y.to_vec()));
            }
        }
    }

    /// Returns true when integration should halt.
    fn after_step(&mut self, t0: f64, h: f64, y0: &[f64], y1: &[f64], f1: &[f64], dense: &Dense) -> bool {
        let t1 = t0 + h;
        let limit = self.spec.map_or(f64::INFINITY, |s| s.blow_up_limit);
        if y1.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            self.events.push(Event { kind: EventKind::BlowUp, t: t1, state: y1.to_vec() });
            return true;
        }
        let Some(s) = self.spec else { return false };
        let k = s.theta_index;
        let (c0, c1) = (s.cell(y0[k]), s.cell(y1[k]));
        if c0 != c1 {
            let dir = (c1 - c0).signum();
            let mut c = c0;
            while c != c1 {
                let boundary = s.reference + (c as f64 + 0.5 * dir as f64) * s.period;
                let g = |u: f64| dense.eval(k, u, h) - boundary;
                let (mut lo, mut hi) = (0.0, 1.0);
                let glo = g(lo);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if (g(mid) > 0.0) == (glo > 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let u = 0.5 * (lo + hi);
                let state = (0..y0.len()).map(|j| dense.eval(j, u, h)).collect();
                self.events.push(Event { kind: EventKind::CycleSlip, t: t0 + u * h, state });
                self.slips += 1;
                c += dir;
            }
            self.cond_since = None;
            self.lock_fired = false;
        }
        if s.lock_condition(y1[k], f1[k]) {
            if self.cond_since.is_none() {
                self.cond_since = Some((t1, y1.to_vec()));
            }
            let (since, state) = self.cond_since.as_ref().expect("set above");
            if !self.lock_fired && t1 - since >= s.sustain {
                self.lock_fired = true;
                self.t_lock = Some(*since);
                self.events.push(Event { kind: EventKind::Lock, t: *since, state: state.clone() });
                if s.stop_on_lock {
                    return true;
                }
            }
        } else {
            self.cond_since = None;
            self.lock_fired = false;
        }
        false
    }
}

/// Integrates from `t = 0`.
pub fn integrate<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    state0: &[f64],
    config: &IntegratorConfig,
    events: Option<EventSpec>,
) -> Result<Solution, OdeError> {
    integrate_from(rhs, 0.0, state0, config, events)
}

/// Integrates from `t0` to `config.t_end`.
pub fn integrate_from<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    t0: f64,
    state0: &[f64],
    config: &IntegratorConfig,
    events: Option<EventSpec>,
) -> Result<Solution, OdeError> {
    config.validate()?;
    let n = rhs.dim();
    if state0.len() != n {
        return Err(OdeError::Config(format!("state has {} components, model expects {n}", state0.len())));
    }
    if !(config.t_end > t0) {
        return Err(OdeError::Config(format!("t_end = {} must exceed t0 = {t0}", config.t_end)));
    }
    let mut f0 = vec![0.0; n];
    rhs.eval(t0, state0, &mut f0).map_err(|_| OdeError::NonFiniteStart)?;
    if state0.iter().chain(f0.iter()).any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteStart);
    }
    let mut tracker = EventTracker::new(events);
    tracker.start(t0, state0, &f0);
    let mut traj = Trajectory { dim: n, ..Default::default() };
    traj.push(t0, state0);
    let (t, y, f, steps, halted) = match config.method {
        Method::Rk4Fixed { h } => rk4_loop(rhs, t0, state0, f0, h, config, &mut tracker, &mut traj)?,
        Method::Rk45Adaptive { h_min, h_max, rtol, atol } => {
            dopri_loop(rhs, t0, state0, f0, (h_min, h_max, rtol, atol), config, &mut tracker, &mut traj)?
        }
    };
    if traj.t.last() != Some(&t) {
        traj.push(t, &y);
    }
    let locked_at_end = match (events, &tracker.cond_since) {
        (Some(s), Some((since, _))) => t - since >= s.sustain,
        _ => false,
    };
    Ok(Solution {
        trajectory: traj,
        events: tracker.events,
        t_final: t,
        final_state: y,
        final_rate: f,
        locked_at_end,
        t_lock: tracker.t_lock,
        cycle_slips: tracker.slips,
        halted,
        steps,
    })
}

type LoopOut = (f64, Vec<f64>, Vec<f64>, usize, bool);

#[allow(clippy::too_many_arguments)]
fn rk4_loop<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    t0: f64,
    state0: &[f64],
    f0: Vec<f64>,
    h: f64,
    config: &IntegratorConfig,
    tracker: &mut EventTracker,
    traj: &mut Trajectory,
) -> Result<LoopOut, OdeError> {
    let n = state0.len();
    let total = ((config.t_end - t0) / h - 1e-9).ceil().max(1.0) as usize;
    let mut y = state0.to_vec();
    let mut f = f0;
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut t = t0;
    for step in 0..total {
        let hh = if step + 1 == total { config.t_end - t } else { h };
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * hh * f[i];
        }
        rhs.eval(t + 0.5 * hh, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * hh * k2[i];
        }
        rhs.eval(t + 0.5 * hh, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + hh * k3[i];
        }
        rhs.eval(t + hh, &tmp, &mut k4)?;
        for i in 0..n {
            y1[i] = y[i] + hh / 6.0 * (f[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let finite = y1.iter().all(|v| v.is_finite());
        if finite {
            rhs.eval(t + hh, &y1, &mut f1)?;
        } else {
            f1.iter_mut().for_each(|v| *v = f64::NAN);
        }
        let dense = Dense::Hermite { y0: &y, f0: &f, y1: &y1, f1: &f1 };
        let halt = tracker.after_step(t, hh, &y, &y1, &f1, &dense);
        t += hh;
        std::mem::swap(&mut y, &mut y1);
        std::mem::swap(&mut f, &mut f1);
        if (step + 1) % config.record_stride == 0 {
            traj.push(t, &y);
        }
        if halt {
            return Ok((t, y, f, step + 1, true));
        }
    }
    Ok((t, y, f, total, false))
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[allow(clippy::too_many_arguments)]
fn dopri_loop<R: OdeRhs + ?Sized>(
    rhs: &mut R,
    t0: f64,
    state0: &[f64],
    f0: Vec<f64>,
    (h_min, h_max, rtol, atol): (f64, f64, f64, f64),
    config: &IntegratorConfig,
    tracker: &mut EventTracker,
    traj: &mut Trajectory,
) -> Result<LoopOut, OdeError> {
    let n = state0.len();
    let mut y = state0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = f0;
    let mut tmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut r = vec![[0.0; 5]; n];
    let mut t = t0;
    let mut h = h_max.min((config.t_end - t0) / 100.0).max(h_min);
    let mut accepted = 0usize;
    while t < config.t_end {
        let last = t + h >= config.t_end * (1.0 - 1e-15);
        if last {
            h = config.t_end - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * k[j][i];
                }
                tmp[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            rhs.eval(t + C[s] * h, &tmp, &mut tail[0])?;
            if s == 6 {
                y1.copy_from_slice(&tmp);
            }
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            let sc = atol + rtol * y[i].abs().max(y1[i].abs());
            err += (h * e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            if y1.iter().any(|v| !v.is_finite()) && h <= h_min {
                let dense = Dense::Hermite { y0: &y, f0: &k[0], y1: &y1, f1: &k[6] };
                tracker.after_step(t, h, &y, &y1, &k[6], &dense);
                return Ok((t + h, y1, k[6].clone(), accepted, true));
            }
            if h <= h_min {
                return Err(OdeError::Stiffness { t, h });
            }
            h = (0.2 * h).max(h_min);
            continue;
        }
        if err <= 1.0 {
            for i in 0..n {
                let dy = y1[i] - y[i];
                let bspl = h * k[0][i] - dy;
                let mut r5 = 0.0;
                for j in 0..7 {
                    r5 += D[j] * k[j][i];
                }
                r[i] = [y[i], dy, bspl, dy - h * k[6][i] - bspl, h * r5];
            }
            let dense = Dense::Dopri { r: &r };
            let halt = tracker.after_step(t, h, &y, &y1, &k[6], &dense);
            t = if last { config.t_end } else { t + h };
            std::mem::swap(&mut y, &mut y1);
            k.swap(0, 6);
            accepted += 1;
            if accepted.is_multiple_of(config.record_stride) {
                traj.push(t, &y);
            }
            if halt {
                return Ok((t, y, k[0].clone(), accepted, true));
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(h_max).max(h_min);
        } else {
            if h <= h_min {
                return Err(OdeError::Stiffness { t, h });
            }
            h = (h * (0.9 * err.powf(-0.2)).max(0.2)).max(h_min);
        }
    }
    Ok((t, y, k[0].clone(), accepted, false))
}

/// Verdict of one fixed-step run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepVerdict {
    pub h: f64,
    pub locked: bool,
    pub t_lock: Option<f64>,
    pub cycle_slips: usize,
    /// Mean phase-error rate over the last 20% of the run.
    pub mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub t_end: f64,
    pub fixed: Vec<StepVerdict>,
    pub rk45_default_locked: bool,
    pub rk45_tight_locked: bool,
    /// Default and 10x-tightened adaptive runs disagree on lock.
    pub solver_sensitive: bool,
}

fn verdict_of(sol: &Solution, h: f64) -> StepVerdict {
    let tr = &sol.trajectory;
    let t_end = sol.t_final;
    let i0 = tr.t.partition_point(|&t| t < 0.8 * t_end).min(tr.len() - 1);
    let th0 = tr.state(i0)[1];
    let mean_rate = (sol.final_state[1] - th0) / (t_end - tr.t[i0]).max(f64::MIN_POSITIVE);
    StepVerdict { h, locked: sol.locked_at_end, t_lock: sol.t_lock, cycle_slips: sol.cycle_slips, mean_rate }
}

/// Adaptive tolerances used as the "default" solver setting.
pub const RK45_DEFAULT_RTOL: f64 = 1e-3;
pub const RK45_DEFAULT_ATOL: f64 = 1e-6;

/// Runs the classic phase model with every fixed step in `h_list`, then with
/// the adaptive solver at default and 10x-tightened tolerances.
pub fn step_sensitivity_probe(
    model: &ClassicPhaseModel,
    state0: [f64; 2],
    h_list: &[f64],
    t_end: f64,
) -> Result<ProbeReport, OdeError> {
    let spec = EventSpec::for_classic(model);
    let run = |cfg: IntegratorConfig| -> Result<Solution, OdeError> {
        integrate(&mut ClassicRhs(*model), &state0, &cfg, Some(spec))
    };
    let fixed = h_list
        .par_iter()
        .map(|&h| {
            let stride = ((t_end / h) / 2000.0).ceil().max(1.0) as usize;
            run(IntegratorConfig::rk4(h, t_end).with_stride(stride)).map(|s| verdict_of(&s, h))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let h_max = t_end / 50.0;
    let h_min = 1e-12 * t_end;
    let d = run(IntegratorConfig::rk45(RK45_DEFAULT_RTOL, RK45_DEFAULT_ATOL, h_min, h_max, t_end))?;
    let tight = run(IntegratorConfig::rk45(RK45_DEFAULT_RTOL / 10.0, RK45_DEFAULT_ATOL / 10.0, h_min, h_max, t_end))?;
    Ok(ProbeReport {
        t_end,
        fixed,
        rk45_default_locked: d.locked_at_end,
        rk45_tight_locked: tight.locked_at_end,
        solver_sensitive: d.locked_at_end != tight.locked_at_end,
    })
}

/// Limit-set class of one portrait trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitClass {
    Eq,
    Cycle,
    Undecided,
}

impl LimitClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LimitClass::Eq => "eq",
            LimitClass::Cycle => "cycle",
            LimitClass::Undecided => "undecided",
        }
    }
}

/// Grid of initial conditions and integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitConfig {
    pub x_range: (f64, f64),
    pub theta_range: (f64, f64),
    pub nx: usize,
    pub ntheta: usize,
    pub t_end: f64,
    pub h: f64,
    /// Bisection steps per eq/cycle boundary; zero disables the search.
    pub bisection_steps: usize,
    /// Points kept per exported trajectory.
    pub export_points: usize,
}

impl PortraitConfig {
    pub fn validate(&self) -> Result<(), OdeError> {
        if self.nx == 0 || self.ntheta == 0 {
            return Err(OdeError::Config("portrait grid is empty".into()));
        }
        if !(self.h > 0.0 && self.t_end > self.h) {
            return Err(OdeError::Config(format!("need 0 < h < t_end, got h = {}, t_end = {}", self.h, self.t_end)));
        }
        if self.export_points < 2 {
            return Err(OdeError::Config("export_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn initial_states(&self) -> Vec<[f64; 2]> {
        let lin = |(a, b): (f64, f64), n: usize, i: usize| if n == 1 { 0.5 * (a + b) } else { a + (b - a) * i as f64 / (n - 1) as f64 };
        let mut out = Vec::with_capacity(self.nx * self.ntheta);
        for i in 0..self.nx {
            for j in 0..self.ntheta {
                out.push([lin(self.x_range, self.nx, i), lin(self.theta_range, self.ntheta, j)]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortraitTrajectory {
    pub state0: [f64; 2],
    pub class: LimitClass,
    pub final_state: [f64; 2],
    pub mean_rate: f64,
    pub autocorr_peak: f64,
    #[serde(skip)]
    pub samples: Trajectory,
}

/// Point pair straddling the boundary between the lock basin and the basin of
/// the running cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub eq_side: [f64; 2],
    pub cycle_side: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortraitResult {
    pub trajectories: Vec<PortraitTrajectory>,
    pub boundary: Vec<BoundaryPoint>,
    pub has_eq: bool,
    pub has_cycle: bool,
    /// Some initial state never locks, so the offset is outside the pull-in range.
    pub outside_pull_in: bool,
    /// Mean phase-error rate of the attracting cycle, if one was seen.
    pub cycle_rate: Option<f64>,
}

impl PortraitResult {
    /// CSV `t,x,theta_e,class`; trajectories follow one another in grid order.
    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(&["t", "x", "theta_e", "class"]);
        for tr in &self.trajectories {
            for i in 0..tr.samples.len() {
                let s = tr.samples.state(i);
                table.row(vec![
                    fmt_num(tr.samples.t[i]),
                    fmt_num(s[0]),
                    fmt_num(s[1]),
                    tr.class.as_str().to_string(),
                ]);
            }
        }
        table.finish()
    }
}

/// Largest normalized autocorrelation of `v` at lags past its first zero
/// crossing, up to half the record.
pub fn autocorr_peak(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 8 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let a: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let energy: f64 = a.iter().map(|x| x * x).sum();
    if energy <= 1e-300 * n as f64 {
        return 0.0;
    }
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let mut head = vec![0.0; n + 1];
    for i in 0..n {
        head[i + 1] = head[i] + a[i] * a[i];
    }
    let pearson = |lag: usize| {
        let num = buf[lag].re / m as f64;
        let e1 = head[n - lag];
        let e2 = head[n] - head[lag];
        num / (e1 * e2).sqrt().max(1e-300)
    };
    let mut lag = 1;
    while lag < n / 2 && pearson(lag) > 0.0 {
        lag += 1;
    }
    (lag..=n / 2).map(pearson).fold(f64::NEG_INFINITY, f64::max).max(-1.0)
}

fn classify(model: &ClassicPhaseModel, state0: [f64; 2], cfg: &PortraitConfig) -> Result<PortraitTrajectory, OdeError> {
    let spec = EventSpec::for_classic(model);
    let split = 0.8 * cfg.t_end;
    let total_steps = (cfg.t_end / cfg.h).ceil() as usize;
    let stride = (total_steps / cfg.export_points).max(1);
    let head = integrate(
        &mut ClassicRhs(*model),
        &state0,
        &IntegratorConfig::rk4(cfg.h, split).with_stride(stride),
        Some(spec),
    )?;
    let mut samples = head.trajectory.clone();
    let tail = integrate_from(
        &mut ClassicRhs(*model),
        split,
        &head.final_state,
        &IntegratorConfig::rk4(cfg.h, cfg.t_end),
        Some(spec),
    )?;
    let tt = &tail.trajectory;
    for i in (stride..tt.len()).step_by(stride) {
        samples.push(tt.t[i], tt.state(i));
    }
    if samples.t.last() != Some(&tail.t_final) {
        samples.push(tail.t_final, &tail.final_state);
    }
    let rates: Vec<f64> = (0..tt.len()).map(|i| classic_rhs(model, [tt.state(i)[0], tt.state(i)[1]])[1]).collect();
    let fin = [tail.final_state[0], tail.final_state[1]];
    let advance = fin[1] - head.final_state[1];
    let mean_rate = advance / (tail.t_final - split);
    let peak = autocorr_peak(&rates);
    let class = if tail.blew_up() {
        LimitClass::Undecided
    } else if tail.locked_at_end && tail.cycle_slips == 0 {
        LimitClass::Eq
    } else if advance.abs() > spec.period && peak > 0.99 {
        LimitClass::Cycle
    } else {
        LimitClass::Undecided
    };
    Ok(PortraitTrajectory { state0, class, final_state: fin, mean_rate, autocorr_peak: peak, samples })
}

/// Integrates a grid of initial states, classifies each limit set and
/// bisects between neighbouring eq/cycle states to bracket the basin boundary.
pub fn phase_portrait(model: &ClassicPhaseModel, cfg: &PortraitConfig) -> Result<PortraitResult, OdeError> {
    cfg.validate()?;
    let grid = cfg.initial_states();
    let trajectories = grid
        .par_iter()
        .map(|&s| classify(model, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let idx = |i: usize, j: usize| i * cfg.ntheta + j;
    let mut pairs = Vec::new();
    for i in 0..cfg.nx {
        for j in 0..cfg.ntheta {
            let here = trajectories[idx(i, j)].class;
            let mut consider = |other: usize| {
                let o = trajectories[other].class;
                match (here, o) {
                    (LimitClass::Eq, LimitClass::Cycle) => pairs.push((grid[idx(i, j)], grid[other])),
                    (LimitClass::Cycle, LimitClass::Eq) => pairs.push((grid[other], grid[idx(i, j)])),
                    _ => {}
                }
            };
            if j + 1 < cfg.ntheta {
                consider(idx(i, j + 1));
            }
            if i + 1 < cfg.nx {
                consider(idx(i + 1, j));
            }
        }
    }
    let boundary = if cfg.bisection_steps == 0 {
        Vec::new()
    } else {
        pairs
            .par_iter()
            .map(|&(mut eq, mut cy)| -> Result<BoundaryPoint, OdeError> {
                for _ in 0..cfg.bisection_steps {
                    let mid = [0.5 * (eq[0] + cy[0]), 0.5 * (eq[1] + cy[1])];
                    match classify(model, mid, cfg)?.class {
                        LimitClass::Eq => eq = mid,
                        LimitClass::Cycle => cy = mid,
                        LimitClass::Undecided => break,
                    }
                }
                Ok(BoundaryPoint { eq_side: eq, cycle_side: cy })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let has_eq = trajectories.iter().any(|t| t.class == LimitClass::Eq);
    let has_cycle = trajectories.iter().any(|t| t.class == LimitClass::Cycle);
    let cycle_rates: Vec<f64> = trajectories.iter().filter(|t| t.class == LimitClass::Cycle).map(|t| t.mean_rate).collect();
    let cycle_rate = (!cycle_rates.is_empty()).then(|| cycle_rates.iter().sum::<f64>() / cycle_rates.len() as f64);
    Ok(PortraitResult {
        outside_pull_in: trajectories.iter().any(|t| t.class != LimitClass::Eq),
        trajectories,
        boundary,
        has_eq,
        has_cycle,
        cycle_rate,
    })
}

/// Example setup with a lead-lag filter in which coarse fixed steps report
/// lock while converged integration runs into a cycle.
pub mod example_semistable {
    use super::*;
    use crate::core_types::{LoopParams, LoopVariant};
    use crate::detectors::PdCharacteristic;

    pub const K0: f64 = 1000.0;
    pub const OMEGA1: f64 = 10000.0;
    pub const DELTA_OMEGA0: f64 = 89.45;
    pub const TAU1: f64 = 0.336;
    pub const TAU2: f64 = 0.0046;
    pub const X0: f64 = 0.0125;
    pub const THETA0: f64 = -3.4035;
    pub const T_END: f64 = 300.0;

    pub fn params(delta_omega0: f64) -> LoopParams {
        LoopParams::derived(OMEGA1, OMEGA1 - delta_omega0, K0, 1.0, TAU1, TAU2, None)
    }

    pub fn model(delta_omega0: f64) -> ClassicPhaseModel {
        let pd = PdCharacteristic::new(LoopVariant::CONVENTIONAL_BPSK, 1.0).expect("unit amplitude");
        ClassicPhaseModel::new(params(delta_omega0), pd).with_filter(LoopFilterKind::LeadLag)
    }

    pub fn state0() -> [f64; 2] {
        [X0, THETA0]
    }

    pub fn portrait_config() -> PortraitConfig {
        PortraitConfig {
            x_range: (-0.05, 0.1),
            theta_range: (-PI, PI),
            nx: 7,
            ntheta: 9,
            t_end: 100.0,
            h: 1e-3,
            bisection_steps: 6,
            export_points: 400,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator() -> FnRhs<impl FnMut(f64, &[f64], &mut [f64])> {
        FnRhs::new(2, |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        })
    }

    #[test]
    fn rk4_energy_drift() {
        let period = 2.0 * PI;
        let cfg = IntegratorConfig::rk4(1e-3 * period, 10.0 * period).with_stride(1000);
        let sol = integrate(&mut oscillator(), &[1.0, 0.0], &cfg, None).unwrap();
        let e = 0.5 * (sol.final_state[0].powi(2) + sol.final_state[1].powi(2));
        assert!((e - 0.5).abs() < 1e-8);
    }

    #[test]
    fn dopri_accuracy_and_dense_output() {
        let cfg = IntegratorConfig::rk45(1e-10, 1e-12, 1e-12, 1.0, 10.0);
        let sol = integrate(&mut oscillator(), &[1.0, 0.0], &cfg, None).unwrap();
        assert!((sol.final_state[0] - 10f64.cos()).abs() < 1e-8);
        assert!((sol.final_state[1] + 10f64.sin()).abs() < 1e-8);
        // dense output between two nodes
        let y0 = [1.0, 0.0];
        let h = 0.1;
        let mut k = vec![vec![0.0; 2]; 7];
        let mut o = oscillator();
        o.eval(0.0, &y0, &mut k[0]).unwrap();
        let mut tmp = [0.0; 2];
        for s in 1..7 {
            for i in 0..2 {
                tmp[i] = y0[i] + (0..s).map(|j| h * A[s][j] * k[j][i]).sum::<f64>();
            }
            let mut d = vec![0.0; 2];
            o.eval(C[s] * h, &tmp, &mut d).unwrap();
            k[s] = d;
        }
        let y1 = tmp;
        let r: Vec<[f64; 5]> = (0..2)
            .map(|i| {
                let dy = y1[i] - y0[i];
                let b = h * k[0][i] - dy;
                [y0[i], dy, b, dy - h * k[6][i] - b, h * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>()]
            })
            .collect();
        let dense = Dense::Dopri { r: &r };
        for s in [0.25, 0.5, 0.75] {
            let e = (dense.eval(0, s, h) - (s * h).cos()).abs();
            assert!(e < 1e-8, "{s} {e}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::rk4(0.0, 1.0).validate().is_err());
        assert!(IntegratorConfig::rk45(1e-3, 1e-6, 1.0, 0.5, 1.0).validate().is_err());
        assert!(IntegratorConfig::rk45(0.0, 1e-6, 1e-6, 0.5, 1.0).validate().is_err());
        let json = serde_json::to_string(&IntegratorConfig::rk4(0.01, 1.0)).unwrap();
        assert!(json.contains("RK4-fixed"));
        let back: IntegratorConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, IntegratorConfig::rk4(0.01, 1.0));
    }

    #[test]
    fn blow_up_halts() {
        let mut r = FnRhs::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        let spec = EventSpec {
            theta_index: 0,
            period: PI,
            reference: 0.0,
            tol_f: 1e-3,
            tol_p: 0.05,
            sustain: 1.0,
            stop_on_lock: false,
            blow_up_limit: 1e12,
        };
        let sol = integrate(&mut r, &[1.0], &IntegratorConfig::rk4(1e-3, 2.0), Some(spec)).unwrap();
        assert!(sol.halted && sol.blew_up());
        assert!(sol.t_final < 1.01);
    }

    #[test]
    fn slip_events_are_localized() {
        // θ grows at unit rate: boundaries at π/2 + kπ
        let mut r = FnRhs::new(1, |_t, _y: &[f64], dy: &mut [f64]| dy[0] = 1.0);
        let spec = EventSpec {
            theta_index: 0,
            period: PI,
            reference: 0.0,
            tol_f: 1e-3,
            tol_p: 0.05,
            sustain: 1.0,
            stop_on_lock: false,
            blow_up_limit: 1e12,
        };
        let sol = integrate(&mut r, &[0.0], &IntegratorConfig::rk4(0.1, 10.0), Some(spec)).unwrap();
        let slips: Vec<f64> = sol.events.iter().filter(|e| e.kind == EventKind::CycleSlip).map(|e| e.t).collect();
        assert_eq!(slips.len(), 3);
        for (k, t) in slips.iter().enumerate() {
            assert!((t - (PI / 2.0 + k as f64 * PI)).abs() < 1e-9);
        }
        assert!(sol.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn autocorrelation_detects_periodicity() {
        let v: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.05).sin() + 0.3 * (i as f64 * 0.1).cos()).collect();
        assert!(autocorr_peak(&v) > 0.99);
        let mut s = 1u64;
        let noise: Vec<f64> = (0..4000)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        assert!(autocorr_peak(&noise) < 0.5);
        assert_eq!(autocorr_peak(&vec![1.0; 100]), 0.0);
    }

    #[test]
    fn zero_offset_portrait_all_lock() {
        let m = example_semistable::model(0.0);
        let cfg = PortraitConfig {
            x_range: (-0.01, 0.01),
            theta_range: (-0.3, 0.3),
            nx: 3,
            ntheta: 3,
            t_end: 20.0,
            h: 2e-3,
            bisection_steps: 0,
            export_points: 50,
        };
        let r = phase_portrait(&m, &cfg).unwrap();
        assert!(r.trajectories.iter().all(|t| t.class == LimitClass::Eq));
        assert!(!r.outside_pull_in);
        let csv = r.to_csv();
        assert!(csv.starts_with("t,x,theta_e,class\n"));
    }
}
