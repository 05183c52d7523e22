//! Baseband dynamical models: the classic phase-domain ODE, the delay model
//! with a frequency-dependent LPF phase lag, and the averaged pull-in model.
//!
//! Two-state models use the state vector `[x, θe]` where `x` is the loop
//! filter state.

use crate::core_types::{LoopParams, LoopTag, LoopVariant, PdFlavor};
use crate::detectors::PdCharacteristic;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasebandError {
    #[error("averaged model is singular at delta_omega = 0")]
    Singular,
    #[error("averaged model needs delta_omega > 0, got {0}")]
    NegativeOffset(f64),
    #[error("implicit phase-rate equation did not converge")]
    ImplicitSolve,
    #[error("model needs the LPF corner omega3")]
    MissingOmega3,
}

/// Loop filter realization used by the phase model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopFilterKind {
    /// `(1 + sτ2)/(sτ1)`: `ẋ = φ`, `uf = x/τ1 + (τ2/τ1)·φ`.
    Pi,
    /// `(1 + sτ2)/(1 + sτ1)`: `ẋ = −x/τ1 + φ`, `uf = (1 − τ2/τ1)·x/τ1 + (τ2/τ1)·φ`.
    LeadLag,
}

impl LoopFilterKind {
    /// Filter output for state `x` and input `phi`.
    pub fn output(self, p: &LoopParams, x: f64, phi: f64) -> f64 {
        match self {
            LoopFilterKind::Pi => x / p.tau1 + p.k_h() * phi,
            LoopFilterKind::LeadLag => (1.0 - p.k_h()) * x / p.tau1 + p.k_h() * phi,
        }
    }

    /// `ẋ` for state `x` and input `phi`.
    pub fn state_rate(self, p: &LoopParams, x: f64, phi: f64) -> f64 {
        match self {
            LoopFilterKind::Pi => phi,
            LoopFilterKind::LeadLag => -x / p.tau1 + phi,
        }
    }
}

/// Classic phase-domain model `(x, θe)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicPhaseModel {
    pub params: LoopParams,
    pub pd: PdCharacteristic,
    pub filter: LoopFilterKind,
}

impl ClassicPhaseModel {
    pub fn new(params: LoopParams, pd: PdCharacteristic) -> Self {
        ClassicPhaseModel { params, pd, filter: LoopFilterKind::Pi }
    }

    pub fn with_filter(mut self, filter: LoopFilterKind) -> Self {
        self.filter = filter;
        self
    }

    /// Loop filter output for state `x` and detector output `phi`.
    pub fn filter_output(&self, x: f64, phi: f64) -> f64 {
        self.filter.output(&self.params, x, phi)
    }

    /// Phase error of the stable equilibrium nearest zero, or `None` when the
    /// detuning exceeds what the detector can hold.
    pub fn lock_phase(&self) -> Option<f64> {
        match self.filter {
            LoopFilterKind::Pi => Some(0.0),
            LoopFilterKind::LeadLag => {
                let target = self.params.delta_omega0 / self.params.k0;
                let half = if self.pd.variant.tag() == LoopTag::ConventionalBpsk {
                    0.25 * self.pd.period()
                } else {
                    0.5 * self.pd.period()
                };
                let (mut lo, mut hi) = (-half, half);
                let f = |th: f64| self.pd.phi(th) - target;
                if f(lo) > 0.0 || f(hi * (1.0 - 1e-12)) < 0.0 {
                    return None;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi))
            }
        }
    }

    /// Equilibrium state `[x, θe]` if one exists.
    pub fn equilibrium(&self) -> Option<[f64; 2]> {
        let th = self.lock_phase()?;
        let x = match self.filter {
            LoopFilterKind::Pi => self.params.tau1 * self.params.delta_omega0 / self.params.k0,
            LoopFilterKind::LeadLag => self.params.tau1 * self.pd.phi(th),
        };
        Some([x, th])
    }

    /// Analytic Jacobian at `state`.
    pub fn jacobian_analytic(&self, state: [f64; 2]) -> [[f64; 2]; 2] {
        let p = &self.params;
        let slope = self.pd.slope(state[1]);
        match self.filter {
            LoopFilterKind::Pi => [[0.0, slope], [-p.k0 / p.tau1, -p.k0 * p.k_h() * slope]],
            LoopFilterKind::LeadLag => [
                [-1.0 / p.tau1, slope],
                [-p.k0 * (1.0 - p.k_h()) / p.tau1, -p.k0 * p.k_h() * slope],
            ],
        }
    }
}

/// `[ẋ, θ̇e]` of the classic phase model.
pub fn classic_rhs(model: &ClassicPhaseModel, state: [f64; 2]) -> [f64; 2] {
    let [x, th] = state;
    let phi = model.pd.phi(th);
    let uf = model.filter_output(x, phi);
    [model.filter.state_rate(&model.params, x, phi), model.params.delta_omega0 - model.params.k0 * uf]
}

/// Central finite-difference Jacobian of [`classic_rhs`].
pub fn jacobian_fd(model: &ClassicPhaseModel, state: [f64; 2], h: f64) -> [[f64; 2]; 2] {
    let mut j = [[0.0; 2]; 2];
    for col in 0..2 {
        let scale = state[col].abs().max(1.0);
        let step = h * scale;
        let mut sp = state;
        let mut sm = state;
        sp[col] += step;
        sm[col] -= step;
        let fp = classic_rhs(model, sp);
        let fm = classic_rhs(model, sm);
        for row in 0..2 {
            j[row][col] = (fp[row] - fm[row]) / (2.0 * step);
        }
    }
    j
}

/// Delay model: the detector sees `θe + φ1(θ̇e)` with
/// `φ1(ω) = −arctan(ω/ω3)`, making `θ̇e` implicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub params: LoopParams,
    pub pd: PdCharacteristic,
    pub filter: LoopFilterKind,
    omega3: f64,
}

/// Iteration cap of the implicit solve.
pub const DELAY_MAX_ITER: usize = 50;
/// Relative tolerance of the implicit solve.
pub const DELAY_TOL: f64 = 1e-10;

impl DelayModel {
    pub fn new(params: LoopParams, pd: PdCharacteristic) -> Result<Self, BasebandError> {
        let omega3 = params.omega3.ok_or(BasebandError::MissingOmega3)?;
        Ok(DelayModel { params, pd, filter: LoopFilterKind::Pi, omega3 })
    }

    pub fn with_filter(mut self, filter: LoopFilterKind) -> Self {
        self.filter = filter;
        self
    }

    pub fn omega3(&self) -> f64 {
        self.omega3
    }

    /// Detector output for phase error `th` and phase rate `v`.
    pub fn delayed_phi(&self, th: f64, v: f64) -> f64 {
        self.pd.phi(th - (v / self.omega3).atan())
    }

    /// Right-hand side of the rate equation for a trial rate `v`.
    pub fn rate_map(&self, x: f64, th: f64, v: f64) -> f64 {
        let p = &self.params;
        p.delta_omega0 - p.k0 * self.filter.output(p, x, self.delayed_phi(th, v))
    }

    /// Half-width of the interval around Δω0 that must contain θ̇e.
    pub fn rate_bracket(&self, x: f64) -> (f64, f64) {
        let p = &self.params;
        let b = p.k0 * (x.abs() / p.tau1 + p.k_h() * self.pd.max_abs());
        (p.delta_omega0 - b, p.delta_omega0 + b)
    }
}

/// Resolves the implicit `θ̇e` and returns `([ẋ, θ̇e], θ̇e)`.
///
/// Fixed-point iteration seeded with `prev_dtheta`; bisection on the
/// guaranteed bracket if it fails to converge.
pub fn delay_rhs(model: &DelayModel, state: [f64; 2], prev_dtheta: f64) -> Result<([f64; 2], f64), BasebandError> {
    let [x, th] = state;
    if !(x.is_finite() && th.is_finite()) {
        return Err(BasebandError::ImplicitSolve);
    }
    let (lo0, hi0) = model.rate_bracket(x);
    let scale = hi0.abs().max(lo0.abs()).max(1e-300);
    let mut v = if prev_dtheta.is_finite() { prev_dtheta.clamp(lo0, hi0) } else { model.params.delta_omega0 };
    let mut solved = None;
    for _ in 0..DELAY_MAX_ITER {
        let next = model.rate_map(x, th, v);
        if (next - v).abs() <= DELAY_TOL * scale {
            solved = Some(next);
            break;
        }
        v = next;
    }
    let v = match solved {
        Some(v) => v,
        None => {
            let g = |v: f64| v - model.rate_map(x, th, v);
            let (mut lo, mut hi) = (lo0, hi0);
            if g(lo) > 0.0 || g(hi) < 0.0 {
                return Err(BasebandError::ImplicitSolve);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * scale {
                    break;
                }
            }
            0.5 * (lo + hi)
        }
    };
    let phi = model.delayed_phi(th, v);
    Ok(([model.filter.state_rate(&model.params, x, phi), v], v))
}

/// Averaged slow model of the beat frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedModel {
    pub params: LoopParams,
    pub variant: LoopVariant,
}

impl AveragedModel {
    pub fn new(params: LoopParams, variant: LoopVariant) -> Self {
        AveragedModel { params, variant }
    }

    pub fn k_h(&self) -> f64 {
        self.params.k_h()
    }
}

/// LPF phase lag `−arctan(ω/ω3)`.
pub fn phase_lpf(omega: f64, omega3: f64) -> f64 {
    -(omega / omega3).atan()
}

/// PI loop-filter phase `−π/2 + arctan(ω/ωC)`.
pub fn phase_pi(omega: f64, omega_c: f64) -> f64 {
    -FRAC_PI_2 + (omega / omega_c).atan()
}

/// Total beat-note phase φtot at offset Δω for the conventional loops.
pub fn phi_tot(variant: LoopVariant, delta_omega: f64, params: &LoopParams) -> Result<f64, BasebandError> {
    let w3 = params.omega3.ok_or(BasebandError::MissingOmega3)?;
    let k = if variant.is_bpsk_type() { 2.0 } else { 4.0 };
    Ok(k * phase_lpf(delta_omega, w3) + phase_pi(k * delta_omega, params.omega_c))
}

/// Effective QPSK averaging constant.
pub const QPSK_AVG_CONST: f64 = 0.373;

/// Mean detector output at beat frequency Δω.
pub fn averaged_ud(variant: LoopVariant, delta_omega: f64, params: &LoopParams) -> Result<f64, BasebandError> {
    if delta_omega == 0.0 {
        return Err(BasebandError::Singular);
    }
    let (k0, kd, kh) = (params.k0, params.kd, params.k_h());
    let dw = delta_omega;
    Ok(match (variant.tag(), variant.pd_flavor()) {
        (LoopTag::ConventionalBpsk, _) => {
            k0 * kd * kd * kh * phi_tot(variant, dw, params)?.cos() / (PI * PI * dw)
        }
        (LoopTag::ConventionalQpsk, _) => {
            QPSK_AVG_CONST * QPSK_AVG_CONST * k0 * kd * kd * kh * phi_tot(variant, dw, params)?.cos() / dw
        }
        (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => 4.0 * k0 * kd * kd * kh / (PI * PI * dw),
        (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => k0 * kd * kd * kh / (4.0 * 1.78 * dw),
        (LoopTag::ModifiedBpsk, _) => PI * PI * kd * k0 * kh / (8.0 * dw),
        (LoopTag::ModifiedQpsk, _) => PI * PI * kd * kd * k0 * kh / (64.0 * dw),
    })
}

/// `dΔω/dt = −K0·ū_d(Δω)/τ1`.
pub fn averaged_rhs(model: &AveragedModel, delta_omega: f64) -> Result<f64, BasebandError> {
    if delta_omega == 0.0 {
        return Err(BasebandError::Singular);
    }
    if delta_omega < 0.0 {
        return Err(BasebandError::NegativeOffset(delta_omega));
    }
    let p = &model.params;
    Ok(-p.k0 * averaged_ud(model.variant, delta_omega, p)? / p.tau1)
}

/// Time for the averaged model to move from `from` down to `to` (both > 0),
/// by composite Simpson quadrature of `dt = dΔω/|rhs|`. Returns `None` when
/// the rate vanishes or reverses inside the interval.
pub fn averaged_transit_time(model: &AveragedModel, from: f64, to: f64) -> Option<f64> {
    if !(from > to && to > 0.0) {
        return None;
    }
    let n = 4000;
    let h = (from - to) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let w = to + h * i as f64;
        let r = averaged_rhs(model, w).ok()?;
        if !(r < 0.0) {
            return None;
        }
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += c / (-r);
    }
    Some(acc * h / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_types::LoopParams;

    fn bpsk_params(dw0: f64) -> LoopParams {
        let w1 = 2.0 * PI * 400e3;
        let wc = 0.1 * w1;
        LoopParams::derived(w1, w1 - dw0, wc * wc * 20e-6, 1.0, 20e-6, 1.0 / wc, Some(4.0 * PI * 1e5))
    }

    fn bpsk_model(dw0: f64) -> ClassicPhaseModel {
        ClassicPhaseModel::new(bpsk_params(dw0), PdCharacteristic::new(LoopVariant::CONVENTIONAL_BPSK, 1.0).unwrap())
    }

    #[test]
    fn lock_point_is_fixed() {
        assert_eq!(classic_rhs(&bpsk_model(0.0), [0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn rhs_at_quarter_pi() {
        let m = bpsk_model(0.0);
        let [dx, dth] = classic_rhs(&m, [0.0, PI / 4.0]);
        assert!((dx - 0.5).abs() < 1e-15);
        let expect = -m.params.k0 * m.params.tau2 / (2.0 * m.params.tau1);
        assert!((dth - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn linearization_is_second_order_loop() {
        let m = bpsk_model(0.0);
        let j = m.jacobian_analytic([0.0, 0.0]);
        let trace = j[0][0] + j[1][1];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let p = &m.params;
        assert!((-trace - 2.0 * p.zeta * p.omega_n).abs() < 1e-9 * p.omega_n);
        assert!((det - p.omega_n * p.omega_n).abs() < 1e-9 * p.omega_n * p.omega_n);
    }

    #[test]
    fn equilibrium_under_detuning() {
        let m = bpsk_model(10_000.0);
        let eq = m.equilibrium().unwrap();
        let r = classic_rhs(&m, eq);
        assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-6);
        let ll = ClassicPhaseModel::new(
            LoopParams::derived(10_000.0, 10_000.0 - 89.45, 1000.0, 1.0, 0.336, 0.0046, None),
            PdCharacteristic::new(LoopVariant::CONVENTIONAL_BPSK, 1.0).unwrap(),
        )
        .with_filter(LoopFilterKind::LeadLag);
        let eq = ll.equilibrium().unwrap();
        let r = classic_rhs(&ll, eq);
        assert!(r[0].abs() < 1e-10 && r[1].abs() < 1e-8);
        assert!((eq[1] - 0.5 * (2.0 * 89.45 / 1000.0f64).asin()).abs() < 1e-12);
    }

    #[test]
    fn delay_reduces_to_classic_at_zero_rate() {
        let p = bpsk_params(0.0);
        let pd = PdCharacteristic::new(LoopVariant::CONVENTIONAL_BPSK, 1.0).unwrap();
        let d = DelayModel::new(p, pd).unwrap();
        let c = ClassicPhaseModel::new(p, pd);
        let (r, v) = delay_rhs(&d, [0.0, 0.0], 0.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(r, classic_rhs(&c, [0.0, 0.0]));
        // a rate of ω3 subtracts π/4 inside φ, i.e. π/2 inside the BPSK sine
        assert!((d.delayed_phi(PI / 4.0, d.omega3()) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn delay_needs_omega3() {
        let mut p = bpsk_params(0.0);
        p.omega3 = None;
        let pd = PdCharacteristic::new(LoopVariant::CONVENTIONAL_BPSK, 1.0).unwrap();
        assert_eq!(DelayModel::new(p, pd), Err(BasebandError::MissingOmega3));
    }

    #[test]
    fn averaged_signs() {
        let p = bpsk_params(0.0);
        assert_eq!(averaged_ud(LoopVariant::CONVENTIONAL_BPSK, 0.0, &p), Err(BasebandError::Singular));
        for k in 1..100 {
            let w = 1e4 * k as f64;
            assert!(averaged_ud(LoopVariant::MODIFIED_BPSK, w, &p).unwrap() > 0.0);
        }
        let model = AveragedModel::new(p, LoopVariant::CONVENTIONAL_BPSK);
        let fast = averaged_rhs(&model, 130_000.0).unwrap();
        assert!(fast < -1e9);
        assert!(averaged_rhs(&model, -1.0).is_err());
    }

    #[test]
    fn phi_tot_at_minus_half_pi_gives_zero() {
        let p = bpsk_params(0.0);
        // bisection on phi_tot + π/2 for the BPSK root
        let (mut lo, mut hi) = (200_000.0, 5_000_000.0);
        let f = |w: f64| phi_tot(LoopVariant::CONVENTIONAL_BPSK, w, &p).unwrap() + FRAC_PI_2;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let ud = averaged_ud(LoopVariant::CONVENTIONAL_BPSK, lo, &p).unwrap();
        assert!(ud.abs() < 1e-6);
    }
}
