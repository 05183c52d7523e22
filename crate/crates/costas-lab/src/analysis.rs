//! Loop design from carrier and symbol rate, and closed-form acquisition
//! predictions: lock-in, pull-in and hold-in ranges and the matching times.

use crate::baseband::phi_tot;
use crate::core_types::{LoopParams, LoopTag, LoopVariant, PdFlavor};
use crate::filters::{self, routh_hurwitz, Stability};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid design spec: {0}")]
    Spec(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("offset {delta_omega0} rad/s is outside the validity range [{lo}, {hi})")]
    OutOfRange { delta_omega0: f64, lo: f64, hi: f64 },
    #[error("root solver failed: {0}")]
    Solver(String),
    #[error("domain error: {0}")]
    Domain(String),
}

fn default_ratio() -> f64 {
    0.1
}
fn default_tau1() -> f64 {
    20e-6
}
fn default_m() -> f64 {
    1.0
}

/// Design inputs. Frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub f0: f64,
    pub f_symbol: f64,
    #[serde(default = "default_ratio")]
    pub omega_t_ratio: f64,
    pub variant: LoopVariant,
    #[serde(default = "default_tau1")]
    pub tau1: f64,
    #[serde(default = "default_m")]
    pub m: f64,
}

impl DesignSpec {
    pub fn new(f0: f64, f_symbol: f64, variant: LoopVariant) -> Self {
        DesignSpec { f0, f_symbol, omega_t_ratio: 0.1, variant, tau1: 20e-6, m: 1.0 }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(AnalysisError::Spec(format!("{name} must be positive, got {x}")))
            }
        };
        pos("f0", self.f0)?;
        pos("f_symbol", self.f_symbol)?;
        pos("tau1", self.tau1)?;
        pos("m", self.m)?;
        if !(self.omega_t_ratio > 0.0 && self.omega_t_ratio <= 0.1) {
            return Err(AnalysisError::Spec(format!(
                "omega_t_ratio must lie in (0, 0.1], got {}",
                self.omega_t_ratio
            )));
        }
        if self.f_symbol >= self.f0 {
            return Err(AnalysisError::Spec(format!(
                "symbol rate {} must be below the carrier {}",
                self.f_symbol, self.f0
            )));
        }
        Ok(())
    }
}

/// Places the open-loop crossover at `ratio·ω0` and the PI zero on it.
pub fn design(spec: &DesignSpec) -> Result<LoopParams, AnalysisError> {
    spec.validate()?;
    let omega0 = 2.0 * PI * spec.f0;
    let omega_c = spec.omega_t_ratio * omega0;
    let tau2 = 1.0 / omega_c;
    let omega3 = spec.variant.is_conventional().then_some(2.0 * 2.0 * PI * spec.f_symbol);
    let kd = spec.variant.kd(spec.m);
    let k0 = omega_c * omega_c * spec.tau1 / kd;
    let mut p = LoopParams::derived(omega0, omega0, k0, kd, spec.tau1, tau2, omega3);
    p.omega_c = omega_c;
    Ok(p)
}

/// Open-loop transfer function `K0·Kd/s · PI(s) · LPF(s)`.
pub fn open_loop_tf(params: &LoopParams) -> Result<filters::RationalTF, AnalysisError> {
    let pi = filters::make_pi_filter(params.tau1, params.tau2).map_err(|e| AnalysisError::Domain(e.to_string()))?;
    let vco = filters::RationalTF { num: vec![params.k0 * params.kd], den: vec![0.0, 1.0] };
    let mut g = vco.series(&pi);
    if let Some(w3) = params.omega3 {
        g = g.series(&filters::make_lpf1(w3).map_err(|e| AnalysisError::Domain(e.to_string()))?);
    }
    Ok(g)
}

/// Ratio ΔωL/(ζωn) for each variant.
pub fn lock_in_factor(variant: LoopVariant) -> f64 {
    match (variant.tag(), variant.pd_flavor()) {
        (LoopTag::ConventionalBpsk, _) => 1.0,
        (LoopTag::ConventionalQpsk, _) => SQRT_2,
        (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => 2.0,
        (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => SQRT_2,
        (LoopTag::ModifiedBpsk, _) => PI,
        (LoopTag::ModifiedQpsk, _) => FRAC_PI_2,
    }
}

pub fn lock_in_range(params: &LoopParams, variant: LoopVariant) -> f64 {
    lock_in_factor(variant) * params.zeta * params.omega_n
}

/// One damped oscillation at ωn.
pub fn lock_time(params: &LoopParams) -> f64 {
    2.0 * PI / params.omega_n
}

/// Pull-in range, finite for the conventional loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PullInRange {
    Finite(f64),
    Unbounded,
}

impl PullInRange {
    pub fn finite(self) -> Option<f64> {
        match self {
            PullInRange::Finite(x) => Some(x),
            PullInRange::Unbounded => None,
        }
    }
}

impl Serialize for PullInRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PullInRange::Finite(x) => s.serialize_f64(*x),
            PullInRange::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

fn conventional_corners(params: &LoopParams) -> Result<(f64, f64), AnalysisError> {
    let w3 = params
        .omega3
        .ok_or_else(|| AnalysisError::Degenerate("conventional loop without omega3".into()))?;
    let wc = params.omega_c;
    if !(w3 > wc) {
        return Err(AnalysisError::Degenerate(format!("omega3 = {w3} must exceed omega_c = {wc}")));
    }
    Ok((w3, wc))
}

/// Closed-form pull-in range: `ω3·√(1 − r)` (BPSK) or
/// `ω3·√((6 − r − √((6 − r)² − 4(1 − r)))/2)` (QPSK), with `r = ωC/ω3`.
pub fn pull_in_range(params: &LoopParams, variant: LoopVariant) -> Result<PullInRange, AnalysisError> {
    if variant.is_modified() {
        return Ok(PullInRange::Unbounded);
    }
    let (w3, wc) = conventional_corners(params)?;
    let r = wc / w3;
    let a2 = if variant.is_bpsk_type() {
        1.0 - r
    } else {
        let b = 6.0 - r;
        0.5 * (b - (b * b - 4.0 * (1.0 - r)).sqrt())
    };
    Ok(PullInRange::Finite(w3 * a2.sqrt()))
}

/// Pull-in range as the first root of `φtot(Δω) = −π/2`, found by bisection
/// on `(0, 100·ω3]`.
pub fn pull_in_range_numeric(params: &LoopParams, variant: LoopVariant) -> Result<f64, AnalysisError> {
    if variant.is_modified() {
        return Err(AnalysisError::Degenerate("modified loops have no finite pull-in range".into()));
    }
    let (w3, _) = conventional_corners(params)?;
    let f = |w: f64| phi_tot(variant, w, params).map(|p| p + FRAC_PI_2).unwrap_or(f64::NAN);
    let hi_limit = 100.0 * w3;
    // first sign change on a geometric grid
    let n = 2000;
    let lo0 = 1e-6 * w3;
    let ratio = (hi_limit / lo0).powf(1.0 / n as f64);
    let mut lo = lo0;
    let mut flo = f(lo);
    let mut bracket = None;
    for _ in 0..n {
        let hi = (lo * ratio).min(hi_limit);
        let fhi = f(hi);
        if flo > 0.0 && fhi <= 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        flo = fhi;
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| AnalysisError::Solver("no sign change in (0, 100*omega3]".into()))?;
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Coefficient of the QPSK pull-in time: `2·0.373²`.
pub const QPSK_TP_CONST: f64 = 0.278;

/// Pull-in time at offset Δω0. Returns the lock time inside the lock-in range.
pub fn pull_in_time(params: &LoopParams, variant: LoopVariant, delta_omega0: f64) -> Result<f64, AnalysisError> {
    if delta_omega0.abs() <= lock_in_range(params, variant) {
        return Ok(lock_time(params));
    }
    pull_in_time_formula(params, variant, delta_omega0)
}

/// The averaged-model pull-in time expression itself, without substituting
/// the lock time inside the lock-in range. The conventional loops need
/// `ΔωL < |Δω0| < ΔωP`; the modified ones accept any nonzero offset.
pub fn pull_in_time_formula(params: &LoopParams, variant: LoopVariant, delta_omega0: f64) -> Result<f64, AnalysisError> {
    let dw0 = delta_omega0.abs();
    let dwl = lock_in_range(params, variant);
    if variant.is_conventional() && dw0 <= dwl {
        return Err(AnalysisError::OutOfRange { delta_omega0: dw0, lo: dwl, hi: f64::INFINITY });
    }
    let zw3 = params.zeta * params.omega_n.powi(3);
    let sq = dw0 * dw0 / zw3;
    Ok(match (variant.tag(), variant.pd_flavor()) {
        (LoopTag::ConventionalBpsk, _) | (LoopTag::ConventionalQpsk, _) => {
            let dwp = pull_in_range(params, variant)?.finite().expect("conventional range is finite");
            if dw0 >= dwp {
                return Err(AnalysisError::OutOfRange { delta_omega0: dw0, lo: dwl, hi: dwp });
            }
            let bracket = dwp * ((dwp - dwl) / (dwp - dw0)).ln() - dw0 + dwl;
            let coef = if variant.is_bpsk_type() {
                dwp * PI * PI / (2.0 * zw3)
            } else {
                dwp / (QPSK_TP_CONST * zw3)
            };
            coef * bracket
        }
        (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => PI * PI / 16.0 * sq,
        (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => 1.78 * sq,
        (LoopTag::ModifiedBpsk, _) => 2.0 / (PI * PI) * sq,
        (LoopTag::ModifiedQpsk, _) => 16.0 / (PI * PI) * sq,
    })
}

/// Hold-in set in terms of |Δω0|.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldIn {
    /// Open intervals `(lo, hi)` of |Δω0|; `hi = None` means unbounded.
    pub intervals: Vec<(f64, Option<f64>)>,
    pub case: String,
    pub formula: String,
    pub note: String,
    /// Routh–Hurwitz agreed at probe points inside and outside every interval.
    pub cross_checked: bool,
}

impl HoldIn {
    pub fn contains(&self, delta_omega0: f64) -> bool {
        let d = delta_omega0.abs();
        self.intervals.iter().any(|&(lo, hi)| {
            let above = if lo == 0.0 { d >= 0.0 } else { d > lo };
            above && hi.is_none_or(|h| d < h)
        })
    }
}

/// PI loop filter: the integrator absorbs any constant offset.
pub fn hold_in_pi(params: &LoopParams) -> HoldIn {
    if !(params.k0 > 0.0 && params.kd > 0.0) {
        return HoldIn {
            intervals: Vec::new(),
            case: "degenerate".into(),
            formula: "type-2-PI".into(),
            note: "no control authority".into(),
            cross_checked: false,
        };
    }
    HoldIn {
        intervals: vec![(0.0, None)],
        case: "unbounded".into(),
        formula: "type-2-PI".into(),
        note: "static phase error returns to the detector null for any constant offset; \
               valid while the linearized loop stays stable"
            .into(),
        cross_checked: true,
    }
}

/// Linearization cubic of the lead-lag loop at static phase error θeq:
/// `½(1 + τ2·s)·K0Kd·cos(2θeq) + s(1 + s/ω3)(1 + τ1·s)`, ascending.
pub fn leadlag_char_poly(k0kd: f64, tau1: f64, tau2: f64, omega3: f64, cos2: f64) -> [f64; 4] {
    let g = 0.5 * k0kd * cos2;
    [g, 1.0 + g * tau2, 1.0 / omega3 + tau1, tau1 / omega3]
}

/// cos(2θeq) on the stable branch for offset Δω0, if an equilibrium exists.
pub fn leadlag_cos2(k0kd: f64, delta_omega0: f64) -> Option<f64> {
    let s = 2.0 * delta_omega0 / k0kd;
    (s.abs() <= 1.0).then(|| (1.0 - s * s).sqrt())
}

/// Hold-in ranges of the BPSK loop with a lead-lag filter and first-order
/// LPFs. The threshold `ω3* = (τ1 − τ2)/(τ1·τ2)` selects the case.
pub fn hold_in_leadlag(k0: f64, kd: f64, tau1: f64, tau2: f64, omega3: f64) -> Result<HoldIn, AnalysisError> {
    if !(tau2 > 0.0 && tau1 > tau2) {
        return Err(AnalysisError::Domain(format!("need tau1 > tau2 > 0, got tau1 = {tau1}, tau2 = {tau2}")));
    }
    if !(omega3 > 0.0 && k0 > 0.0 && kd > 0.0) {
        return Err(AnalysisError::Domain("omega3, K0 and Kd must be positive".into()));
    }
    let a = k0 * kd;
    let half = 0.5 * a;
    let w3_star = (tau1 - tau2) / (tau1 * tau2);
    let mut out = if omega3 >= w3_star {
        HoldIn {
            intervals: vec![(0.0, Some(half))],
            case: "omega3-above-threshold".into(),
            formula: "leadlag-full-interval".into(),
            note: "cubic stable for every static phase error on the rising branch".into(),
            cross_checked: false,
        }
    } else {
        let d = -tau1 + tau2 + omega3 * tau1 * tau2;
        let q = 2.0 / a * ((-1.0 - omega3 * tau1) / d);
        if q.abs() < 1.0 {
            HoldIn {
                intervals: vec![(half * (1.0 - q * q).sqrt(), Some(half))],
                case: "omega3-below-threshold-split".into(),
                formula: "leadlag-cos-bound".into(),
                note: format!("stable only where cos(2*theta_eq) < {q}"),
                cross_checked: false,
            }
        } else {
            HoldIn {
                intervals: vec![(0.0, Some(half))],
                case: "omega3-below-threshold-full".into(),
                formula: "leadlag-cos-bound-inactive".into(),
                note: format!("cos bound {q} >= 1 is never active"),
                cross_checked: false,
            }
        }
    };
    out.cross_checked = cross_check_holdin(&out, a, tau1, tau2, omega3);
    Ok(out)
}

fn cross_check_holdin(h: &HoldIn, a: f64, tau1: f64, tau2: f64, omega3: f64) -> bool {
    let verdict = |dw: f64| {
        leadlag_cos2(a, dw)
            .map(|c| routh_hurwitz(&leadlag_char_poly(a, tau1, tau2, omega3, c)))
            .and_then(|r| r.ok())
    };
    let half = 0.5 * a;
    let mut ok = true;
    for &(lo, hi) in &h.intervals {
        let hi = hi.unwrap_or(half);
        let mid = 0.5 * (lo + hi);
        ok &= verdict(mid) == Some(Stability::Stable);
        if lo > 0.0 {
            let outside = lo * (1.0 - 1e-3);
            ok &= verdict(outside) != Some(Stability::Stable);
        }
    }
    ok
}

/// Pull-in time curve sampled on a grid of offsets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullInTimeCurve {
    pub formula: String,
    pub valid_from: f64,
    pub valid_to: PullInRange,
    pub samples: Vec<(f64, f64)>,
}

/// Closed-form predictions for one loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub schema: u32,
    pub variant: String,
    pub delta_omega_l: f64,
    /// Lock-in range in Hz.
    pub delta_f_l: f64,
    pub t_l: f64,
    pub delta_omega_p: PullInRange,
    /// Pull-in range in Hz, `None` when unbounded.
    pub delta_f_p: Option<f64>,
    pub delta_omega_p_numeric: Option<f64>,
    pub t_p: PullInTimeCurve,
    pub hold_in: HoldIn,
    pub hold_in_leadlag: Option<HoldIn>,
    pub formula_ids: BTreeMap<String, String>,
}

/// Formula identifier for each prediction.
pub fn formula_ids(variant: LoopVariant) -> BTreeMap<String, String> {
    let name = variant.short_name();
    let mut m = BTreeMap::new();
    m.insert("delta_omega_l".into(), format!("lock-in:{name}:{}*zeta*omega_n", lock_in_factor(variant)));
    m.insert("t_l".into(), "lock-time:2pi/omega_n".into());
    let (range, time) = match (variant.tag(), variant.pd_flavor()) {
        (LoopTag::ConventionalBpsk, _) => (
            "pull-in-range:bpsk:omega3*sqrt(1-omega_c/omega3)",
            "pull-in-time:bpsk:linearized-cos-averaged",
        ),
        (LoopTag::ConventionalQpsk, _) => (
            "pull-in-range:qpsk:quartic-arctan-root",
            "pull-in-time:qpsk:linearized-cos-averaged-0.278",
        ),
        (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => ("pull-in-range:unbounded", "pull-in-time:mbpsk-imag:pi^2/16"),
        (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => ("pull-in-range:unbounded", "pull-in-time:mqpsk-imag:1.78"),
        (LoopTag::ModifiedBpsk, _) => ("pull-in-range:unbounded", "pull-in-time:mbpsk:2/pi^2"),
        (LoopTag::ModifiedQpsk, _) => ("pull-in-range:unbounded", "pull-in-time:mqpsk:16/pi^2"),
    };
    m.insert("delta_omega_p".into(), range.into());
    if variant.is_conventional() {
        m.insert("delta_omega_p_numeric".into(), "pull-in-range:phi_tot=-pi/2:bisection".into());
    }
    m.insert("t_p".into(), time.into());
    m.insert("hold_in".into(), "type-2-PI".into());
    m
}

/// Builds the full report. `leadlag` optionally supplies `(τ1, τ2)` of a
/// lead-lag filter for the hold-in analysis.
pub fn predict(
    params: &LoopParams,
    variant: LoopVariant,
    offsets: &[f64],
    leadlag: Option<(f64, f64)>,
) -> Result<PredictionReport, AnalysisError> {
    let dwl = lock_in_range(params, variant);
    let dwp = pull_in_range(params, variant)?;
    let numeric = if variant.is_conventional() { Some(pull_in_range_numeric(params, variant)?) } else { None };
    let mut samples = Vec::new();
    for &w in offsets {
        if let Ok(t) = pull_in_time_formula(params, variant, w) {
            samples.push((w, t));
        }
    }
    let ids = formula_ids(variant);
    let hold_in_leadlag = match leadlag {
        Some((t1, t2)) => {
            let w3 = params
                .omega3
                .ok_or_else(|| AnalysisError::Degenerate("lead-lag hold-in needs omega3".into()))?;
            let mut h = hold_in_leadlag(params.k0, params.kd, t1, t2, w3)?;
            h.formula = format!("hold-in:{}", h.formula);
            Some(h)
        }
        None => None,
    };
    Ok(PredictionReport {
        schema: 1,
        variant: variant.short_name().into(),
        delta_omega_l: dwl,
        delta_f_l: dwl / (2.0 * PI),
        t_l: lock_time(params),
        delta_omega_p: dwp,
        delta_f_p: dwp.finite().map(|w| w / (2.0 * PI)),
        delta_omega_p_numeric: numeric,
        t_p: PullInTimeCurve { formula: ids["t_p"].clone(), valid_from: dwl, valid_to: dwp, samples },
        hold_in: hold_in_pi(params),
        hold_in_leadlag,
        formula_ids: ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(variant: LoopVariant) -> LoopParams {
        design(&DesignSpec::new(400e3, 100e3, variant)).unwrap()
    }

    #[test]
    fn reference_design() {
        let p = reference(LoopVariant::CONVENTIONAL_BPSK);
        assert_eq!(p.tau2, 1.0 / (0.1 * 2.0 * PI * 400e3));
        assert!((p.omega3.unwrap() / 1_256_000.0 - 1.0).abs() < 1e-3);
        assert!((p.k0 / 1_262_000.0 - 1.0).abs() < 1e-2);
        assert!((p.zeta - 0.5).abs() < 1e-12);
        let q = reference(LoopVariant::CONVENTIONAL_QPSK);
        assert!((q.k0 / 631_000.0 - 1.0).abs() < 1e-2);
        assert!(reference(LoopVariant::MODIFIED_BPSK).omega3.is_none());
    }

    #[test]
    fn doubling_tau1() {
        let mut s = DesignSpec::new(400e3, 100e3, LoopVariant::CONVENTIONAL_BPSK);
        let a = design(&s).unwrap();
        s.tau1 *= 2.0;
        let b = design(&s).unwrap();
        assert!((b.k0 / a.k0 - 2.0).abs() < 1e-12);
        assert!((b.omega_n / a.omega_n - 1.0).abs() < 1e-12);
        assert!((b.zeta / a.zeta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn design_input_validation() {
        let mut s = DesignSpec::new(400e3, 100e3, LoopVariant::CONVENTIONAL_BPSK);
        s.omega_t_ratio = 0.2;
        assert!(design(&s).is_err());
        let s = DesignSpec::new(100e3, 400e3, LoopVariant::CONVENTIONAL_BPSK);
        assert!(design(&s).is_err());
    }

    #[test]
    fn lock_in_values() {
        let p = reference(LoopVariant::CONVENTIONAL_BPSK);
        assert!((lock_in_range(&p, LoopVariant::CONVENTIONAL_BPSK) - 125_664.0).abs() < 1.0);
        let q = reference(LoopVariant::CONVENTIONAL_QPSK);
        // within rounding of the reference 177'483
        assert!((lock_in_range(&q, LoopVariant::CONVENTIONAL_QPSK) / 177_483.0 - 1.0).abs() < 2e-3);
        let m = reference(LoopVariant::MODIFIED_BPSK);
        assert!((lock_in_range(&m, LoopVariant::MODIFIED_BPSK) / 394_000.0 - 1.0).abs() < 3e-3);
    }

    #[test]
    fn lock_time_scaling() {
        let mut p = reference(LoopVariant::CONVENTIONAL_BPSK);
        let t = lock_time(&p);
        assert!((t - 25e-6).abs() < 0.1e-6);
        p.omega_n *= 2.0;
        assert!((lock_time(&p) - t / 2.0).abs() < 1e-18);
        p.omega_n = 2.0 * PI;
        assert!((lock_time(&p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bpsk_pull_in_closed_form_vs_bisection() {
        let p = reference(LoopVariant::CONVENTIONAL_BPSK);
        let closed = pull_in_range(&p, LoopVariant::CONVENTIONAL_BPSK).unwrap().finite().unwrap();
        let numeric = pull_in_range_numeric(&p, LoopVariant::CONVENTIONAL_BPSK).unwrap();
        assert!((closed - numeric).abs() / closed < 1e-9);
        assert!((closed - 1_124_000.0).abs() < 100.0);
    }

    #[test]
    fn synthetic_ratio_five() {
        let mut p = reference(LoopVariant::CONVENTIONAL_BPSK);
        p.omega3 = Some(5.0 * p.omega_c);
        let closed = pull_in_range(&p, LoopVariant::CONVENTIONAL_BPSK).unwrap().finite().unwrap();
        assert!((closed - 5.0 * p.omega_c * (0.8f64).sqrt()).abs() / closed < 1e-12);
        let numeric = pull_in_range_numeric(&p, LoopVariant::CONVENTIONAL_BPSK).unwrap();
        assert!((closed - numeric).abs() / closed < 1e-6);
    }

    #[test]
    fn qpsk_pull_in_near_reference() {
        let p = reference(LoopVariant::CONVENTIONAL_QPSK);
        let numeric = pull_in_range_numeric(&p, LoopVariant::CONVENTIONAL_QPSK).unwrap();
        assert!((numeric / (2.0 * PI) - 73e3).abs() < 3e3);
    }

    #[test]
    fn degenerate_corners() {
        let mut p = reference(LoopVariant::CONVENTIONAL_BPSK);
        p.omega3 = Some(0.5 * p.omega_c);
        assert!(matches!(pull_in_range(&p, LoopVariant::CONVENTIONAL_BPSK), Err(AnalysisError::Degenerate(_))));
        assert_eq!(pull_in_range(&p, LoopVariant::MODIFIED_BPSK).unwrap(), PullInRange::Unbounded);
    }

    #[test]
    fn pull_in_time_regimes() {
        let p = reference(LoopVariant::CONVENTIONAL_BPSK);
        let v = LoopVariant::CONVENTIONAL_BPSK;
        assert_eq!(pull_in_time(&p, v, 1000.0).unwrap(), lock_time(&p));
        assert!(matches!(pull_in_time(&p, v, 2.0e6), Err(AnalysisError::OutOfRange { .. })));
        let m = reference(LoopVariant::MODIFIED_QPSK);
        let t = pull_in_time(&m, LoopVariant::MODIFIED_QPSK, 1_256_000.0).unwrap();
        assert!((t / 327e-6 - 1.0).abs() < 0.05);
        let mb = reference(LoopVariant::MODIFIED_BPSK);
        let inside = 2.0 * PI * 50e3;
        assert_eq!(pull_in_time(&mb, LoopVariant::MODIFIED_BPSK, inside).unwrap(), lock_time(&mb));
        let raw = pull_in_time_formula(&mb, LoopVariant::MODIFIED_BPSK, inside).unwrap();
        assert!((raw / 2.5e-6 - 1.0).abs() < 0.05);
        assert!(pull_in_time_formula(&p, v, 1000.0).is_err());
    }

    #[test]
    fn pi_hold_in() {
        let p = reference(LoopVariant::CONVENTIONAL_BPSK);
        let h = hold_in_pi(&p);
        assert!(h.contains(1e9));
        assert_eq!(h.formula, "type-2-PI");
        let z = LoopParams { k0: 0.0, ..p };
        assert!(hold_in_pi(&z).intervals.is_empty());
    }

    #[test]
    fn leadlag_cases() {
        let (k0, kd, t1, t2) = (1000.0, 1.0, 2.0, 1.0);
        let star = (t1 - t2) / (t1 * t2);
        let h = hold_in_leadlag(k0, kd, t1, t2, 2.0 * star).unwrap();
        assert_eq!(h.intervals, vec![(0.0, Some(500.0))]);
        assert!(h.cross_checked);
        assert!(hold_in_leadlag(k0, kd, 1.0, 2.0, 1.0).is_err());
        // small omega3 with a large gain activates the split interval
        let h = hold_in_leadlag(1000.0, 1.0, 2.0, 0.01, 0.2).unwrap();
        assert_eq!(h.case, "omega3-below-threshold-split");
        assert!(h.cross_checked);
        assert!(!h.contains(0.0));
    }

    #[test]
    fn report_has_ids() {
        let p = reference(LoopVariant::CONVENTIONAL_BPSK);
        let r = predict(&p, LoopVariant::CONVENTIONAL_BPSK, &[314_000.0], None).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["schema"], 1);
        assert!(json["formula_ids"]["t_p"].as_str().unwrap().starts_with("pull-in-time"));
        let m = predict(&reference(LoopVariant::MODIFIED_BPSK), LoopVariant::MODIFIED_BPSK, &[], None).unwrap();
        assert_eq!(serde_json::to_value(&m).unwrap()["delta_omega_p"], "unbounded");
    }
}
