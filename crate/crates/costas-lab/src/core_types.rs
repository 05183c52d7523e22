//! Shared domain types: loop variants, loop constants, baseband state and
//! simulation results.
//!
//! All quantities are SI: rad/s, seconds, volts as nominal detector units.
//! Conversions from Hz happen at the CLI boundary.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use thiserror::Error;

/// Which Costas loop is being modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopTag {
    ConventionalBpsk,
    ConventionalQpsk,
    ModifiedBpsk,
    ModifiedQpsk,
}

/// Phase detector realization.
///
/// `ComplexImag` is the alternative detector of the modified loops that takes
/// the imaginary part of the derotated pre-envelope instead of its phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PdFlavor {
    MulMul,
    SgnCross,
    ComplexPhase,
    ComplexImag,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariantError {
    #[error("phase detector {flavor:?} is not available for {tag:?}")]
    Incompatible { tag: LoopTag, flavor: PdFlavor },
    #[error("unknown loop variant `{0}`")]
    Unknown(String),
}

/// A loop tag paired with a compatible phase-detector flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "VariantRepr", into = "VariantRepr")]
pub struct LoopVariant {
    tag: LoopTag,
    pd_flavor: PdFlavor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantRepr {
    tag: LoopTag,
    pd_flavor: PdFlavor,
}

impl TryFrom<VariantRepr> for LoopVariant {
    type Error = VariantError;
    fn try_from(r: VariantRepr) -> Result<Self, Self::Error> {
        LoopVariant::new(r.tag, r.pd_flavor)
    }
}

impl From<LoopVariant> for VariantRepr {
    fn from(v: LoopVariant) -> Self {
        VariantRepr { tag: v.tag, pd_flavor: v.pd_flavor }
    }
}

impl LoopVariant {
    pub const CONVENTIONAL_BPSK: LoopVariant =
        LoopVariant { tag: LoopTag::ConventionalBpsk, pd_flavor: PdFlavor::MulMul };
    pub const CONVENTIONAL_QPSK: LoopVariant =
        LoopVariant { tag: LoopTag::ConventionalQpsk, pd_flavor: PdFlavor::SgnCross };
    pub const MODIFIED_BPSK: LoopVariant =
        LoopVariant { tag: LoopTag::ModifiedBpsk, pd_flavor: PdFlavor::ComplexPhase };
    pub const MODIFIED_QPSK: LoopVariant =
        LoopVariant { tag: LoopTag::ModifiedQpsk, pd_flavor: PdFlavor::ComplexPhase };
    pub const MODIFIED_BPSK_IMAG: LoopVariant =
        LoopVariant { tag: LoopTag::ModifiedBpsk, pd_flavor: PdFlavor::ComplexImag };
    pub const MODIFIED_QPSK_IMAG: LoopVariant =
        LoopVariant { tag: LoopTag::ModifiedQpsk, pd_flavor: PdFlavor::ComplexImag };

    /// The four primary variants in table order.
    pub const PRIMARY: [LoopVariant; 4] = [
        Self::CONVENTIONAL_BPSK,
        Self::CONVENTIONAL_QPSK,
        Self::MODIFIED_BPSK,
        Self::MODIFIED_QPSK,
    ];

    pub fn new(tag: LoopTag, pd_flavor: PdFlavor) -> Result<Self, VariantError> {
        let ok = match pd_flavor {
            PdFlavor::MulMul => tag == LoopTag::ConventionalBpsk,
            PdFlavor::SgnCross => tag == LoopTag::ConventionalQpsk,
            PdFlavor::ComplexPhase | PdFlavor::ComplexImag => {
                matches!(tag, LoopTag::ModifiedBpsk | LoopTag::ModifiedQpsk)
            }
        };
        if ok {
            Ok(LoopVariant { tag, pd_flavor })
        } else {
            Err(VariantError::Incompatible { tag, flavor: pd_flavor })
        }
    }

    pub fn tag(&self) -> LoopTag {
        self.tag
    }

    pub fn pd_flavor(&self) -> PdFlavor {
        self.pd_flavor
    }

    pub fn is_conventional(&self) -> bool {
        matches!(self.tag, LoopTag::ConventionalBpsk | LoopTag::ConventionalQpsk)
    }

    pub fn is_modified(&self) -> bool {
        !self.is_conventional()
    }

    /// BPSK-type detectors have period π, QPSK-type π/2.
    pub fn is_bpsk_type(&self) -> bool {
        matches!(self.tag, LoopTag::ConventionalBpsk | LoopTag::ModifiedBpsk)
    }

    /// Small-signal detector gain for modulation amplitude `m`.
    pub fn kd(&self, m: f64) -> f64 {
        match (self.tag, self.pd_flavor) {
            (LoopTag::ConventionalBpsk, _) => m * m,
            (LoopTag::ConventionalQpsk, _) => 2.0 * m,
            (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => m,
            (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => 2.0 * m,
            _ => 1.0,
        }
    }

    /// Short name used on the command line.
    pub fn short_name(&self) -> &'static str {
        match (self.tag, self.pd_flavor) {
            (LoopTag::ConventionalBpsk, _) => "bpsk",
            (LoopTag::ConventionalQpsk, _) => "qpsk",
            (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => "mbpsk-imag",
            (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => "mqpsk-imag",
            (LoopTag::ModifiedBpsk, _) => "mbpsk",
            (LoopTag::ModifiedQpsk, _) => "mqpsk",
        }
    }

    pub fn from_short_name(s: &str) -> Result<Self, VariantError> {
        Ok(match s {
            "bpsk" => Self::CONVENTIONAL_BPSK,
            "qpsk" => Self::CONVENTIONAL_QPSK,
            "mbpsk" => Self::MODIFIED_BPSK,
            "mqpsk" => Self::MODIFIED_QPSK,
            "mbpsk-imag" => Self::MODIFIED_BPSK_IMAG,
            "mqpsk-imag" => Self::MODIFIED_QPSK_IMAG,
            other => return Err(VariantError::Unknown(other.to_string())),
        })
    }
}

impl fmt::Display for LoopVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Period of the phase-detector characteristic.
pub fn pd_period(variant: LoopVariant) -> f64 {
    if variant.is_bpsk_type() {
        PI
    } else {
        FRAC_PI_2
    }
}

/// Wrap `theta` into `[-period/2, period/2)`.
pub fn wrap_to_period(theta: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    (theta + half).rem_euclid(period) - half
}

/// All loop constants for one variant.
///
/// `omega_n` and `zeta` are stored so that a deserialized parameter set can be
/// checked for consistency with [`validate_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopParams {
    pub omega1: f64,
    pub omega_free: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "Kd")]
    pub kd: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// LPF corner; `None` for the modified loops.
    pub omega3: Option<f64>,
    pub omega_c: f64,
    pub omega_n: f64,
    pub zeta: f64,
    pub delta_omega0: f64,
}

impl LoopParams {
    /// Builds a consistent parameter set, deriving ωC, ωn, ζ and Δω0.
    pub fn derived(
        omega1: f64,
        omega_free: f64,
        k0: f64,
        kd: f64,
        tau1: f64,
        tau2: f64,
        omega3: Option<f64>,
    ) -> Self {
        let omega_n = (k0 * kd / tau1).sqrt();
        LoopParams {
            omega1,
            omega_free,
            k0,
            kd,
            tau1,
            tau2,
            omega3,
            omega_c: 1.0 / tau2,
            omega_n,
            zeta: 0.5 * omega_n * tau2,
            delta_omega0: omega1 - omega_free,
        }
    }

    /// Same loop with a different initial frequency offset (ω1 fixed).
    pub fn with_offset(&self, delta_omega0: f64) -> Self {
        let omega_free = self.omega1 - delta_omega0;
        LoopParams { omega_free, delta_omega0: self.omega1 - omega_free, ..*self }
    }

    /// Loop filter high-frequency gain τ2/τ1.
    pub fn k_h(&self) -> f64 {
        self.tau2 / self.tau1
    }
}

/// One broken [`LoopParams`] invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        return true;
    }
    (a - b).abs() <= tol * scale
}

/// Relative tolerance used by [`validate_params`].
pub const PARAM_REL_TOL: f64 = 1e-9;

/// Checks every invariant of `p` with relative tolerance 1e-9.
pub fn validate_params(p: &LoopParams) -> Vec<Violation> {
    validate_params_with_tol(p, PARAM_REL_TOL)
}

/// As [`validate_params`] but with a caller-chosen relative tolerance for the
/// consistency relations.
pub fn validate_params_with_tol(p: &LoopParams, tol: f64) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut push = |field: &'static str, message: String| v.push(Violation { field, message });
    let finite = [
        ("omega1", p.omega1),
        ("omega_free", p.omega_free),
        ("K0", p.k0),
        ("Kd", p.kd),
        ("tau1", p.tau1),
        ("tau2", p.tau2),
        ("omega_c", p.omega_c),
        ("omega_n", p.omega_n),
        ("zeta", p.zeta),
        ("delta_omega0", p.delta_omega0),
    ];
    for (name, x) in finite {
        if !x.is_finite() {
            push(name, format!("{name} is not finite"));
        }
    }
    for (name, x) in [("tau1", p.tau1), ("tau2", p.tau2), ("K0", p.k0), ("Kd", p.kd)] {
        if !(x > 0.0) {
            push(name, format!("{name} must be positive, got {x}"));
        }
    }
    if let Some(w3) = p.omega3 {
        if !(w3 > 0.0) {
            push("omega3", format!("omega3 must be positive, got {w3}"));
        }
    }
    if !rel_close(p.omega_n * p.omega_n * p.tau1, p.k0 * p.kd, tol) {
        push(
            "omega_n",
            format!(
                "omega_n^2*tau1 = {} but K0*Kd = {}",
                p.omega_n * p.omega_n * p.tau1,
                p.k0 * p.kd
            ),
        );
    }
    if !rel_close(2.0 * p.zeta, p.omega_n * p.tau2, tol) {
        push("zeta", format!("2*zeta = {} but omega_n*tau2 = {}", 2.0 * p.zeta, p.omega_n * p.tau2));
    }
    if !rel_close(p.omega_c * p.tau2, 1.0, tol) {
        push("omega_c", format!("omega_c*tau2 = {} (expected 1)", p.omega_c * p.tau2));
    }
    if p.delta_omega0 != p.omega1 - p.omega_free {
        push(
            "delta_omega0",
            format!("delta_omega0 = {} but omega1 - omega_free = {}", p.delta_omega0, p.omega1 - p.omega_free),
        );
    }
    v
}

/// Baseband state of the phase-domain models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    /// Unwrapped phase error θ1 − θ2.
    pub theta_e: f64,
    /// Loop-filter integrator state.
    pub x_lf: f64,
    pub x_lpf_i: f64,
    pub x_lpf_q: f64,
}

/// Output of a simulation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub t: Vec<f64>,
    /// Unwrapped phase error.
    pub theta_e_series: Vec<f64>,
    pub uf_series: Vec<f64>,
    pub locked: bool,
    pub t_lock: Option<f64>,
    pub pull_in_time: Option<f64>,
    pub cycle_slips: usize,
    pub final_freq_error: f64,
}

/// Counts crossings of the slip boundaries `ref + (k + 1/2)·period` by an
/// unwrapped phase series.
pub fn count_cycle_slips(theta: &[f64], period: f64, reference: f64) -> usize {
    let cell = |th: f64| ((th - reference) / period + 0.5).floor() as i64;
    theta
        .windows(2)
        .map(|w| (cell(w[1]) - cell(w[0])).unsigned_abs() as usize)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_bpsk() -> LoopParams {
        LoopParams {
            omega1: 2.0 * PI * 400e3,
            omega_free: 2.0 * PI * 400e3,
            k0: 1_262_000.0,
            kd: 1.0,
            tau1: 20e-6,
            tau2: 4e-6,
            omega3: Some(1_256_000.0),
            omega_c: 250_000.0,
            omega_n: 251_000.0,
            zeta: 0.5,
            delta_omega0: 0.0,
        }
    }

    #[test]
    fn pd_periods() {
        assert_eq!(pd_period(LoopVariant::CONVENTIONAL_BPSK), PI);
        assert_eq!(pd_period(LoopVariant::CONVENTIONAL_QPSK), FRAC_PI_2);
        assert_eq!(pd_period(LoopVariant::MODIFIED_BPSK), PI);
        assert_eq!(pd_period(LoopVariant::MODIFIED_QPSK), FRAC_PI_2);
        assert_eq!(pd_period(LoopVariant::MODIFIED_QPSK_IMAG), FRAC_PI_2);
    }

    #[test]
    fn flavor_compatibility() {
        assert!(LoopVariant::new(LoopTag::ConventionalBpsk, PdFlavor::SgnCross).is_err());
        assert!(LoopVariant::new(LoopTag::ConventionalQpsk, PdFlavor::ComplexPhase).is_err());
        assert!(LoopVariant::new(LoopTag::ModifiedBpsk, PdFlavor::MulMul).is_err());
        assert!(LoopVariant::new(LoopTag::ModifiedQpsk, PdFlavor::ComplexImag).is_ok());
        let bad = r#"{"tag":"ConventionalBpsk","pd_flavor":"ComplexImag"}"#;
        assert!(serde_json::from_str::<LoopVariant>(bad).is_err());
    }

    #[test]
    fn rounded_reference_values_pass_loose_check() {
        let p = reference_bpsk();
        // ωn = √(K0/τ1) is 251'197, the rounded 251'000 only passes at 1e-2.
        assert!(validate_params_with_tol(&p, 1e-2).is_empty());
        assert!(!validate_params(&p).is_empty());
    }

    #[test]
    fn zero_omega_n_is_a_violation() {
        let p = LoopParams { omega_n: 0.0, ..reference_bpsk() };
        let v = validate_params(&p);
        assert!(v.iter().any(|v| v.field == "omega_n"));
    }

    #[test]
    fn qpsk_reference_consistent() {
        let p = LoopParams::derived(1.0, 1.0, 631_000.0, 2.0, 20e-6, 4e-6, Some(1_256_000.0));
        assert!(validate_params(&p).is_empty());
        assert!((p.omega_n - 251_197.1).abs() < 1.0);
    }

    #[test]
    fn derived_round_trip() {
        let p = LoopParams::derived(3.0, 1.0, 1_262_000.0, 1.0, 20e-6, 4e-6, None);
        let k0kd = p.omega_n * p.omega_n * p.tau1;
        let tau2 = 2.0 * p.zeta / p.omega_n;
        assert!(((k0kd - p.k0 * p.kd) / k0kd).abs() < 1e-12);
        assert!(((tau2 - p.tau2) / tau2).abs() < 1e-12);
        assert_eq!(p.delta_omega0, 2.0);
    }

    #[test]
    fn slip_counting() {
        let th: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1 * PI).collect();
        assert_eq!(count_cycle_slips(&th, PI, 0.0), 10);
        assert_eq!(count_cycle_slips(&[0.0, 0.1, -0.1], PI, 0.0), 0);
    }

    #[test]
    fn wrapping() {
        assert!((wrap_to_period(PI + 0.1, PI) - 0.1).abs() < 1e-12);
        assert!((wrap_to_period(-0.1, FRAC_PI_2) + 0.1).abs() < 1e-12);
    }
}
