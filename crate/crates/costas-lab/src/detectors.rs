//! Phase-detector characteristics.
//!
//! Baseband nonlinearities φ(θe) feed the ODE models; the sample-level
//! detectors operate on LPF outputs (conventional loops) or on the derotated
//! pre-envelope `um` (modified loops).

use crate::core_types::{pd_period, LoopTag, LoopVariant, PdFlavor};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("phase of a zero phasor is undefined")]
    UndefinedPhase,
    #[error("modulation amplitude must be positive, got {0}")]
    BadAmplitude(f64),
}

/// Hard limiter with `sgn(0) = +1`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Reduces `theta` into `(-period/2, period/2]`.
#[inline]
fn fold_right_closed(theta: f64, period: f64) -> f64 {
    theta - period * ((theta - 0.5 * period) / period).ceil()
}

/// `(m²/2)·sin(2θe)`.
pub fn phi_bpsk(theta_e: f64, m: f64) -> f64 {
    0.5 * m * m * (2.0 * theta_e).sin()
}

/// Chopped sine of the conventional QPSK loop: `2m·sin θe` on
/// `(-π/4, π/4]`, continued π/2-periodically. Boundary points take the
/// left-branch limit.
pub fn phi_qpsk(theta_e: f64, m: f64) -> f64 {
    2.0 * m * fold_right_closed(theta_e, FRAC_PI_2).sin()
}

/// Conventional BPSK detector `I2·Q2`.
pub fn pd_conventional_bpsk(i2: f64, q2: f64) -> f64 {
    i2 * q2
}

/// Conventional QPSK detector `−Q2·sgn(I2) + I2·sgn(Q2)`.
pub fn pd_conventional_qpsk(i2: f64, q2: f64) -> f64 {
    -q2 * sgn(i2) + i2 * sgn(q2)
}

fn nonzero(um: Complex64) -> Result<(), DetectorError> {
    if um.re == 0.0 && um.im == 0.0 {
        Err(DetectorError::UndefinedPhase)
    } else {
        Ok(())
    }
}

/// Modified BPSK detector: returns `(ud, data)` with `ud ∈ (−π/2, π/2]`.
pub fn pd_modified_bpsk(um: Complex64) -> Result<(f64, f64), DetectorError> {
    nonzero(um)?;
    let data = sgn(um.re);
    let ud = fold_right_closed((um * data).arg(), PI);
    Ok((ud, data))
}

/// Modified QPSK detector: returns `(ud, dataI, dataQ)` with
/// `ud ∈ (−π/4, π/4]`.
pub fn pd_modified_qpsk(um: Complex64) -> Result<(f64, f64, f64), DetectorError> {
    nonzero(um)?;
    let di = sgn(um.re);
    let dq = sgn(um.im);
    let ud = fold_right_closed((um * Complex64::new(di, -dq)).arg(), FRAC_PI_2);
    Ok((ud, di, dq))
}

/// Alternative modified-loop detector using the imaginary part of the
/// data-stripped phasor. Gain is `m` for BPSK and `2m` for QPSK.
pub fn pd_modified_imag(um: Complex64, variant: LoopVariant) -> f64 {
    let di = sgn(um.re);
    if variant.is_bpsk_type() {
        (um * di).im
    } else {
        (um * Complex64::new(di, -sgn(um.im))).im
    }
}

/// Baseband detector characteristic for one variant and amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdCharacteristic {
    pub variant: LoopVariant,
    pub m: f64,
}

impl PdCharacteristic {
    pub fn new(variant: LoopVariant, m: f64) -> Result<Self, DetectorError> {
        if m > 0.0 && m.is_finite() {
            Ok(PdCharacteristic { variant, m })
        } else {
            Err(DetectorError::BadAmplitude(m))
        }
    }

    /// Small-signal slope at the lock point.
    pub fn kd(&self) -> f64 {
        self.variant.kd(self.m)
    }

    pub fn period(&self) -> f64 {
        pd_period(self.variant)
    }

    /// φ(θe).
    pub fn phi(&self, theta_e: f64) -> f64 {
        let m = self.m;
        match (self.variant.tag(), self.variant.pd_flavor()) {
            (LoopTag::ConventionalBpsk, _) => phi_bpsk(theta_e, m),
            (LoopTag::ConventionalQpsk, _) => phi_qpsk(theta_e, m),
            (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => {
                let r = fold_right_closed(theta_e, PI);
                m * r.sin()
            }
            (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => 2.0 * m * fold_right_closed(theta_e, FRAC_PI_2).sin(),
            (LoopTag::ModifiedBpsk, _) => fold_right_closed(theta_e, PI),
            (LoopTag::ModifiedQpsk, _) => fold_right_closed(theta_e, FRAC_PI_2),
        }
    }

    /// dφ/dθe away from the fold points.
    pub fn slope(&self, theta_e: f64) -> f64 {
        let m = self.m;
        match (self.variant.tag(), self.variant.pd_flavor()) {
            (LoopTag::ConventionalBpsk, _) => m * m * (2.0 * theta_e).cos(),
            (LoopTag::ConventionalQpsk, _) => 2.0 * m * fold_right_closed(theta_e, FRAC_PI_2).cos(),
            (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => m * fold_right_closed(theta_e, PI).cos(),
            (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => 2.0 * m * fold_right_closed(theta_e, FRAC_PI_2).cos(),
            (LoopTag::ModifiedBpsk, _) | (LoopTag::ModifiedQpsk, _) => 1.0,
        }
    }

    /// Largest |φ| over one period.
    pub fn max_abs(&self) -> f64 {
        let m = self.m;
        match (self.variant.tag(), self.variant.pd_flavor()) {
            (LoopTag::ConventionalBpsk, _) => 0.5 * m * m,
            (LoopTag::ConventionalQpsk, _) => 2.0 * m * FRAC_PI_4.sin(),
            (LoopTag::ModifiedBpsk, PdFlavor::ComplexImag) => m,
            (LoopTag::ModifiedQpsk, PdFlavor::ComplexImag) => 2.0 * m * FRAC_PI_4.sin(),
            (LoopTag::ModifiedBpsk, _) => FRAC_PI_2,
            (LoopTag::ModifiedQpsk, _) => FRAC_PI_4,
        }
    }
}
