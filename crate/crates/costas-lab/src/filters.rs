//! Continuous-time loop filters, their state-space realizations, bilinear
//! discretization and a Routh–Hurwitz stability test.
//!
//! Polynomials are stored in ascending powers: `[c0, c1, c2, ...]` means
//! `c0 + c1·s + c2·s² + ...`. Discrete coefficients are in powers of z⁻¹.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("transfer function has a pole at s = j{omega}")]
    PoleOnAxis { omega: f64 },
    #[error("transfer function has a pole at the bilinear singularity s = 2/T")]
    BilinearSingularity,
    #[error("improper transfer function (numerator degree {num} > denominator degree {den})")]
    Improper { num: usize, den: usize },
}

/// Rational transfer function `num(s)/den(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTF {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

fn degree(p: &[f64]) -> Option<usize> {
    p.iter().rposition(|&c| c != 0.0)
}

fn poly_eval(p: &[f64], s: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn require_positive(name: &str, x: f64) -> Result<(), FilterError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(FilterError::Domain(format!("{name} must be positive and finite, got {x}")))
    }
}

impl RationalTF {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, FilterError> {
        let dd = degree(&den).ok_or_else(|| FilterError::Domain("zero denominator".into()))?;
        let nd = degree(&num).unwrap_or(0);
        if nd > dd + 1 {
            return Err(FilterError::Improper { num: nd, den: dd });
        }
        Ok(RationalTF { num, den })
    }

    pub fn num_degree(&self) -> usize {
        degree(&self.num).unwrap_or(0)
    }

    pub fn den_degree(&self) -> usize {
        degree(&self.den).unwrap_or(0)
    }

    /// Evaluates `H(s)` at a complex point.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    /// Series connection `self · other`.
    pub fn series(&self, other: &RationalTF) -> RationalTF {
        RationalTF { num: poly_mul(&self.num, &other.num), den: poly_mul(&self.den, &other.den) }
    }
}

/// PI loop filter `(1 + s·τ2)/(s·τ1)`.
pub fn make_pi_filter(tau1: f64, tau2: f64) -> Result<RationalTF, FilterError> {
    require_positive("tau1", tau1)?;
    require_positive("tau2", tau2)?;
    Ok(RationalTF { num: vec![1.0, tau2], den: vec![0.0, tau1] })
}

/// First-order unity-gain lowpass `1/(1 + s/ω3)`.
pub fn make_lpf1(omega3: f64) -> Result<RationalTF, FilterError> {
    require_positive("omega3", omega3)?;
    Ok(RationalTF { num: vec![1.0], den: vec![1.0, 1.0 / omega3] })
}

/// Lead-lag filter `(1 + s·τ2)/(1 + s·τ1)` with τ1 > τ2 > 0.
pub fn make_leadlag(tau1: f64, tau2: f64) -> Result<RationalTF, FilterError> {
    require_positive("tau2", tau2)?;
    if !(tau1 > tau2) {
        return Err(FilterError::Domain(format!("lead-lag needs tau1 > tau2, got {tau1} <= {tau2}")));
    }
    Ok(RationalTF { num: vec![1.0, tau2], den: vec![1.0, tau1] })
}

/// Exact evaluation of `H(jω)`.
pub fn freq_response(tf: &RationalTF, omega: f64) -> Result<Complex64, FilterError> {
    let s = Complex64::new(0.0, omega);
    let d = poly_eval(&tf.den, s);
    let scale: f64 = tf
        .den
        .iter()
        .enumerate()
        .map(|(k, c)| c.abs() * omega.abs().powi(k as i32))
        .fold(0.0, f64::max);
    if d.norm() <= 1e-14 * scale || d.norm() == 0.0 {
        return Err(FilterError::PoleOnAxis { omega });
    }
    Ok(poly_eval(&tf.num, s) / d)
}

/// Prewarped corner `(2/T)·tan(ω·T/2)`.
pub fn prewarp(omega: f64, t: f64) -> f64 {
    2.0 / t * (omega * t / 2.0).tan()
}

/// Scales every nonzero root of `p` by `alpha`, leaving factors of `s` and the
/// low-order gain untouched.
fn scale_corners(p: &[f64], alpha: f64) -> Vec<f64> {
    let m = p.iter().position(|&c| c != 0.0).unwrap_or(0);
    p.iter()
        .enumerate()
        .map(|(k, &c)| if k < m { c } else { c * alpha.powi(-((k - m) as i32)) })
        .collect()
}

/// Coefficients of `Σ c_k·g^k·(1 − z⁻¹)^k·(1 + z⁻¹)^(n−k)` in powers of z⁻¹.
fn tustin_poly(p: &[f64], g: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for (k, &c) in p.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mut term = vec![c * g.powi(k as i32)];
        for _ in 0..k {
            term = poly_mul(&term, &[1.0, -1.0]);
        }
        for _ in k..n {
            term = poly_mul(&term, &[1.0, 1.0]);
        }
        for (i, v) in term.into_iter().enumerate() {
            out[i] += v;
        }
    }
    out
}

/// Bilinear (Tustin) discretization with optional corner prewarping.
///
/// With `prewarp_at = Some(ωx)` every nonzero corner of `tf` is scaled by
/// `ωx,p/ωx`, so a first-order section whose corner is ωx gets exactly the
/// prewarped corner `(2/T)·tan(ωx·T/2)`. Poles and zeros at the origin are
/// kept since the bilinear map sends them to z = 1 exactly.
pub fn bilinear(tf: &RationalTF, t: f64, prewarp_at: Option<f64>) -> Result<DiscreteFilter, FilterError> {
    require_positive("T", t)?;
    let (num, den) = match prewarp_at {
        Some(wx) => {
            require_positive("prewarp frequency", wx)?;
            if wx * t >= std::f64::consts::PI {
                return Err(FilterError::Domain(format!("prewarp frequency {wx} is beyond Nyquist")));
            }
            let alpha = prewarp(wx, t) / wx;
            (scale_corners(&tf.num, alpha), scale_corners(&tf.den, alpha))
        }
        None => (tf.num.clone(), tf.den.clone()),
    };
    let num = if num.is_empty() { vec![0.0] } else { num };
    let nd = degree(&num).unwrap_or(0);
    let dd = degree(&den).ok_or_else(|| FilterError::Domain("zero denominator".into()))?;
    if nd > dd {
        return Err(FilterError::Improper { num: nd, den: dd });
    }
    let g = 2.0 / t;
    let b = tustin_poly(&num[..=nd], g, dd);
    let a = tustin_poly(&den[..=dd], g, dd);
    let scale = a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if a[0].abs() <= 1e-12 * scale {
        return Err(FilterError::BilinearSingularity);
    }
    Ok(DiscreteFilter::new(b, a, t))
}

/// Rational discrete-time filter in direct form II transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFilter {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub t: f64,
    state: Vec<f64>,
}

/// JSON coefficient export shape `{"b": [...], "a": [...], "T": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(rename = "T")]
    pub t: f64,
}

impl DiscreteFilter {
    /// Normalizes so that `a[0] = 1` and pads both vectors to equal length.
    pub fn new(mut b: Vec<f64>, mut a: Vec<f64>, t: f64) -> Self {
        let a0 = a[0];
        b.iter_mut().for_each(|c| *c /= a0);
        a.iter_mut().for_each(|c| *c /= a0);
        let n = a.len().max(b.len());
        a.resize(n, 0.0);
        b.resize(n, 0.0);
        DiscreteFilter { b, a, t, state: vec![0.0; n - 1] }
    }

    /// Backward-difference integrator `gain·T/(1 − z⁻¹)`.
    pub fn backward_integrator(gain: f64, t: f64) -> Self {
        DiscreteFilter::new(vec![gain * t, 0.0], vec![1.0, -1.0], t)
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0.0);
    }

    /// Advances one sample.
    #[inline]
    pub fn step(&mut self, u: f64) -> f64 {
        let n = self.state.len();
        if n == 0 {
            return self.b[0] * u;
        }
        let y = self.b[0] * u + self.state[0];
        for i in 0..n - 1 {
            self.state[i] = self.b[i + 1] * u - self.a[i + 1] * y + self.state[i + 1];
        }
        self.state[n - 1] = self.b[n] * u - self.a[n] * y;
        y
    }

    /// Response at `z = e^{jωT}`.
    pub fn response_at(&self, omega: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -omega * self.t);
        let ev = |p: &[f64]| p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * zinv + c);
        ev(&self.b) / ev(&self.a)
    }

    /// Poles: roots in z of `z^n·A(z⁻¹)`.
    pub fn poles(&self) -> Vec<Complex64> {
        // a0 z^n + a1 z^(n-1) + ... + an, ascending: [an, ..., a0]
        let asc: Vec<f64> = self.a.iter().rev().cloned().collect();
        poly_roots(&asc)
    }

    pub fn coefficients(&self) -> FilterCoefficients {
        FilterCoefficients { b: self.b.clone(), a: self.a.clone(), t: self.t }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.coefficients()).expect("coefficients serialize")
    }
}

/// Free-function form of [`DiscreteFilter::step`].
pub fn step_filter(f: &mut DiscreteFilter, u: f64) -> f64 {
    f.step(u)
}

/// Roots of an ascending real polynomial by Durand–Kerner iteration.
pub fn poly_roots(p: &[f64]) -> Vec<Complex64> {
    let Some(n) = degree(p) else { return Vec::new() };
    let lead = p[n];
    let c: Vec<f64> = p[..=n].iter().map(|x| x / lead).collect();
    let radius = 1.0 + c[..n].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let seed = Complex64::from_polar(1.0, 0.4);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * (0.5 * radius)).collect();
    let eval = |s: Complex64| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &x| acc * s + x);
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm() / (1.0 + z[i].norm()));
        }
        if delta < 1e-15 {
            break;
        }
    }
    z
}

/// State-space realization `ẋ = A·x + b·u`, `y = c·x + h·u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceFilter {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub h: f64,
    pub x: Vec<f64>,
}

impl StateSpaceFilter {
    /// Controllable canonical realization of a proper transfer function.
    pub fn from_tf(tf: &RationalTF) -> Result<Self, FilterError> {
        let n = tf.den_degree();
        let nd = tf.num_degree();
        if nd > n {
            return Err(FilterError::Improper { num: nd, den: n });
        }
        let lead = tf.den[n];
        let a_c: Vec<f64> = (0..n).map(|k| tf.den[k] / lead).collect();
        let num_c = |k: usize| tf.num.get(k).copied().unwrap_or(0.0) / lead;
        let h = num_c(n);
        let c: Vec<f64> = (0..n).map(|k| num_c(k) - h * a_c[k]).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n.saturating_sub(1) {
            a[i][i + 1] = 1.0;
        }
        if n > 0 {
            for k in 0..n {
                a[n - 1][k] = -a_c[k];
            }
        }
        let mut b = vec![0.0; n];
        if n > 0 {
            b[n - 1] = 1.0;
        }
        Ok(StateSpaceFilter { a, b, c, h, x: vec![0.0; n] })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn derivative(&self, x: &[f64], u: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.a[i].iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b[i] * u)
            .collect()
    }

    pub fn output(&self, u: f64) -> f64 {
        self.c.iter().zip(&self.x).map(|(c, x)| c * x).sum::<f64>() + self.h * u
    }

    /// One RK4 step with `u` held constant over `dt`; returns the output at
    /// the end of the step.
    pub fn step_rk4(&mut self, u: f64, dt: f64) -> f64 {
        let x0 = self.x.clone();
        let add = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + s * k).collect() };
        let k1 = self.derivative(&x0, u);
        let k2 = self.derivative(&add(&x0, &k1, dt / 2.0), u);
        let k3 = self.derivative(&add(&x0, &k2, dt / 2.0), u);
        let k4 = self.derivative(&add(&x0, &k3, dt), u);
        for i in 0..self.dim() {
            self.x[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.output(u)
    }

    /// `c·(sI − A)⁻¹·b + h` for the companion form, via the equivalent TF.
    pub fn transfer_function(&self) -> RationalTF {
        let n = self.dim();
        let mut den: Vec<f64> = (0..n).map(|k| -self.a[n - 1][k]).collect();
        den.push(1.0);
        let mut num: Vec<f64> = (0..n).map(|k| self.c[k] + self.h * den[k]).collect();
        num.push(self.h);
        RationalTF { num, den }
    }
}

/// Result of a Routh–Hurwitz test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
    /// A first-column entry is zero or within 1e-8 of a sign change.
    Marginal,
}

const RH_EPS: f64 = 1e-30;
const RH_MARGIN: f64 = 1e-8;

/// Routh–Hurwitz classification of an ascending-coefficient polynomial.
///
/// The variable is rescaled so the constant and leading coefficients have
/// equal magnitude before building the array; zero pivots are replaced by
/// ε = 1e-30 and the result is reported as marginal.
pub fn routh_hurwitz(poly: &[f64]) -> Result<Stability, FilterError> {
    if poly.iter().any(|c| !c.is_finite()) {
        return Err(FilterError::Domain("non-finite coefficient".into()));
    }
    let n = degree(poly).ok_or_else(|| FilterError::Domain("all-zero polynomial".into()))?;
    if n == 0 {
        return Err(FilterError::Domain("polynomial has degree 0".into()));
    }
    let sign = poly[n].signum();
    let mut p: Vec<f64> = poly[..=n].iter().map(|c| c * sign).collect();
    if p[0] == 0.0 {
        return Ok(Stability::Marginal);
    }
    if p[0] < 0.0 {
        return Ok(Stability::Unstable);
    }
    let sigma = (p[0] / p[n]).powf(1.0 / n as f64);
    for (k, c) in p.iter_mut().enumerate() {
        *c *= sigma.powi(k as i32);
    }
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    p.iter_mut().for_each(|c| *c /= scale);

    // rows in descending powers
    let desc: Vec<f64> = p.iter().rev().cloned().collect();
    let width = n / 2 + 1;
    let mut r0: Vec<f64> = (0..width).map(|i| desc.get(2 * i).copied().unwrap_or(0.0)).collect();
    let mut r1: Vec<f64> = (0..width).map(|i| desc.get(2 * i + 1).copied().unwrap_or(0.0)).collect();
    let mut column = vec![r0[0]];
    let mut degenerate = false;
    for row_deg in (0..n).rev() {
        if r1.iter().all(|&x| x.abs() <= RH_EPS) {
            // zero row: continue with the derivative of the auxiliary polynomial
            degenerate = true;
            let aux_deg = row_deg + 1;
            r1 = (0..width)
                .map(|i| {
                    let pow = aux_deg as i64 - 2 * i as i64;
                    if pow > 0 {
                        r0[i] * pow as f64
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        if r1[0].abs() <= RH_EPS {
            degenerate = true;
            r1[0] = RH_EPS;
        }
        column.push(r1[0]);
        let next: Vec<f64> = (0..width)
            .map(|i| {
                let a = r0.get(i + 1).copied().unwrap_or(0.0);
                let b = r1.get(i + 1).copied().unwrap_or(0.0);
                (r1[0] * a - r0[0] * b) / r1[0]
            })
            .collect();
        r0 = r1;
        r1 = next;
    }
    for &e in &column {
        if e < -RH_MARGIN {
            return Ok(Stability::Unstable);
        }
        if e.abs() <= RH_MARGIN {
            return Ok(Stability::Marginal);
        }
    }
    Ok(if degenerate { Stability::Marginal } else { Stability::Stable })
}

/// True iff every root has a strictly negative real part.
pub fn routh_hurwitz_stable(poly: &[f64]) -> Result<bool, FilterError> {
    Ok(routh_hurwitz(poly)? == Stability::Stable)
}
