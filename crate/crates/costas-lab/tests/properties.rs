//! Property suites over detectors, filters, the integrator and the phase
//! model. No reference figures; every check is an invariant.

use approx::assert_relative_eq;
use costas_lab::analysis::{design, hold_in_leadlag, leadlag_char_poly, leadlag_cos2, DesignSpec};
use costas_lab::baseband::{jacobian_fd, ClassicPhaseModel};
use costas_lab::core_types::{count_cycle_slips, pd_period, wrap_to_period, LoopVariant};
use costas_lab::detectors::PdCharacteristic;
use costas_lab::filters::{bilinear, make_lpf1, prewarp, routh_hurwitz_stable, RationalTF};
use costas_lab::ode_engine::{integrate, FnRhs, IntegratorConfig};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::{PI, SQRT_2};

const VARIANTS: [LoopVariant; 6] = [
    LoopVariant::CONVENTIONAL_BPSK,
    LoopVariant::CONVENTIONAL_QPSK,
    LoopVariant::MODIFIED_BPSK,
    LoopVariant::MODIFIED_QPSK,
    LoopVariant::MODIFIED_BPSK_IMAG,
    LoopVariant::MODIFIED_QPSK_IMAG,
];

fn pd() -> impl Strategy<Value = PdCharacteristic> {
    (0..VARIANTS.len(), 0.2f64..3.0).prop_map(|(i, m)| PdCharacteristic::new(VARIANTS[i], m).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn pd_is_periodic(pd in pd(), th in -20.0f64..20.0, k in -5i32..=5) {
        let shifted = pd.phi(th + k as f64 * pd.period());
        prop_assert!((shifted - pd.phi(th)).abs() <= 1e-9 * (1.0 + 20.0 * k.abs() as f64));
    }

    #[test]
    fn pd_is_odd(pd in pd(), u in -0.999f64..0.999) {
        let th = u * pd.period() / 2.0;
        prop_assert!((pd.phi(-th) + pd.phi(th)).abs() <= 1e-12);
    }

    #[test]
    fn pd_small_angle_gain(pd in pd(), e in -7.0f64..-4.0) {
        let eps = 10f64.powf(e);
        prop_assert!((pd.phi(eps) / eps / pd.kd() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn pd_bounded(pd in pd(), th in -20.0f64..20.0) {
        prop_assert!(pd.phi(th).abs() <= pd.max_abs() * (1.0 + 1e-12));
    }

    #[test]
    fn wrap_lands_in_one_period(th in -1e3f64..1e3, i in 0usize..6) {
        let p = pd_period(VARIANTS[i]);
        let w = wrap_to_period(th, p);
        prop_assert!(w >= -p / 2.0 && w < p / 2.0);
        let k = ((th - w) / p).round();
        prop_assert!((th - w - k * p).abs() <= 1e-9);
    }
}

fn pole_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-7.0f64..-3.0, -4.0f64..-0.3, -4.0f64..-0.3, -4.0f64..0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn bilinear_maps_poles((lt, a, b, c) in pole_strategy()) {
        let t = 10f64.powf(lt);
        let nyq = PI / t;
        let (p1, p2, z) = (-nyq * 10f64.powf(a), -nyq * 10f64.powf(b), -nyq * 10f64.powf(c));
        let tf = RationalTF::new(vec![-z, 1.0], vec![p1 * p2, -(p1 + p2), 1.0]).unwrap();
        let d = bilinear(&tf, t, None).unwrap();
        let mut got: Vec<f64> = d.poles().iter().map(|c| c.re).collect();
        let mut want: Vec<f64> = [p1, p2].iter().map(|&p| (1.0 + p * t / 2.0) / (1.0 - p * t / 2.0)).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-7, "{got:?} vs {want:?}");
            prop_assert!(g.abs() < 1.0);
        }
    }

    #[test]
    fn bilinear_keeps_dc_gain((lt, a, b, c) in pole_strategy()) {
        let t = 10f64.powf(lt);
        let nyq = PI / t;
        let (p1, p2, z) = (-nyq * 10f64.powf(a), -nyq * 10f64.powf(b), -nyq * 10f64.powf(c));
        let tf = RationalTF::new(vec![-z, 1.0], vec![p1 * p2, -(p1 + p2), 1.0]).unwrap();
        let d = bilinear(&tf, t, None).unwrap();
        let want = tf.eval(Complex64::new(0.0, 0.0));
        // A(1) and B(1) are differences of O(1) coefficients of size
        // ~ (p1·T)(p2·T) and ~ z·T
        let cond = 1.0 / ((p1 * t).abs() * (p2 * t).abs()).min(1.0) + 1.0 / (z * t).abs().min(1.0);
        prop_assert!((d.response_at(0.0) - want).norm() <= 1e-13 * cond * want.norm());
    }

    #[test]
    fn prewarped_corner_is_a_fixed_point(lt in -7.0f64..-3.0, a in -4.0f64..-0.3) {
        let t = 10f64.powf(lt);
        let wx = PI / t * 10f64.powf(a);
        let d = bilinear(&make_lpf1(wx).unwrap(), t, Some(wx)).unwrap();
        prop_assert!((d.response_at(wx).norm() - 1.0 / SQRT_2).abs() <= 1e-9);
        let wp = prewarp(wx, t);
        prop_assert!(wp >= wx);
        prop_assert!(((2.0 / t) * (wx * t / 2.0).tan() - wp).abs() <= 1e-12 * wp);
    }

    #[test]
    fn hold_in_membership_matches_routh(
        lt1 in -5.0f64..-3.0, r in 0.02f64..0.9, lw in -1.5f64..1.0, lk in 3.0f64..7.0, u in 0.0f64..1.2,
    ) {
        let tau1 = 10f64.powf(lt1);
        let tau2 = tau1 * r;
        let omega3 = (tau1 - tau2) / (tau1 * tau2) * 10f64.powf(lw);
        let a = 10f64.powf(lk);
        let dw = 0.5 * a * u;
        let h = hold_in_leadlag(a, 1.0, tau1, tau2, omega3).unwrap();
        let direct = leadlag_cos2(a, dw)
            .is_some_and(|c| routh_hurwitz_stable(&leadlag_char_poly(a, tau1, tau2, omega3, c)).unwrap_or(false));
        let near = h.intervals.iter().any(|&(lo, hi)| {
            (dw - lo).abs() <= 1e-6 * a || hi.is_some_and(|hi| (dw - hi).abs() <= 1e-6 * a)
        });
        prop_assert!(h.contains(dw) == direct || near);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jacobian_matches_finite_differences(i in 0usize..4, dw in -2e5f64..2e5, u in -0.8f64..0.8, v in -1.0f64..1.0) {
        let variant = LoopVariant::PRIMARY[i];
        let p = design(&DesignSpec::new(400e3, 100e3, variant)).unwrap().with_offset(dw);
        let m = ClassicPhaseModel::new(p, PdCharacteristic::new(variant, 1.0).unwrap());
        let s = [v * p.tau1 * 2e5 / p.k0, u * m.pd.period() / 2.0];
        let ja = m.jacobian_analytic(s);
        let jf = jacobian_fd(&m, s, 1e-6);
        for r in 0..2 {
            for c in 0..2 {
                prop_assert!((ja[r][c] - jf[r][c]).abs() <= 1e-5 * ja[r][c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn slips_count_whole_periods(k in 0usize..6, i in 0usize..6) {
        let p = pd_period(VARIANTS[i]);
        let theta: Vec<f64> = (0..=400).map(|j| p * k as f64 * j as f64 / 400.0).collect();
        prop_assert_eq!(count_cycle_slips(&theta, p, 0.0), k);
    }
}

fn rk4_endpoint(h: f64) -> [f64; 2] {
    let mut rhs = FnRhs::new(2, |_t, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -y[0] - 0.3 * y[1] - 0.5 * y[0].sin();
    });
    let s = integrate(&mut rhs, &[1.0, 0.0], &IntegratorConfig::rk4(h, 4.0), None).unwrap();
    [s.final_state[0], s.final_state[1]]
}

#[test]
fn rk4_error_drops_sixteenfold() {
    let fine = rk4_endpoint(1e-4);
    let err = |h: f64| {
        let y = rk4_endpoint(h);
        ((y[0] - fine[0]).powi(2) + (y[1] - fine[1]).powi(2)).sqrt()
    };
    for h in [0.2, 0.1] {
        let factor = err(h) / err(h / 2.0);
        assert!((12.0..=20.0).contains(&factor), "h = {h}: factor {factor}");
    }
}

#[test]
fn linear_rk4_matches_closed_form() {
    let mut rhs = FnRhs::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -2.0 * y[0]);
    let s = integrate(&mut rhs, &[1.0], &IntegratorConfig::rk4(1e-3, 1.0), None).unwrap();
    assert_relative_eq!(s.final_state[0], (-2.0f64).exp(), max_relative = 1e-11);
}
