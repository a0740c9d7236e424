//! Measured counterparts of the analytical statements about the model:
//! the conserved `e = u_x + w rho_phi` and the threshold it decides,
//! momentum/energy/V2 budgets, alignment amplitude and its decay rate,
//! relative entropy with the Csiszar-Kullback sandwich, the limiting-profile
//! bound and the small-data conditions.
//!
//! The domain has measure 1, so `rho_bar = mass` and the Csiszar-Kullback
//! lower constant is `1/2`.

use serde::Serialize;
use thiserror::Error;

use crate::convolution::KernelTable;
use crate::scalar::Scalar;
use crate::stepper::SimState;

/// Additive slack on both sides of the Csiszar-Kullback sandwich.
pub const CK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("density is non-positive ({value:e}) at x = {x}")]
    NonPositiveDensity { value: f64, x: f64 },
    #[error("decay fit needs at least 3 positive samples in the window, got {0}")]
    DegenerateSeries(usize),
}

/// Per-time snapshot of bulk quantities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
    pub v2: f64,
    pub amplitude: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub rho_min: f64,
    pub rho_phi_min: f64,
    /// `None` when the density is not positive at every quadrature point.
    pub entropy_h: Option<f64>,
    pub l1_dev: f64,
    pub dxu_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EField {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub argmin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GlobalExistencePredicted,
    BlowUpPredicted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdVerdict {
    pub e0_min: f64,
    pub e0_max: f64,
    pub argmin: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyReport {
    pub mass: f64,
    pub rho_bar: f64,
    /// `int rho log(rho / rho_bar)`; `None` for non-positive densities.
    pub h: Option<f64>,
    /// `(1/2) ||rho - rho_bar||_1^2`
    pub ck_lower: f64,
    /// `||rho - rho_bar||_2^2`
    pub ck_upper: f64,
    pub l1_dev: f64,
    pub holds: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyBound {
    pub q_tilde: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub feasible: bool,
    /// Bound on the limiting L1 distance to the uniform profile.
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmallDataReport {
    pub a0: f64,
    pub u0_inf: f64,
    pub eta: f64,
    pub epsilon_max: f64,
    /// `epsilon` at which the conditions were tested.
    pub epsilon: f64,
    pub satisfied: bool,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub fitted_rate: f64,
    pub theoretical_rate: f64,
    pub samples: usize,
}

/// `rho_phi` at the element-interior sample points.
fn rho_phi_at_samples<S: Scalar>(state: &SimState<S>, table: &KernelTable<S>) -> Vec<S> {
    table.convolve_at_samples(&state.rho.at_quad())
}

fn min_max_arg(xs: &[f64], values: &[f64]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut arg = f64::NAN;
    for (&x, &v) in xs.iter().zip(values) {
        if v < lo {
            lo = v;
            arg = x;
        }
        hi = hi.max(v);
    }
    (lo, hi, arg)
}

/// `e = u_x + w rho_phi` at the element-interior sample points.
pub fn e_field<S: Scalar>(state: &SimState<S>, table: &KernelTable<S>) -> EField {
    let rho_phi = rho_phi_at_samples(state, table);
    e_field_with(state, &rho_phi)
}

fn e_field_with<S: Scalar>(state: &SimState<S>, rho_phi: &[S]) -> EField {
    let du = state.u.deriv_at_samples();
    let w = state.w.at_samples();
    let values: Vec<f64> = du
        .iter()
        .zip(&w)
        .zip(rho_phi)
        .map(|((d, w), r)| (*d + *w * *r).as_f64())
        .collect();
    let x: Vec<f64> = state
        .mesh()
        .sample_points()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let (min, max, argmin) = min_max_arg(&x, &values);
    EField {
        x,
        values,
        min,
        max,
        argmin,
    }
}

/// Sign of the initial `e` decides global existence versus blow-up.
pub fn classify_threshold<S: Scalar>(
    initial: &SimState<S>,
    table: &KernelTable<S>,
) -> ThresholdVerdict {
    let e = e_field(initial, table);
    ThresholdVerdict {
        e0_min: e.min,
        e0_max: e.max,
        argmin: e.argmin,
        verdict: if e.min >= 0.0 {
            Verdict::GlobalExistencePredicted
        } else {
            Verdict::BlowUpPredicted
        },
    }
}

/// Relative entropy against the uniform profile of equal mass and its
/// Csiszar-Kullback bracket.
pub fn relative_entropy<S: Scalar>(state: &SimState<S>) -> EntropyReport {
    let mesh = state.mesh();
    let rho_q = state.rho.at_quad();
    let mass = mesh.integrate_samples(&rho_q);
    let rho_bar = mass;
    let dev: Vec<S> = rho_q.iter().map(|r| *r - rho_bar).collect();
    let l1_dev = mesh
        .integrate_samples(&dev.iter().map(|d| d.abs()).collect::<Vec<_>>())
        .as_f64();
    let ck_upper = mesh
        .integrate_samples(&dev.iter().map(|d| *d * *d).collect::<Vec<_>>())
        .as_f64();
    let ck_lower = 0.5 * l1_dev * l1_dev;
    let positive = rho_q.iter().all(|r| *r > S::zero()) && rho_bar > S::zero();
    let h = positive.then(|| {
        let integrand: Vec<S> = rho_q.iter().map(|r| *r * (*r / rho_bar).ln()).collect();
        mesh.integrate_samples(&integrand).as_f64()
    });
    let holds = h.map(|h| {
        let mid = rho_bar.as_f64() * h;
        ck_lower <= mid + CK_TOLERANCE && mid <= ck_upper + CK_TOLERANCE
    });
    EntropyReport {
        mass: mass.as_f64(),
        rho_bar: rho_bar.as_f64(),
        h,
        ck_lower,
        ck_upper,
        l1_dev,
        holds,
    }
}

/// Bulk quantities of a state.
pub fn bulk_stats<S: Scalar>(state: &SimState<S>, table: &KernelTable<S>) -> DiagnosticsRecord {
    let mesh = state.mesh();
    let rho_q = state.rho.at_quad();
    let u_q = state.u.at_quad();
    let mass = mesh.integrate_samples(&rho_q).as_f64();
    let momentum = mesh
        .integrate_samples(
            &rho_q
                .iter()
                .zip(&u_q)
                .map(|(r, u)| *r * *u)
                .collect::<Vec<_>>(),
        )
        .as_f64();
    let energy = 0.5
        * mesh
            .integrate_samples(
                &rho_q
                    .iter()
                    .zip(&u_q)
                    .map(|(r, u)| *r * *u * *u)
                    .collect::<Vec<_>>(),
            )
            .as_f64();
    let v2 = energy - momentum * momentum / (2.0 * mass);
    let (u_lo, u_hi) = state.u.range();
    let rho_phi = rho_phi_at_samples(state, table);
    let e = e_field_with(state, &rho_phi);
    let entropy = relative_entropy(state);
    let dxu_max = state
        .u
        .deriv_at_samples()
        .iter()
        .fold(0.0f64, |m, d| m.max(d.as_f64().abs()));
    DiagnosticsRecord {
        t: state.t.as_f64(),
        mass,
        momentum,
        energy,
        v2,
        amplitude: (u_hi - u_lo).as_f64(),
        e_min: e.min,
        e_max: e.max,
        rho_min: state.rho.range().0.as_f64(),
        rho_phi_min: rho_phi.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64())),
        entropy_h: entropy.h,
        l1_dev: entropy.l1_dev,
        dxu_max,
    }
}

/// Bound on the limiting distance to the uniform distribution.
///
/// `e~ = u_x + w(x) int (rho(y) - rho(x)) phi_h(x - y) dy`, `q~ = e~ / rho`,
/// `Q~ = max |q~|` over the sample points.
pub fn entropy_bound<S: Scalar>(
    state: &SimState<S>,
    table: &KernelTable<S>,
    c_param: f64,
) -> Result<EntropyBound, DiagnosticsError> {
    let mesh = state.mesh();
    let rho = state.rho.at_samples();
    let xs = mesh.sample_points();
    if let Some((i, r)) = rho.iter().enumerate().find(|(_, r)| !(**r > S::zero())) {
        return Err(DiagnosticsError::NonPositiveDensity {
            value: r.as_f64(),
            x: xs[i].as_f64(),
        });
    }
    let rho_q = state.rho.at_quad();
    let rho_phi = table.convolve_at_samples(&rho_q);
    // same quadrature for both halves so a uniform density gives exactly 0
    let ones_phi = table.convolve_at_samples(&vec![S::one(); rho_q.len()]);
    let du = state.u.deriv_at_samples();
    let w = state.w.at_samples();
    let q_tilde = (0..rho.len())
        .map(|i| {
            let e_tilde = du[i] + w[i] * (rho_phi[i] - rho[i] * ones_phi[i]);
            (e_tilde / rho[i]).abs().as_f64()
        })
        .fold(0.0f64, f64::max);
    let (w_lo, w_hi) = state.w.range();
    let (w_minus, w_plus) = (w_lo.as_f64(), w_hi.as_f64());
    let kc = table.constants();
    let mass = mesh.integrate_samples(&rho_q).as_f64();
    let denom = w_plus * kc.l1 - q_tilde;
    let feasible = denom > 0.0;
    let bound = feasible.then(|| {
        (q_tilde + kc.sup * (w_plus - w_minus)) * mass * w_plus * kc.sup / (c_param * denom)
    });
    Ok(EntropyBound {
        q_tilde,
        w_plus,
        w_minus,
        feasible,
        bound,
    })
}

/// Small-data global existence conditions evaluated on initial data.
pub fn small_data_report<S: Scalar>(
    initial: &SimState<S>,
    table: &KernelTable<S>,
) -> SmallDataReport {
    let mesh = initial.mesh();
    let (u_lo, u_hi) = initial.u.range();
    let a0 = (u_hi - u_lo).as_f64();
    let u0_inf = u_lo.abs().max(u_hi.abs()).as_f64();
    let mass = mesh.integrate_samples(&initial.rho.at_quad()).as_f64();
    let (w_lo, w_hi) = initial.w.range();
    let (w_minus, w_plus) = (w_lo.as_f64(), w_hi.as_f64());
    let dw_inf = initial
        .w
        .deriv_at_samples()
        .iter()
        .chain(initial.w.deriv_at_quad().iter())
        .fold(0.0f64, |m, d| m.max(d.as_f64().abs()));
    let kc = table.constants();

    let eta = if dw_inf == 0.0 {
        0.0
    } else {
        dw_inf * (2.0 * kc.sup * kc.lipschitz * a0 / (mass * w_minus * kc.c1.powi(3))).exp()
    };
    let epsilon_max =
        kc.c1 * w_minus * mass / (2.0 + eta * mass * kc.sup + w_plus * mass * kc.lipschitz);
    let epsilon = epsilon_max * (1.0 - 1e-9);

    let reason = if !(kc.c1 > 0.0) {
        Some("kernel is not bounded below".to_string())
    } else if !(w_minus > 0.0) || !(mass > 0.0) {
        Some(format!(
            "w_min = {w_minus:e} and mass = {mass:e} must be positive"
        ))
    } else if !eta.is_finite() || !(epsilon_max > 0.0) {
        Some(format!(
            "no admissible epsilon (eta = {eta:e}, epsilon_max = {epsilon_max:e})"
        ))
    } else if !(a0 < epsilon * epsilon) {
        Some(format!(
            "A0 = {a0:e} is not below epsilon^2 = {:e}",
            epsilon * epsilon
        ))
    } else if !(u0_inf < epsilon) {
        Some(format!(
            "|u0|_inf = {u0_inf:e} is not below epsilon = {epsilon:e}"
        ))
    } else {
        None
    };
    SmallDataReport {
        a0,
        u0_inf,
        eta,
        epsilon_max,
        epsilon,
        satisfied: reason.is_none(),
        reason,
    }
}

/// Least-squares slope of `-log A` over `t` in `window`, alongside the
/// alignment rate `w_min * mass * c1`.
pub fn fit_decay_rate(
    series: &[(f64, f64)],
    window: (f64, f64),
    w_minus: f64,
    mass: f64,
    c1: f64,
) -> Result<DecayFit, DiagnosticsError> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .copied()
        .collect();
    if pts.len() < 3 || pts.iter().any(|(_, a)| !(*a > 0.0)) {
        return Err(DiagnosticsError::DegenerateSeries(
            pts.iter().filter(|(_, a)| *a > 0.0).count(),
        ));
    }
    let slope = least_squares_slope(pts.iter().map(|(t, a)| (*t, -a.ln())));
    Ok(DecayFit {
        fitted_rate: slope,
        theoretical_rate: w_minus * mass * c1,
        samples: pts.len(),
    })
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn least_squares_slope(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = points.fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolution::KernelSpec;
    use crate::fem::{PeriodicMesh, DEFAULT_QUAD_ORDER};
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn table(m: usize, spec: KernelSpec) -> KernelTable<f64> {
        KernelTable::new(
            Arc::new(PeriodicMesh::new(m, DEFAULT_QUAD_ORDER).unwrap()),
            spec,
        )
    }

    fn state(
        t: &KernelTable<f64>,
        rho: impl Fn(f64) -> f64,
        w: impl Fn(f64) -> f64,
        u: impl Fn(f64) -> f64,
    ) -> SimState<f64> {
        SimState::from_fns(t.mesh().clone(), rho, w, u).unwrap()
    }

    #[test]
    fn e_field_uniform() {
        let t = table(8, KernelSpec::Constant);
        let s = state(&t, |_| 1.0, |_| 1.0, |_| 0.4);
        let e = e_field(&s, &t);
        assert!((e.min - 1.0).abs() < 1e-12 && (e.max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e_field_negative_threshold() {
        let t = table(64, KernelSpec::Constant);
        // u_x = -1 on part of the domain
        let s = state(&t, |_| 0.01, |_| 1.0, |x| (2.0 * PI * x).cos() / (2.0 * PI));
        let v = classify_threshold(&s, &t);
        assert!(v.e0_min < 0.0);
        assert_eq!(v.verdict, Verdict::BlowUpPredicted);
        assert!((v.e0_min - (0.01 - 1.0)).abs() < 1e-3);
    }

    #[test]
    fn threshold_invariant_under_velocity_shift() {
        let t = table(12, KernelSpec::RationalSqrt);
        let rho = |x: f64| 1.0 + 0.5 * (2.0 * PI * x).sin();
        let u = |x: f64| 0.3 * (2.0 * PI * x).cos();
        let a = classify_threshold(&state(&t, rho, |_| 1.0, u), &t);
        let b = classify_threshold(&state(&t, rho, |_| 1.0, |x| u(x) + 5.0), &t);
        assert!((a.e0_min - b.e0_min).abs() < 1e-12);
        let zero = classify_threshold(&state(&t, rho, |_| 1.0, |_| 0.0), &t);
        assert_eq!(zero.verdict, Verdict::GlobalExistencePredicted);
    }

    #[test]
    fn bulk_stats_closed_forms() {
        let t = table(16, KernelSpec::Constant);
        let s = state(&t, |_| 1.0, |_| 1.0, |_| 0.7);
        let r = bulk_stats(&s, &t);
        assert!((r.momentum - 0.7).abs() < 1e-14);
        assert!((r.energy - 0.245).abs() < 1e-14);
        assert!(r.v2.abs() < 1e-14);
        assert!(r.amplitude.abs() < 1e-14);

        let s = state(&t, |_| 1.0, |_| 1.0, |x| (2.0 * PI * x).sin());
        let r = bulk_stats(&s, &t);
        assert!(r.momentum.abs() < 1e-14);
        // P2 interpolation error of sin at h = 1/16 is O(h^3)
        assert!((r.energy - 0.25).abs() < 1e-4);
        assert!((r.v2 - 0.25).abs() < 1e-4);
        assert!((r.amplitude - 2.0).abs() < 1e-3);
    }

    #[test]
    fn v2_matches_centered_energy() {
        let t = table(10, KernelSpec::RationalSqrt);
        let s = state(
            &t,
            |x| 1.2 + (2.0 * PI * x).sin(),
            |_| 1.0,
            |x| 0.4 + (4.0 * PI * x).cos(),
        );
        let r = bulk_stats(&s, &t);
        let mesh = t.mesh();
        let (rq, uq) = (s.rho.at_quad(), s.u.at_quad());
        let ubar = r.momentum / r.mass;
        let direct = 0.5
            * mesh.integrate_samples(
                &rq.iter()
                    .zip(&uq)
                    .map(|(r, u)| r * (u - ubar) * (u - ubar))
                    .collect::<Vec<_>>(),
            );
        assert!((r.v2 - direct).abs() < 1e-10);
        assert!(r.v2 >= -1e-12);
    }

    #[test]
    fn entropy_uniform_and_sine() {
        let t = table(32, KernelSpec::Constant);
        let flat = relative_entropy(&state(&t, |_| 2.0, |_| 1.0, |_| 0.0));
        assert!(flat.h.unwrap().abs() < 1e-14);
        assert!(flat.l1_dev.abs() < 1e-14);
        assert_eq!(flat.holds, Some(true));

        let s = relative_entropy(&state(
            &t,
            |x| 1.0 + 0.5 * (2.0 * PI * x).sin(),
            |_| 1.0,
            |_| 0.0,
        ));
        assert!((s.l1_dev - 1.0 / PI).abs() < 1e-4);
        assert!((s.ck_upper - 0.125).abs() < 1e-6);
        // high-order quadrature oracle of int rho log rho
        assert!((s.h.unwrap() - 0.064_638_132_020_487_45).abs() < 1e-7);
        assert!(s.ck_lower <= s.rho_bar * s.h.unwrap());
        assert_eq!(s.holds, Some(true));
    }

    #[test]
    fn entropy_undefined_for_vacuum() {
        let t = table(8, KernelSpec::Constant);
        let r = relative_entropy(&state(
            &t,
            |x| (2.0 * PI * x).sin().max(0.0),
            |_| 1.0,
            |_| 0.0,
        ));
        assert!(r.h.is_none());
        assert!(r.holds.is_none());
    }

    #[test]
    fn entropy_bound_uniform_is_zero() {
        let t = table(8, KernelSpec::RationalSqrt);
        let s = state(&t, |_| 1.3, |_| 1.0, |_| 0.2);
        let b = entropy_bound(&s, &t, 1.0).unwrap();
        assert!(b.q_tilde < 1e-13);
        assert!(b.feasible);
        assert!(b.bound.unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_bound_reduces_for_unit_weight() {
        let t = table(12, KernelSpec::RationalSqrt);
        let s = state(
            &t,
            |x| 1.0 + 0.2 * (2.0 * PI * x).sin(),
            |_| 1.0,
            |x| 0.01 * (2.0 * PI * x).cos(),
        );
        let b = entropy_bound(&s, &t, 2.0).unwrap();
        let kc = t.constants();
        let mass = s.rho.integral();
        let expected = b.q_tilde * mass * kc.sup / (2.0 * (kc.l1 - b.q_tilde));
        assert!((b.bound.unwrap() - expected).abs() < 1e-14 * expected.max(1.0));
    }

    #[test]
    fn entropy_bound_infeasible() {
        let t = table(12, KernelSpec::RationalSqrt);
        let s = state(&t, |_| 0.05, |_| 1.0, |x| (2.0 * PI * x).sin());
        let b = entropy_bound(&s, &t, 1.0).unwrap();
        assert!(!b.feasible);
        assert!(b.bound.is_none());
        let vac = state(&t, |x| (2.0 * PI * x).sin(), |_| 1.0, |_| 0.0);
        assert!(matches!(
            entropy_bound(&vac, &t, 1.0),
            Err(DiagnosticsError::NonPositiveDensity { .. })
        ));
    }

    #[test]
    fn small_data_examples() {
        let t = table(10, KernelSpec::RationalSqrt);
        let s = state(&t, |_| 1.0, |_| 1.0, |_| 0.0);
        let r = small_data_report(&s, &t);
        assert!(r.eta < 1e-12);
        assert_eq!(r.a0, 0.0);
        assert!(r.satisfied, "{:?}", r.reason);

        let big = state(&t, |_| 1.0, |_| 1.0, |x| (2.0 * PI * x).sin());
        let r = small_data_report(&big, &t);
        assert!(!r.satisfied);
        assert!(r.reason.is_some());
    }

    #[test]
    fn decay_fit_examples() {
        let series: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, 3.0 * (-2.0 * t).exp())
            })
            .collect();
        let fit = fit_decay_rate(&series, (0.0, 10.0), 1.0, 2.0, 0.5).unwrap();
        assert!((fit.fitted_rate - 2.0).abs() < 1e-9);
        assert_eq!(fit.theoretical_rate, 1.0);

        let flat: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.4)).collect();
        assert!(
            fit_decay_rate(&flat, (0.0, 10.0), 1.0, 1.0, 1.0)
                .unwrap()
                .fitted_rate
                .abs()
                < 1e-15
        );

        assert!(fit_decay_rate(&flat, (0.0, 1.0), 1.0, 1.0, 1.0).is_err());
        let with_zero = vec![(0.0, 1.0), (1.0, 0.0), (2.0, 0.5)];
        assert!(fit_decay_rate(&with_zero, (0.0, 3.0), 1.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn threshold_shift_invariance_and_v2_sign(
            a in -0.8f64..0.8,
            c in -1.0f64..1.0,
            shift in -10.0f64..10.0,
        ) {
            let t = table(8, KernelSpec::RationalSqrt);
            let rho = |x: f64| 1.0 + a * (2.0 * PI * x).cos();
            let u = |x: f64| c * (2.0 * PI * x).sin() + 0.3 * c * (4.0 * PI * x).cos();
            let base = state(&t, rho, |_| 1.0, u);
            let moved = state(&t, rho, |_| 1.0, |x| u(x) + shift);
            let (p, q) = (classify_threshold(&base, &t), classify_threshold(&moved, &t));
            prop_assert!((p.e0_min - q.e0_min).abs() < 1e-12);
            prop_assert!((p.e0_max - q.e0_max).abs() < 1e-12);
            let r = bulk_stats(&moved, &t);
            prop_assert!(r.v2 >= -1e-12 * r.energy.max(1.0));
            let ck = relative_entropy(&base);
            prop_assert_eq!(ck.holds, Some(true));
        }
    }
}
