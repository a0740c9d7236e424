//! Convolution with the interpolated communication kernel on the torus and
//! the Favre-filtered velocity `(u rho)_phi / rho_phi`.
//!
//! The kernel is periodized by evaluating it at the torus distance
//! `d_T(x) = min(x mod 1, 1 - x mod 1)`, then interpolated into P3 to obtain
//! `phi_h`. Convolutions are computed by mesh quadrature in the source
//! variable; the kernel values at every pair of quadrature points are cached
//! once per mesh.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::fem::{FeFunction, PeriodicMesh, Space};
use crate::scalar::{torus_distance, wrap_unit, Scalar};

/// Default lower bound on `rho_phi` before the Favre average is refused.
pub const DEFAULT_RHO_PHI_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel table needs at least two rows")]
    TooShort,
    #[error("kernel table row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("kernel table value {value} at distance {distance} is negative")]
    Negative { distance: f64, value: f64 },
    #[error("kernel table increases between distances {from} and {to}")]
    Increasing { from: f64, to: f64 },
    #[error("kernel table must cover distances [0, 0.5], got [{first}, {last}]")]
    Coverage { first: f64, last: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvolutionError {
    #[error("rho_phi fell to {min:e} at x = {x} (floor {floor:e})")]
    FloorViolation { min: f64, x: f64, floor: f64 },
}

/// Sampled kernel profile on `[0, 1/2]`, evaluated by monotone cubic
/// Hermite interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelCurve {
    distances: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl KernelCurve {
    pub fn new(distances: Vec<f64>, values: Vec<f64>) -> Result<Self, KernelError> {
        if distances.len() < 2 || distances.len() != values.len() {
            return Err(KernelError::TooShort);
        }
        for (row, (&d, &v)) in distances.iter().zip(&values).enumerate() {
            if !d.is_finite() || !v.is_finite() {
                return Err(KernelError::BadRow {
                    row,
                    reason: "non-finite entry".into(),
                });
            }
            if v < 0.0 {
                return Err(KernelError::Negative {
                    distance: d,
                    value: v,
                });
            }
        }
        for (row, w) in distances.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(KernelError::BadRow {
                    row: row + 1,
                    reason: format!("distance {} does not increase", w[1]),
                });
            }
        }
        for (dw, vw) in distances.windows(2).zip(values.windows(2)) {
            if vw[1] > vw[0] {
                return Err(KernelError::Increasing {
                    from: dw[0],
                    to: dw[1],
                });
            }
        }
        let (first, last) = (distances[0], *distances.last().unwrap());
        if first != 0.0 || (last - 0.5).abs() > 1e-12 {
            return Err(KernelError::Coverage { first, last });
        }
        let slopes = fritsch_carlson_slopes(&distances, &values);
        Ok(Self {
            distances,
            values,
            slopes,
        })
    }

    /// Parse two-column CSV text `distance,value`. A non-numeric first line is
    /// treated as a header; blank lines and `#` comments are skipped.
    pub fn from_csv(text: &str) -> Result<Self, KernelError> {
        let mut distances = Vec::new();
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Option<(f64, f64)> = match fields.as_slice() {
                [d, v] => d.parse().ok().zip(v.parse().ok()),
                _ => None,
            };
            match parsed {
                Some((d, v)) => {
                    distances.push(d);
                    values.push(v);
                }
                None if line_no == 0 => continue,
                None => {
                    return Err(KernelError::BadRow {
                        row: line_no,
                        reason: format!("expected `distance,value`, got `{line}`"),
                    })
                }
            }
        }
        Self::new(distances, values)
    }

    fn segment(&self, d: f64) -> usize {
        let i = self.distances.partition_point(|&x| x <= d);
        i.clamp(1, self.distances.len() - 1) - 1
    }

    pub fn value(&self, d: f64) -> f64 {
        let i = self.segment(d);
        let (x0, x1) = (self.distances[i], self.distances[i + 1]);
        let dx = x1 - x0;
        let t = ((d - x0) / dx).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        h00 * self.values[i]
            + h10 * dx * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * dx * self.slopes[i + 1]
    }

    pub fn derivative(&self, d: f64) -> f64 {
        let i = self.segment(d);
        let (x0, x1) = (self.distances[i], self.distances[i + 1]);
        let dx = x1 - x0;
        let t = ((d - x0) / dx).clamp(0.0, 1.0);
        let (g00, g10, g01, g11) = (
            6.0 * t * t - 6.0 * t,
            3.0 * t * t - 4.0 * t + 1.0,
            -6.0 * t * t + 6.0 * t,
            3.0 * t * t - 2.0 * t,
        );
        (g00 * self.values[i] + g01 * self.values[i + 1]) / dx
            + g10 * self.slopes[i]
            + g11 * self.slopes[i + 1]
    }

    fn breakpoints(&self) -> &[f64] {
        &self.distances
    }
}

fn fritsch_carlson_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let secants: Vec<f64> = (0..n - 1)
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        m[i] = if secants[i - 1] * secants[i] <= 0.0 {
            0.0
        } else {
            (secants[i - 1] + secants[i]) / 2.0
        };
    }
    for i in 0..n - 1 {
        if secants[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / secants[i];
        let b = m[i + 1] / secants[i];
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * secants[i];
            m[i + 1] = tau * b * secants[i];
        }
    }
    m
}

/// Communication kernel as a function of torus distance.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    /// `phi(d) = (1 + d^2)^(-1/2)`
    RationalSqrt,
    /// `phi = 1`
    Constant,
    Table(KernelCurve),
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::RationalSqrt => f.write_str("rational_sqrt"),
            KernelSpec::Constant => f.write_str("constant"),
            KernelSpec::Table(_) => f.write_str("custom_table"),
        }
    }
}

/// Norms and bounds of a kernel on the unit torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConstants {
    /// `||phi||_inf`
    pub sup: f64,
    /// `||phi||_{L^1}` over the torus
    pub l1: f64,
    /// `||phi'||_inf`
    pub lipschitz: f64,
    /// minimum of `phi` over torus distances
    pub c1: f64,
}

impl KernelSpec {
    /// Kernel value at torus distance `d` in `[0, 1/2]`.
    pub fn value(&self, d: f64) -> f64 {
        match self {
            KernelSpec::RationalSqrt => 1.0 / (1.0 + d * d).sqrt(),
            KernelSpec::Constant => 1.0,
            KernelSpec::Table(curve) => curve.value(d),
        }
    }

    pub fn derivative(&self, d: f64) -> f64 {
        match self {
            KernelSpec::RationalSqrt => -d / (1.0 + d * d).powf(1.5),
            KernelSpec::Constant => 0.0,
            KernelSpec::Table(curve) => curve.derivative(d),
        }
    }

    /// Periodized kernel at an arbitrary displacement.
    pub fn periodized(&self, x: f64) -> f64 {
        self.value(torus_distance(x))
    }

    pub fn constants(&self) -> KernelConstants {
        match self {
            KernelSpec::RationalSqrt => KernelConstants {
                sup: 1.0,
                l1: 2.0 * 0.5f64.asinh(),
                // |phi'| increases on [0, 1/sqrt 2], so the max on [0, 1/2] is at 1/2
                lipschitz: 0.5 / 1.25f64.powf(1.5),
                c1: 2.0 / 5f64.sqrt(),
            },
            KernelSpec::Constant => KernelConstants {
                sup: 1.0,
                l1: 1.0,
                lipschitz: 0.0,
                c1: 1.0,
            },
            KernelSpec::Table(curve) => {
                let (gp, gw) = crate::fem::gauss_legendre::<f64>(4);
                let bp = curve.breakpoints();
                let mut integral = 0.0;
                let mut lipschitz: f64 = 0.0;
                for w in bp.windows(2) {
                    let dx = w[1] - w[0];
                    for (p, wt) in gp.iter().zip(&gw) {
                        integral += wt * dx * curve.value(w[0] + p * dx);
                    }
                    for j in 0..=64 {
                        let d = w[0] + dx * j as f64 / 64.0;
                        lipschitz = lipschitz.max(curve.derivative(d).abs());
                    }
                }
                KernelConstants {
                    sup: curve.value(0.0),
                    l1: 2.0 * integral,
                    lipschitz,
                    c1: curve.value(0.5),
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, KernelSpec::Constant)
    }
}

/// Interpolated kernel `phi_h` plus its values at all quadrature-point pairs.
#[derive(Clone, Debug)]
pub struct KernelTable<S> {
    spec: KernelSpec,
    constants: KernelConstants,
    mesh: Arc<PeriodicMesh<S>>,
    phi_h: FeFunction<S>,
    quad_points: Vec<S>,
    quad_weights: Vec<S>,
    /// row-major `n_quad x n_quad`, entry `(i, j) = phi_h(x_i - x_j)`
    pairwise: Vec<S>,
    /// `phi_h` between sample point `a` and quadrature point `b` of elements
    /// `offset` apart, laid out `(offset, a, b)`
    sample_blocks: Vec<S>,
    integral: S,
}

impl<S: Scalar> KernelTable<S> {
    pub fn new(mesh: Arc<PeriodicMesh<S>>, spec: KernelSpec) -> Self {
        let phi_h = FeFunction::interpolate(mesh.clone(), Space::P3, |x| {
            S::lit(spec.periodized(x.as_f64()))
        })
        .expect("kernel values are finite by construction");
        let quad_points = mesh.quad_points();
        let quad_weights = mesh.quad_weights();
        let nq = quad_points.len();
        let m = mesh.num_elements();
        let q = mesh.quad_order();
        let h = mesh.h();
        let xi = mesh.ref_points();

        // phi_h(x_i - x_j) only depends on the element offset and the two
        // local quadrature indices, so tabulate M * Q^2 values and scatter.
        let mut blocks = vec![S::zero(); m * q * q];
        for offset in 0..m {
            for a in 0..q {
                for b in 0..q {
                    let d = wrap_unit((S::count(offset) + xi[a] - xi[b]) * h);
                    blocks[(offset * q + a) * q + b] = phi_h.value(d);
                }
            }
        }
        let mut pairwise = vec![S::zero(); nq * nq];
        for i in 0..nq {
            let (ei, a) = (i / q, i % q);
            let row = &mut pairwise[i * nq..(i + 1) * nq];
            for (j, slot) in row.iter_mut().enumerate() {
                let (ej, b) = (j / q, j % q);
                let offset = (ei + m - ej) % m;
                *slot = blocks[(offset * q + a) * q + b];
            }
        }
        let ref_samples = mesh.ref_samples();
        let ns = ref_samples.len();
        let mut sample_blocks = vec![S::zero(); m * ns * q];
        for offset in 0..m {
            for a in 0..ns {
                let xa = ref_samples[a] + S::count(offset);
                for b in 0..q {
                    let d = wrap_unit((xa - xi[b]) * h);
                    sample_blocks[(offset * ns + a) * q + b] = phi_h.value(d);
                }
            }
        }
        let integral = phi_h.integral();
        Self {
            constants: spec.constants(),
            spec,
            mesh,
            phi_h,
            quad_points,
            quad_weights,
            pairwise,
            sample_blocks,
            integral,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.constants
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh<S>> {
        &self.mesh
    }

    pub fn phi_h(&self) -> &FeFunction<S> {
        &self.phi_h
    }

    /// `Phi = integral of phi_h` over the torus.
    pub fn integral(&self) -> S {
        self.integral
    }

    #[inline]
    pub fn pairwise(&self, i: usize, j: usize) -> S {
        self.pairwise[i * self.quad_points.len() + j]
    }

    /// `f_{phi_h}` at every quadrature point, from values of `f` at the
    /// quadrature points.
    pub fn convolve_quad(&self, samples: &[S]) -> Vec<S> {
        let nq = self.quad_points.len();
        assert_eq!(
            samples.len(),
            nq,
            "expected one sample per quadrature point"
        );
        let weighted: Vec<S> = samples
            .iter()
            .zip(&self.quad_weights)
            .map(|(f, w)| *f * *w)
            .collect();
        self.pairwise
            .chunks(nq)
            .map(|row| {
                row.iter()
                    .zip(&weighted)
                    .fold(S::zero(), |acc, (k, g)| acc + *k * *g)
            })
            .collect()
    }

    /// `f_{phi_h}` at arbitrary targets.
    pub fn convolve_at(&self, samples: &[S], targets: &[S]) -> Vec<S> {
        assert_eq!(
            samples.len(),
            self.quad_points.len(),
            "expected one sample per quadrature point"
        );
        let weighted: Vec<S> = samples
            .iter()
            .zip(&self.quad_weights)
            .map(|(f, w)| *f * *w)
            .collect();
        targets
            .iter()
            .map(|&x| {
                self.quad_points
                    .iter()
                    .zip(&weighted)
                    .fold(S::zero(), |acc, (&y, &g)| acc + g * self.phi_h.value(x - y))
            })
            .collect()
    }

    /// `f_{phi_h}` at the mesh's element-interior sample points.
    pub fn convolve_at_samples(&self, samples: &[S]) -> Vec<S> {
        let nq = self.quad_points.len();
        assert_eq!(
            samples.len(),
            nq,
            "expected one sample per quadrature point"
        );
        let m = self.mesh.num_elements();
        let q = self.mesh.quad_order();
        let ns = self.mesh.samples_per_element();
        let weighted: Vec<S> = samples
            .iter()
            .zip(&self.quad_weights)
            .map(|(f, w)| *f * *w)
            .collect();
        let mut out = Vec::with_capacity(m * ns);
        for e in 0..m {
            for a in 0..ns {
                let mut acc = S::zero();
                for ej in 0..m {
                    let offset = (e + m - ej) % m;
                    let block =
                        &self.sample_blocks[(offset * ns + a) * q..(offset * ns + a + 1) * q];
                    let src = &weighted[ej * q..(ej + 1) * q];
                    for (k, g) in block.iter().zip(src) {
                        acc += *k * *g;
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    /// Convolution of an FE function, evaluated at the quadrature points.
    pub fn convolve(&self, f: &FeFunction<S>) -> Vec<S> {
        self.convolve_quad(&f.at_quad())
    }

    /// `u_F = (u rho)_{phi_h} / rho_{phi_h}` at the quadrature points.
    /// The product `u rho` is formed pointwise at the quadrature points.
    pub fn favre_velocity(
        &self,
        u: &FeFunction<S>,
        rho: &FeFunction<S>,
        floor: S,
    ) -> Result<Vec<S>, ConvolutionError> {
        let (u_q, rho_q) = (u.at_quad(), rho.at_quad());
        let rho_phi = self.convolve_quad(&rho_q);
        let flux: Vec<S> = u_q.iter().zip(&rho_q).map(|(a, b)| *a * *b).collect();
        let flux_phi = self.convolve_quad(&flux);
        favre_ratio(&flux_phi, &rho_phi, &self.quad_points, floor)
    }

    /// Favre velocity at arbitrary targets.
    pub fn favre_velocity_at(
        &self,
        u: &FeFunction<S>,
        rho: &FeFunction<S>,
        targets: &[S],
        floor: S,
    ) -> Result<Vec<S>, ConvolutionError> {
        let (u_q, rho_q) = (u.at_quad(), rho.at_quad());
        let flux: Vec<S> = u_q.iter().zip(&rho_q).map(|(a, b)| *a * *b).collect();
        let rho_phi = self.convolve_at(&rho_q, targets);
        let flux_phi = self.convolve_at(&flux, targets);
        favre_ratio(&flux_phi, &rho_phi, targets, floor)
    }
}

/// Pointwise `num / den` with a floor check on `den`.
pub fn favre_ratio<S: Scalar>(
    num: &[S],
    den: &[S],
    positions: &[S],
    floor: S,
) -> Result<Vec<S>, ConvolutionError> {
    let (imin, min) =
        den.iter().enumerate().fold(
            (0, S::infinity()),
            |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc },
        );
    if !(min >= floor) {
        return Err(ConvolutionError::FloorViolation {
            min: min.as_f64(),
            x: positions.get(imin).map_or(f64::NAN, |x| x.as_f64()),
            floor: floor.as_f64(),
        });
    }
    Ok(num.iter().zip(den).map(|(a, b)| *a / *b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::DEFAULT_QUAD_ORDER;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn table(m: usize, spec: KernelSpec) -> KernelTable<f64> {
        let mesh = Arc::new(PeriodicMesh::new(m, DEFAULT_QUAD_ORDER).unwrap());
        KernelTable::new(mesh, spec)
    }

    #[test]
    fn constant_kernel() {
        let t = table(8, KernelSpec::Constant);
        assert!((t.integral() - 1.0).abs() < 1e-14);
        let ones = vec![1.0; t.mesh().num_quad()];
        assert!(t
            .convolve_quad(&ones)
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-13));
        let s =
            FeFunction::interpolate(t.mesh().clone(), Space::P3, |x| (2.0 * PI * x).sin()).unwrap();
        assert!(t.convolve(&s).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn rational_sqrt_constants() {
        let c = KernelSpec::RationalSqrt.constants();
        assert!((c.c1 - 0.894_427_190_999_915_9).abs() < 1e-15);
        assert!((c.l1 - 0.962_423_650_119_206_9).abs() < 1e-15);
        assert!((c.lipschitz - 0.357_770_876_399_966_35).abs() < 1e-15);
        assert_eq!(c.sup, 1.0);
    }

    #[test]
    fn rational_sqrt_integral_and_unit_convolution() {
        let t = table(20, KernelSpec::RationalSqrt);
        let exact = 0.962_423_650_119_206_9;
        assert!((t.integral() - exact).abs() < 1e-6);
        let ones = vec![1.0; t.mesh().num_quad()];
        // quadrature sees the kink of phi_h at distance 1/2 off the element grid
        for v in t.convolve_quad(&ones) {
            assert!((v - exact).abs() < 2e-5);
        }
        let targets = [0.0, 0.123, 0.5, 0.77];
        for v in t.convolve_at(&ones, &targets) {
            assert!((v - exact).abs() < 2e-5);
        }
    }

    #[test]
    fn sample_convolution_matches_direct() {
        let t = table(9, KernelSpec::RationalSqrt);
        let mesh = t.mesh().clone();
        let f = FeFunction::interpolate(mesh.clone(), Space::P3, |x| 1.0 + (2.0 * PI * x).sin())
            .unwrap();
        let fast = t.convolve_at_samples(&f.at_quad());
        let direct = t.convolve_at(&f.at_quad(), &mesh.sample_points());
        for (a, b) in fast.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn pairwise_entries_match_phi_h() {
        let t = table(7, KernelSpec::RationalSqrt);
        let xs = t.mesh().quad_points();
        for i in (0..xs.len()).step_by(5) {
            for j in (0..xs.len()).step_by(3) {
                let direct = t.phi_h().value(wrap_unit(xs[i] - xs[j]));
                assert!((t.pairwise(i, j) - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn phi_h_symmetric() {
        let t = table(10, KernelSpec::RationalSqrt);
        for k in 0..50 {
            let d = k as f64 / 50.0;
            assert!((t.phi_h().value(d) - t.phi_h().value(1.0 - d)).abs() < 1e-12);
        }
    }

    #[test]
    fn favre_of_constant_velocity() {
        let t = table(10, KernelSpec::RationalSqrt);
        let mesh = t.mesh().clone();
        let u = FeFunction::constant(mesh.clone(), Space::P2, -0.7);
        let rho = FeFunction::interpolate(mesh, Space::P3, |x| 1.5 + (2.0 * PI * x).cos()).unwrap();
        let uf = t.favre_velocity(&u, &rho, 1e-10).unwrap();
        assert!(uf.iter().all(|v| (v + 0.7).abs() < 1e-12));
    }

    #[test]
    fn favre_with_uniform_density_and_constant_kernel_is_mean() {
        let t = table(10, KernelSpec::Constant);
        let mesh = t.mesh().clone();
        let u = FeFunction::interpolate(mesh.clone(), Space::P2, |x| 0.3 + (2.0 * PI * x).sin())
            .unwrap();
        let rho = FeFunction::constant(mesh, Space::P3, 2.0);
        let uf = t.favre_velocity(&u, &rho, 1e-10).unwrap();
        assert!(uf.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn favre_floor_violation() {
        let t = table(6, KernelSpec::Constant);
        let mesh = t.mesh().clone();
        let u = FeFunction::constant(mesh.clone(), Space::P2, 1.0);
        let rho = FeFunction::constant(mesh, Space::P3, 0.0);
        let err = t.favre_velocity(&u, &rho, 1e-10).unwrap_err();
        assert!(matches!(err, ConvolutionError::FloorViolation { min, .. } if min == 0.0));
    }

    #[test]
    fn curve_validation() {
        assert_eq!(
            KernelCurve::new(vec![0.0], vec![1.0]),
            Err(KernelError::TooShort)
        );
        assert!(matches!(
            KernelCurve::new(vec![0.0, 0.5], vec![1.0, -0.1]),
            Err(KernelError::Negative { .. })
        ));
        assert!(matches!(
            KernelCurve::new(vec![0.0, 0.3, 0.2, 0.5], vec![1.0; 4]),
            Err(KernelError::BadRow { .. })
        ));
        assert!(matches!(
            KernelCurve::new(vec![0.0, 0.4], vec![1.0, 0.5]),
            Err(KernelError::Coverage { .. })
        ));
        assert!(matches!(
            KernelCurve::new(vec![0.0, 0.5], vec![0.5, 1.0]),
            Err(KernelError::Increasing { .. })
        ));
    }

    #[test]
    fn curve_from_csv_tracks_rational_sqrt() {
        let mut text = String::from("distance,value\n");
        for i in 0..=50 {
            let d = i as f64 / 100.0;
            text.push_str(&format!("{d},{}\n", KernelSpec::RationalSqrt.value(d)));
        }
        let spec = KernelSpec::Table(KernelCurve::from_csv(&text).unwrap());
        for &d in &[0.0, 0.033, 0.25, 0.4999] {
            assert!((spec.value(d) - KernelSpec::RationalSqrt.value(d)).abs() < 1e-5);
        }
        let c = spec.constants();
        let exact = KernelSpec::RationalSqrt.constants();
        assert!((c.l1 - exact.l1).abs() < 1e-6);
        assert!((c.c1 - exact.c1).abs() < 1e-12);
        assert!((c.lipschitz - exact.lipschitz).abs() < 1e-2);
    }

    #[test]
    fn curve_from_csv_rejects_garbage() {
        assert!(matches!(
            KernelCurve::from_csv("0,1\nfoo,bar\n0.5,0.9\n"),
            Err(KernelError::BadRow { row: 1, .. })
        ));
    }

    fn random_fe(mesh: &Arc<PeriodicMesh<f64>>, c: &[f64]) -> FeFunction<f64> {
        FeFunction::new(mesh.clone(), Space::P3, c.to_vec()).unwrap()
    }

    proptest! {
        #[test]
        fn linear_positive_and_self_adjoint(
            a in proptest::collection::vec(0.0f64..2.0, 18),
            b in proptest::collection::vec(-2.0f64..2.0, 18),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let t = table(6, KernelSpec::RationalSqrt);
            let mesh = t.mesh().clone();
            let (f, g) = (random_fe(&mesh, &a), random_fe(&mesh, &b));
            let (fq, gq) = (f.at_quad(), g.at_quad());
            let (cf, cg) = (t.convolve_quad(&fq), t.convolve_quad(&gq));
            let combo: Vec<f64> = fq.iter().zip(&gq).map(|(x, y)| alpha * x + beta * y).collect();
            for (i, v) in t.convolve_quad(&combo).iter().enumerate() {
                prop_assert!((v - (alpha * cf[i] + beta * cg[i])).abs() <= 1e-12);
            }
            if fq.iter().all(|&v| v >= 0.0) {
                prop_assert!(cf.iter().all(|&v| v >= 0.0));
            }
            let lhs: Vec<f64> = cf.iter().zip(&gq).map(|(x, y)| x * y).collect();
            let rhs: Vec<f64> = fq.iter().zip(&cg).map(|(x, y)| x * y).collect();
            prop_assert!((mesh.integrate_samples(&lhs) - mesh.integrate_samples(&rhs)).abs() <= 1e-10);
        }

        #[test]
        fn favre_is_weighted_average(
            rho in proptest::collection::vec(0.05f64..3.0, 18),
            u in proptest::collection::vec(-2.0f64..2.0, 12),
        ) {
            let t = table(6, KernelSpec::RationalSqrt);
            let mesh = t.mesh().clone();
            let rho = random_fe(&mesh, &rho);
            let u = FeFunction::new(mesh, Space::P2, u).unwrap();
            let uq = u.at_quad();
            let (lo, hi) = uq.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            // positive nodal values do not imply a positive cubic between nodes
            if rho.at_quad().iter().all(|&v| v >= 0.0) {
                for v in t.favre_velocity(&u, &rho, 1e-12).unwrap() {
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
