//! Periodic 1D finite-element substrate: mesh, Lagrange bases, Gauss
//! quadrature, interpolation, evaluation and error norms.
//!
//! The unit interval is split into `M` equal elements with `0` identified
//! with `1`. Continuous piecewise-quadratic (P2) and piecewise-cubic (P3)
//! functions are stored by their nodal values; because of the periodic
//! identification a P3 function on `M` elements has `3M` coefficients and a
//! P2 function `2M`. Global node `i` of space `Pp` sits at `x = i / (p M)`.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::dense_solve;
use crate::scalar::{wrap_unit, Scalar};

/// Dense sampling resolution used for sup-norms and pointwise monitors.
pub const DEFAULT_SAMPLES_PER_ELEMENT: usize = 10;

/// Gauss points per element unless configured otherwise.
pub const DEFAULT_QUAD_ORDER: usize = 6;

pub const MIN_QUAD_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("mesh needs at least 2 elements, got {0}")]
    TooFewElements(usize),
    #[error("quadrature order {0} is below the minimum of {MIN_QUAD_ORDER}")]
    QuadOrderTooLow(usize),
    #[error("interpolated function is not finite at node x = {x}")]
    NonFinite { x: f64 },
    #[error("coefficient vector has length {got}, expected {expected} for {space:?}")]
    CoefficientCount {
        space: Space,
        expected: usize,
        got: usize,
    },
}

/// Continuous piecewise-polynomial space on the periodic mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    P2,
    P3,
}

impl Space {
    pub fn order(self) -> usize {
        match self {
            Space::P2 => 2,
            Space::P3 => 3,
        }
    }

    pub fn local_dofs(self) -> usize {
        self.order() + 1
    }

    pub fn num_dofs(self, num_elements: usize) -> usize {
        self.order() * num_elements
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deriv {
    Value,
    First,
}

/// Lagrange basis on the reference element `[0, 1]` with equispaced nodes.
///
/// Row `k` of `coeffs` holds the monomial coefficients of `psi_k`, lowest
/// degree first.
#[derive(Clone, Debug)]
pub struct LocalBasis<S> {
    order: usize,
    nodes: Vec<S>,
    coeffs: Vec<Vec<S>>,
}

impl<S: Scalar> LocalBasis<S> {
    /// Solve the Vandermonde system at the reference nodes.
    pub fn new(space: Space) -> Self {
        let order = space.order();
        let n = order + 1;
        let nodes: Vec<S> = (0..n).map(|j| S::count(j) / S::count(order)).collect();
        let mut vandermonde = vec![S::zero(); n * n];
        for (j, &x) in nodes.iter().enumerate() {
            let mut pow = S::one();
            for m in 0..n {
                vandermonde[j * n + m] = pow;
                pow *= x;
            }
        }
        let coeffs = (0..n)
            .map(|k| {
                let mut e = vec![S::zero(); n];
                e[k] = S::one();
                dense_solve(&vandermonde, &e, n).expect("equispaced Vandermonde is nonsingular")
            })
            .collect();
        Self {
            order,
            nodes,
            coeffs,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[S] {
        &self.nodes
    }

    pub fn coeffs(&self, k: usize) -> &[S] {
        &self.coeffs[k]
    }

    pub fn value(&self, k: usize, xi: S) -> S {
        self.coeffs[k]
            .iter()
            .rev()
            .fold(S::zero(), |acc, &c| acc * xi + c)
    }

    /// Derivative with respect to the reference coordinate.
    pub fn derivative(&self, k: usize, xi: S) -> S {
        let c = &self.coeffs[k];
        (1..c.len())
            .rev()
            .fold(S::zero(), |acc, m| acc * xi + S::count(m) * c[m])
    }
}

/// Gauss-Legendre rule with `n` points mapped to `[0, 1]`; weights sum to 1.
pub fn gauss_legendre<S: Scalar>(n: usize) -> (Vec<S>, Vec<S>) {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut points = vec![S::zero(); n];
    let mut weights = vec![S::zero(); n];
    let tol = S::epsilon() * S::lit(4.0);
    let nf = S::count(n);
    for i in 0..n.div_ceil(2) {
        let mut t = (S::pi() * (S::count(i) + S::lit(0.75)) / (nf + S::half())).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            let dt = p / d;
            t -= dt;
            if dt.abs() <= tol {
                break;
            }
        }
        let (_, dp) = legendre(n, t);
        let w = S::two() / ((S::one() - t * t) * dp * dp);
        // t is the i-th largest root; fill symmetric pair on [0, 1]
        points[n - 1 - i] = (S::one() + t) * S::half();
        points[i] = (S::one() - t) * S::half();
        weights[n - 1 - i] = w * S::half();
        weights[i] = w * S::half();
    }
    (points, weights)
}

fn legendre<S: Scalar>(n: usize, t: S) -> (S, S) {
    let mut p0 = S::one();
    let mut p1 = t;
    for k in 2..=n {
        let kf = S::count(k);
        let p2 = ((S::two() * kf - S::one()) * t * p1 - (kf - S::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = S::count(n);
    let d = nf * (t * p1 - p0) / (t * t - S::one());
    if n == 1 {
        (t, S::one())
    } else {
        (p1, d)
    }
}

#[derive(Clone, Debug)]
struct SpaceTables<S> {
    basis: LocalBasis<S>,
    quad_val: Vec<S>,
    quad_der: Vec<S>,
    sample_val: Vec<S>,
    sample_der: Vec<S>,
}

impl<S: Scalar> SpaceTables<S> {
    fn new(space: Space, quad: &[S], samples: &[S]) -> Self {
        let basis = LocalBasis::new(space);
        let nl = space.local_dofs();
        let table = |pts: &[S], f: &dyn Fn(usize, S) -> S| {
            pts.iter()
                .flat_map(|&xi| (0..nl).map(move |k| (k, xi)))
                .map(|(k, xi)| f(k, xi))
                .collect::<Vec<S>>()
        };
        let quad_val = table(quad, &|k, xi| basis.value(k, xi));
        let quad_der = table(quad, &|k, xi| basis.derivative(k, xi));
        let sample_val = table(samples, &|k, xi| basis.value(k, xi));
        let sample_der = table(samples, &|k, xi| basis.derivative(k, xi));
        Self {
            basis,
            quad_val,
            quad_der,
            sample_val,
            sample_der,
        }
    }
}

/// Uniform periodic partition of `[0, 1)` with cached quadrature and basis tables.
#[derive(Clone, Debug)]
pub struct PeriodicMesh<S> {
    num_elements: usize,
    h: S,
    quad_order: usize,
    ref_points: Vec<S>,
    ref_weights: Vec<S>,
    samples_per_element: usize,
    ref_samples: Vec<S>,
    p2: SpaceTables<S>,
    p3: SpaceTables<S>,
}

impl<S: Scalar> PeriodicMesh<S> {
    pub fn new(num_elements: usize, quad_order: usize) -> Result<Self, FemError> {
        Self::with_sampling(num_elements, quad_order, DEFAULT_SAMPLES_PER_ELEMENT)
    }

    pub fn with_sampling(
        num_elements: usize,
        quad_order: usize,
        samples_per_element: usize,
    ) -> Result<Self, FemError> {
        if num_elements < 2 {
            return Err(FemError::TooFewElements(num_elements));
        }
        if quad_order < MIN_QUAD_ORDER {
            return Err(FemError::QuadOrderTooLow(quad_order));
        }
        let samples_per_element = samples_per_element.max(1);
        let (ref_points, ref_weights) = gauss_legendre::<S>(quad_order);
        // element-interior samples so one-sided derivatives are unambiguous
        let ref_samples: Vec<S> = (0..samples_per_element)
            .map(|j| (S::count(j) + S::half()) / S::count(samples_per_element))
            .collect();
        let p2 = SpaceTables::new(Space::P2, &ref_points, &ref_samples);
        let p3 = SpaceTables::new(Space::P3, &ref_points, &ref_samples);
        Ok(Self {
            num_elements,
            h: S::one() / S::count(num_elements),
            quad_order,
            ref_points,
            ref_weights,
            samples_per_element,
            ref_samples,
            p2,
            p3,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn h(&self) -> S {
        self.h
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn samples_per_element(&self) -> usize {
        self.samples_per_element
    }

    /// Gauss abscissae on the reference element.
    pub fn ref_points(&self) -> &[S] {
        &self.ref_points
    }

    /// Gauss weights on the reference element (sum to 1).
    pub fn ref_weights(&self) -> &[S] {
        &self.ref_weights
    }

    /// Sampling abscissae on the reference element.
    pub fn ref_samples(&self) -> &[S] {
        &self.ref_samples
    }

    pub fn basis(&self, space: Space) -> &LocalBasis<S> {
        &self.tables(space).basis
    }

    fn tables(&self, space: Space) -> &SpaceTables<S> {
        match space {
            Space::P2 => &self.p2,
            Space::P3 => &self.p3,
        }
    }

    pub fn num_dofs(&self, space: Space) -> usize {
        space.num_dofs(self.num_elements)
    }

    /// Global DOF of local basis function `k` on element `e`.
    #[inline]
    pub fn dof(&self, space: Space, element: usize, k: usize) -> usize {
        (element * space.order() + k) % self.num_dofs(space)
    }

    pub fn node_position(&self, space: Space, i: usize) -> S {
        S::count(i) / S::count(self.num_dofs(space))
    }

    pub fn nodes(&self, space: Space) -> Vec<S> {
        (0..self.num_dofs(space))
            .map(|i| self.node_position(space, i))
            .collect()
    }

    /// Left endpoint of element `e`.
    pub fn element_start(&self, element: usize) -> S {
        S::count(element) * self.h
    }

    /// Total number of quadrature points, element-major.
    pub fn num_quad(&self) -> usize {
        self.num_elements * self.quad_order
    }

    pub fn quad_points(&self) -> Vec<S> {
        (0..self.num_elements)
            .flat_map(|e| {
                let x0 = self.element_start(e);
                self.ref_points.iter().map(move |&xi| x0 + xi * self.h)
            })
            .collect()
    }

    /// Physical weights `w_q * h`, repeated for each element.
    pub fn quad_weights(&self) -> Vec<S> {
        (0..self.num_elements)
            .flat_map(|_| self.ref_weights.iter().map(|&w| w * self.h))
            .collect()
    }

    /// Value of local basis `k` of `space` at reference quadrature point `q`.
    #[inline]
    pub fn basis_at_quad(&self, space: Space, q: usize, k: usize) -> S {
        self.tables(space).quad_val[q * space.local_dofs() + k]
    }

    /// Physical derivative of local basis `k` at reference quadrature point `q`.
    #[inline]
    pub fn basis_deriv_at_quad(&self, space: Space, q: usize, k: usize) -> S {
        self.tables(space).quad_der[q * space.local_dofs() + k] / self.h
    }

    /// Element-interior sampling points used for sup-norms, element-major.
    pub fn sample_points(&self) -> Vec<S> {
        (0..self.num_elements)
            .flat_map(|e| {
                let x0 = self.element_start(e);
                self.ref_samples.iter().map(move |&xi| x0 + xi * self.h)
            })
            .collect()
    }

    /// Element containing `x` (after wrapping) and the local coordinate.
    pub fn locate(&self, x: S) -> (usize, S) {
        let y = wrap_unit(x) * S::count(self.num_elements);
        let e = y.floor().to_usize().unwrap_or(0).min(self.num_elements - 1);
        (e, y - S::count(e))
    }

    /// Integrate a function given by its values at all quadrature points.
    pub fn integrate_samples(&self, values: &[S]) -> S {
        debug_assert_eq!(values.len(), self.num_quad());
        let q = self.quad_order;
        values
            .chunks(q)
            .map(|chunk| {
                chunk
                    .iter()
                    .zip(&self.ref_weights)
                    .fold(S::zero(), |acc, (v, w)| acc + *v * *w)
            })
            .fold(S::zero(), |acc, v| acc + v)
            * self.h
    }
}

/// Coefficient representation of a continuous piecewise polynomial.
#[derive(Clone, Debug)]
pub struct FeFunction<S> {
    space: Space,
    mesh: Arc<PeriodicMesh<S>>,
    coeffs: Vec<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorNorm {
    L2,
    H1Semi,
    L1,
    Linf,
}

impl<S: Scalar> FeFunction<S> {
    pub fn new(mesh: Arc<PeriodicMesh<S>>, space: Space, coeffs: Vec<S>) -> Result<Self, FemError> {
        let expected = mesh.num_dofs(space);
        if coeffs.len() != expected {
            return Err(FemError::CoefficientCount {
                space,
                expected,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            space,
            mesh,
            coeffs,
        })
    }

    pub fn constant(mesh: Arc<PeriodicMesh<S>>, space: Space, c: S) -> Self {
        let n = mesh.num_dofs(space);
        Self {
            space,
            mesh,
            coeffs: vec![c; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(
        mesh: Arc<PeriodicMesh<S>>,
        space: Space,
        f: impl Fn(S) -> S,
    ) -> Result<Self, FemError> {
        let coeffs = (0..mesh.num_dofs(space))
            .map(|i| {
                let x = mesh.node_position(space, i);
                let v = f(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(FemError::NonFinite { x: x.as_f64() })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            space,
            mesh,
            coeffs,
        })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh<S>> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<S> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    #[inline]
    fn local(&self, element: usize, k: usize) -> S {
        self.coeffs[self.mesh.dof(self.space, element, k)]
    }

    /// Point evaluation; `x` is wrapped into `[0, 1)`. Derivatives are
    /// one-sided from inside the containing element.
    pub fn evaluate(&self, x: S, deriv: Deriv) -> S {
        let (e, xi) = self.mesh.locate(x);
        let basis = self.mesh.basis(self.space);
        let nl = self.space.local_dofs();
        match deriv {
            Deriv::Value => (0..nl).fold(S::zero(), |acc, k| {
                acc + self.local(e, k) * basis.value(k, xi)
            }),
            Deriv::First => {
                (0..nl).fold(S::zero(), |acc, k| {
                    acc + self.local(e, k) * basis.derivative(k, xi)
                }) / self.mesh.h()
            }
        }
    }

    pub fn value(&self, x: S) -> S {
        self.evaluate(x, Deriv::Value)
    }

    pub fn slope(&self, x: S) -> S {
        self.evaluate(x, Deriv::First)
    }

    fn tabulate(&self, table: &[S], per_element: usize, scale: S) -> Vec<S> {
        let nl = self.space.local_dofs();
        let mut out = Vec::with_capacity(self.mesh.num_elements() * per_element);
        for e in 0..self.mesh.num_elements() {
            let local: Vec<S> = (0..nl).map(|k| self.local(e, k)).collect();
            for q in 0..per_element {
                let row = &table[q * nl..(q + 1) * nl];
                let v = row
                    .iter()
                    .zip(&local)
                    .fold(S::zero(), |acc, (b, c)| acc + *b * *c);
                out.push(v * scale);
            }
        }
        out
    }

    /// Values at every quadrature point, element-major.
    pub fn at_quad(&self) -> Vec<S> {
        let t = self.mesh.tables(self.space);
        self.tabulate(&t.quad_val, self.mesh.quad_order(), S::one())
    }

    pub fn deriv_at_quad(&self) -> Vec<S> {
        let t = self.mesh.tables(self.space);
        self.tabulate(
            &t.quad_der,
            self.mesh.quad_order(),
            S::one() / self.mesh.h(),
        )
    }

    /// Values at the element-interior sample points.
    pub fn at_samples(&self) -> Vec<S> {
        let t = self.mesh.tables(self.space);
        self.tabulate(&t.sample_val, self.mesh.samples_per_element(), S::one())
    }

    pub fn deriv_at_samples(&self) -> Vec<S> {
        let t = self.mesh.tables(self.space);
        self.tabulate(
            &t.sample_der,
            self.mesh.samples_per_element(),
            S::one() / self.mesh.h(),
        )
    }

    pub fn integral(&self) -> S {
        self.mesh.integrate_samples(&self.at_quad())
    }

    /// Largest and smallest value over nodes and interior samples.
    pub fn range(&self) -> (S, S) {
        self.coeffs
            .iter()
            .chain(self.at_samples().iter())
            .fold((S::infinity(), S::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Distance to a reference function given pointwise with its derivative.
    pub fn error_norm(
        &self,
        reference: impl Fn(S) -> S,
        reference_deriv: impl Fn(S) -> S,
        which: ErrorNorm,
    ) -> S {
        let mesh = &self.mesh;
        match which {
            ErrorNorm::L2 | ErrorNorm::L1 | ErrorNorm::H1Semi => {
                let xs = mesh.quad_points();
                let vals = match which {
                    ErrorNorm::H1Semi => self.deriv_at_quad(),
                    _ => self.at_quad(),
                };
                let diffs: Vec<S> = xs
                    .iter()
                    .zip(&vals)
                    .map(|(&x, &v)| {
                        let r = match which {
                            ErrorNorm::H1Semi => reference_deriv(x),
                            _ => reference(x),
                        };
                        match which {
                            ErrorNorm::L1 => (v - r).abs(),
                            _ => (v - r) * (v - r),
                        }
                    })
                    .collect();
                let integral = mesh.integrate_samples(&diffs);
                match which {
                    ErrorNorm::L1 => integral,
                    _ => integral.max(S::zero()).sqrt(),
                }
            }
            ErrorNorm::Linf => {
                let samples = mesh.sample_points();
                let at_samples = self
                    .at_samples()
                    .into_iter()
                    .zip(samples)
                    .map(|(v, x)| (v - reference(x)).abs());
                let at_nodes = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v - reference(mesh.node_position(self.space, i))).abs());
                at_samples.chain(at_nodes).fold(S::zero(), S::max)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh(m: usize) -> Arc<PeriodicMesh<f64>> {
        Arc::new(PeriodicMesh::new(m, DEFAULT_QUAD_ORDER).unwrap())
    }

    #[test]
    fn cubic_basis_coefficients() {
        let b = LocalBasis::<f64>::new(Space::P3);
        let expected = [1.0, -5.5, 9.0, -4.5];
        for (c, e) in b.coeffs(0).iter().zip(expected) {
            assert!((c - e).abs() < 1e-12, "{c} vs {e}");
        }
        assert!((b.value(1, 0.5) - 9.0 / 16.0).abs() < 1e-14);
        for k in 0..4 {
            for j in 0..4 {
                let v = b.value(k, j as f64 / 3.0);
                let d = if j == k { 1.0 } else { 0.0 };
                assert!((v - d).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_basis_coefficients() {
        let b = LocalBasis::<f64>::new(Space::P2);
        let expected = [1.0, -3.0, 2.0];
        for (c, e) in b.coeffs(0).iter().zip(expected) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_derivative_matches_finite_difference() {
        let b = LocalBasis::<f64>::new(Space::P3);
        let step = 1e-6;
        for k in 0..4 {
            for &x in &[0.1, 0.4, 0.77] {
                let fd = (b.value(k, x + step) - b.value(k, x - step)) / (2.0 * step);
                assert!((fd - b.derivative(k, x)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn mesh_rejects_bad_parameters() {
        assert_eq!(
            PeriodicMesh::<f64>::new(1, 6).unwrap_err(),
            FemError::TooFewElements(1)
        );
        assert_eq!(
            PeriodicMesh::<f64>::new(4, 2).unwrap_err(),
            FemError::QuadOrderTooLow(2)
        );
    }

    #[test]
    fn mesh_geometry() {
        let m = mesh(100);
        assert_eq!(m.h(), 1.0 / 100.0);
        let m4 = mesh(4);
        for e in 0..4 {
            assert_eq!(m4.element_start(e), e as f64 / 4.0);
        }
        let w: f64 = m4.quad_weights()[..6].iter().sum();
        assert!((w - 0.25).abs() < 1e-15);
        assert_eq!(m4.num_dofs(Space::P3), 12);
        assert_eq!(m4.num_dofs(Space::P2), 8);
        assert_eq!(m4.dof(Space::P3, 3, 3), 0);
    }

    #[test]
    fn gauss_weights_positive_and_normalized() {
        for n in 1..=12 {
            let (p, w) = gauss_legendre::<f64>(n);
            assert!(w.iter().all(|&v| v > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(p.windows(2).all(|s| s[0] < s[1]));
        }
    }

    #[test]
    fn gauss_exact_on_monomials() {
        for n in 1..=10 {
            let (p, w) = gauss_legendre::<f64>(n);
            for deg in 0..2 * n {
                let q: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 1.0 / (deg as f64 + 1.0);
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn interpolate_constant_and_nodal_value() {
        let m = mesh(4);
        let f = FeFunction::interpolate(m.clone(), Space::P3, |_| 7.0).unwrap();
        assert!(f.coeffs().iter().all(|&c| c == 7.0));
        let s = FeFunction::interpolate(m, Space::P3, |x| (2.0 * std::f64::consts::PI * x).sin())
            .unwrap();
        // node 1 sits at 1/12
        assert!((s.coeffs()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interpolate_rejects_nonfinite() {
        let m = mesh(4);
        let err = FeFunction::interpolate(m, Space::P2, |x| if x > 0.6 { f64::NAN } else { 0.0 })
            .unwrap_err();
        assert_eq!(err, FemError::NonFinite { x: 0.625 });
    }

    #[test]
    fn interpolation_is_idempotent() {
        let m = mesh(5);
        let f = FeFunction::interpolate(m.clone(), Space::P3, |x| (x * 9.0).cos()).unwrap();
        let g = FeFunction::interpolate(m, Space::P3, |x| f.value(x)).unwrap();
        for (a, b) in f.coeffs().iter().zip(g.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_evaluation() {
        let m = mesh(6);
        let f = FeFunction::constant(m, Space::P2, 2.5);
        for &x in &[0.0, 0.31, 0.999, -3.2] {
            assert!((f.value(x) - 2.5).abs() < 1e-14);
            assert!(f.slope(x).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_reproduced_within_element() {
        let m = mesh(4);
        // interpolate x^3 on the first element; values elsewhere don't matter
        let f = FeFunction::interpolate(m, Space::P3, |x| x * x * x).unwrap();
        for &x in &[0.01, 0.1, 0.17, 0.2449] {
            assert!((f.value(x) - x * x * x).abs() < 1e-13);
            assert!((f.slope(x) - 3.0 * x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn error_norm_examples() {
        let m = mesh(16);
        let tau = 2.0 * std::f64::consts::PI;
        let zero = FeFunction::constant(m.clone(), Space::P3, 0.0);
        assert!((zero.error_norm(|_| 1.0, |_| 0.0, ErrorNorm::L2) - 1.0).abs() < 1e-14);
        let l2 = zero.error_norm(
            |x| (tau * x).sin(),
            |x| tau * (tau * x).cos(),
            ErrorNorm::L2,
        );
        assert!((l2 - 0.5f64.sqrt()).abs() < 1e-12);
        let l1 = zero.error_norm(|x| (tau * x).sin(), |_| 0.0, ErrorNorm::L1);
        assert!((l1 - 2.0 / std::f64::consts::PI).abs() < 1e-3);
        let linf = zero.error_norm(|x| (tau * x).sin(), |_| 0.0, ErrorNorm::Linf);
        assert!(linf > 0.99 && linf <= 1.0);

        let quad = |x: f64| x * (1.0 - x);
        let f = FeFunction::interpolate(m, Space::P2, quad).unwrap();
        for norm in [
            ErrorNorm::L2,
            ErrorNorm::H1Semi,
            ErrorNorm::L1,
            ErrorNorm::Linf,
        ] {
            assert!(
                f.error_norm(quad, |x| 1.0 - 2.0 * x, norm) < 1e-12,
                "{norm:?}"
            );
        }
    }

    #[test]
    fn integral_of_interpolated_sine_vanishes() {
        let m = mesh(8);
        let f = FeFunction::interpolate(m, Space::P3, |x| (2.0 * std::f64::consts::PI * x).sin())
            .unwrap();
        assert!(f.integral().abs() < 1e-15);
    }

    #[test]
    fn coefficient_count_checked() {
        let m = mesh(4);
        assert!(matches!(
            FeFunction::new(m, Space::P3, vec![0.0; 13]),
            Err(FemError::CoefficientCount {
                expected: 12,
                got: 13,
                ..
            })
        ));
    }

    #[test]
    fn f32_basis_is_usable() {
        let b = LocalBasis::<f32>::new(Space::P3);
        assert!((b.value(1, 0.5) - 0.5625).abs() < 1e-6);
    }

    #[test]
    fn mass_matrix_rows_sum_to_basis_integrals() {
        let m = mesh(7);
        for space in [Space::P2, Space::P3] {
            let n = m.num_dofs(space);
            let mut mass = vec![0.0; n * n];
            let mut load = vec![0.0; n];
            for e in 0..m.num_elements() {
                for q in 0..m.quad_order() {
                    let w = m.ref_weights()[q] * m.h();
                    for i in 0..space.local_dofs() {
                        let (gi, vi) = (m.dof(space, e, i), m.basis_at_quad(space, q, i));
                        load[gi] += w * vi;
                        for j in 0..space.local_dofs() {
                            mass[gi * n + m.dof(space, e, j)] +=
                                w * vi * m.basis_at_quad(space, q, j);
                        }
                    }
                }
            }
            for i in 0..n {
                let row: f64 = mass[i * n..(i + 1) * n].iter().sum();
                assert!((row - load[i]).abs() < 1e-15);
            }
            assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in 0.0f64..1.0) {
            for space in [Space::P2, Space::P3] {
                let b = LocalBasis::<f64>::new(space);
                let s: f64 = (0..space.local_dofs()).map(|k| b.value(k, x)).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn piecewise_polynomials_reproduced(
            coeffs in proptest::collection::vec(-3.0f64..3.0, 24),
            x in 0.0f64..1.0,
        ) {
            let m = mesh(8);
            let f = FeFunction::new(m.clone(), Space::P3, coeffs).unwrap();
            let g = FeFunction::interpolate(m, Space::P3, |y| f.value(y)).unwrap();
            prop_assert!((f.value(x) - g.value(x)).abs() <= 1e-12);
        }
    }
}
