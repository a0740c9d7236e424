//! Semi-implicit backward-Euler stepping for the Cucker-Smale,
//! Motsch-Tadmor and weighted s-model variants.
//!
//! Each step solves three decoupled linear problems, each implicit only in
//! its own unknown with every coefficient frozen at step `n`:
//!
//! ```text
//! (1/k)<rho', v> - <rho' u, v_x>               = (1/k)<rho, v> + <f1, v>
//! (1/k)<w', v>   + <w'_x u_F, v>               = (1/k)<w, v>   + <f2, v>
//! (1/k)<u', q>   + <u' u_x, q> + <W u' rho_phi, q> = (1/k)<u, q> + <W (u rho)_phi, q> + <f3, q>
//! ```
//!
//! with `rho, w in P3`, `u in P2`, `u_F` the Favre velocity and `W` the
//! effective weight (`w` for the s-model and Cucker-Smale, `1 / rho_phi` for
//! Motsch-Tadmor). Forcing terms are sampled at the new time level.

use std::fmt;
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convolution::{favre_ratio, ConvolutionError, KernelTable, DEFAULT_RHO_PHI_FLOOR};
use crate::diagnostics::{bulk_stats, DiagnosticsRecord};
use crate::fem::{FeFunction, FemError, PeriodicMesh, Space};
use crate::linalg::{CyclicBandedMatrix, SolveError};
use crate::scalar::Scalar;

pub const DEFAULT_CFL_RATIO: f64 = 0.25;
pub const DEFAULT_DXU_CAP: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CuckerSmale,
    MotschTadmor,
    SModel,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::CuckerSmale => "cucker_smale",
            Variant::MotschTadmor => "motsch_tadmor",
            Variant::SModel => "s_model",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CflMode {
    Strict,
    Permissive,
}

/// Pointwise function of `(t, x)`.
pub type PointFn<S> = Arc<dyn Fn(S, S) -> S + Send + Sync>;

/// Right-hand sides of the density, weight and velocity equations.
#[derive(Clone)]
pub struct Forcing<S> {
    pub f1: PointFn<S>,
    pub f2: PointFn<S>,
    pub f3: PointFn<S>,
}

impl<S> fmt::Debug for Forcing<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Forcing { .. }")
    }
}

#[derive(Clone, Debug)]
pub struct StepConfig<S> {
    pub k: S,
    pub final_time: S,
    pub variant: Variant,
    pub forcing: Option<Forcing<S>>,
    pub cfl_ratio_max: S,
    pub cfl_mode: CflMode,
    pub rho_phi_floor: S,
    pub dxu_cap: S,
}

impl<S: Scalar> StepConfig<S> {
    pub fn new(variant: Variant, k: S, final_time: S) -> Self {
        Self {
            k,
            final_time,
            variant,
            forcing: None,
            cfl_ratio_max: S::lit(DEFAULT_CFL_RATIO),
            cfl_mode: CflMode::Permissive,
            rho_phi_floor: S::lit(DEFAULT_RHO_PHI_FLOOR),
            dxu_cap: S::lit(DEFAULT_DXU_CAP),
        }
    }

    pub fn with_forcing(mut self, forcing: Forcing<S>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn with_cfl_mode(mut self, mode: CflMode) -> Self {
        self.cfl_mode = mode;
        self
    }

    /// Number of steps to reach `final_time`, if it is a whole multiple of `k`.
    pub fn num_steps(&self) -> Option<usize> {
        let ratio = (self.final_time / self.k).as_f64();
        let n = ratio.round();
        ((ratio - n).abs() <= 1e-6 * n.max(1.0) && n >= 1.0).then_some(n as usize)
    }
}

#[derive(Clone, Debug)]
pub struct SimState<S> {
    pub rho: FeFunction<S>,
    pub w: FeFunction<S>,
    pub u: FeFunction<S>,
    pub t: S,
}

impl<S: Scalar> SimState<S> {
    pub fn is_finite(&self) -> bool {
        self.rho.is_finite() && self.w.is_finite() && self.u.is_finite() && self.t.is_finite()
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh<S>> {
        self.rho.mesh()
    }

    /// Interpolate pointwise initial data.
    pub fn from_fns(
        mesh: Arc<PeriodicMesh<S>>,
        rho: impl Fn(S) -> S,
        w: impl Fn(S) -> S,
        u: impl Fn(S) -> S,
    ) -> Result<Self, FemError> {
        Ok(Self {
            rho: FeFunction::interpolate(mesh.clone(), Space::P3, rho)?,
            w: FeFunction::interpolate(mesh.clone(), Space::P3, w)?,
            u: FeFunction::interpolate(mesh, Space::P2, u)?,
            t: S::zero(),
        })
    }
}

/// Pointwise monitors evaluated on the state entering a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMonitors {
    pub rho_min: f64,
    pub rho_phi_min: f64,
    pub dxu_max: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("{field} solve failed: {source}")]
    Solver {
        field: &'static str,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Floor(#[from] ConvolutionError),
    #[error("blow-up suspected: {quantity} = {value:e} at x = {x}")]
    BlowUpSuspected {
        quantity: &'static str,
        value: f64,
        x: f64,
    },
    #[error("CFL violation: k = {k} exceeds {ratio} * h = {limit}")]
    CflViolation { k: f64, ratio: f64, limit: f64 },
    #[error("invalid step configuration: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
}

/// Quantities frozen at time level `n`, all sampled at the quadrature points.
struct Frozen<S> {
    rho_q: Vec<S>,
    w_q: Vec<S>,
    u_q: Vec<S>,
    du_q: Vec<S>,
    rho_phi: Vec<S>,
    flux_phi: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct Stepper<S> {
    mesh: Arc<PeriodicMesh<S>>,
    kernel: Arc<KernelTable<S>>,
    cfg: StepConfig<S>,
    quad_points: Vec<S>,
}

/// Snapshots and diagnostics of a run; `failure` is set when the run
/// stopped early, in which case the series end at the last good step.
#[derive(Clone, Debug)]
pub struct RunOutput<S> {
    pub snapshots: Vec<SimState<S>>,
    pub records: Vec<DiagnosticsRecord>,
    pub monitors: Vec<StepMonitors>,
    pub failure: Option<RunFailure>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub step: usize,
    pub t: f64,
    pub error: StepError,
}

impl<S: Scalar> Stepper<S> {
    pub fn new(kernel: Arc<KernelTable<S>>, cfg: StepConfig<S>) -> Result<Self, StepError> {
        if !(cfg.k > S::zero()) || !cfg.k.is_finite() {
            return Err(StepError::InvalidConfig(format!(
                "time step k = {} must be positive",
                cfg.k
            )));
        }
        if !(cfg.final_time >= cfg.k) {
            return Err(StepError::InvalidConfig(format!(
                "final time {} is shorter than one step {}",
                cfg.final_time, cfg.k
            )));
        }
        let mesh = kernel.mesh().clone();
        let limit = cfg.cfl_ratio_max * mesh.h();
        if cfg.k > limit {
            let err = StepError::CflViolation {
                k: cfg.k.as_f64(),
                ratio: cfg.cfl_ratio_max.as_f64(),
                limit: limit.as_f64(),
            };
            match cfg.cfl_mode {
                CflMode::Strict => return Err(err),
                CflMode::Permissive => warn!("{err}; continuing in permissive mode"),
            }
        }
        let quad_points = mesh.quad_points();
        Ok(Self {
            mesh,
            kernel,
            cfg,
            quad_points,
        })
    }

    pub fn config(&self) -> &StepConfig<S> {
        &self.cfg
    }

    pub fn kernel(&self) -> &Arc<KernelTable<S>> {
        &self.kernel
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh<S>> {
        &self.mesh
    }

    fn freeze(&self, state: &SimState<S>) -> Frozen<S> {
        let rho_q = state.rho.at_quad();
        let u_q = state.u.at_quad();
        let flux: Vec<S> = u_q.iter().zip(&rho_q).map(|(a, b)| *a * *b).collect();
        Frozen {
            w_q: state.w.at_quad(),
            du_q: state.u.deriv_at_quad(),
            rho_phi: self.kernel.convolve_quad(&rho_q),
            flux_phi: self.kernel.convolve_quad(&flux),
            rho_q,
            u_q,
        }
    }

    fn forcing_at(&self, pick: impl Fn(&Forcing<S>) -> &PointFn<S>, t: S) -> Option<Vec<S>> {
        self.cfg.forcing.as_ref().map(|f| {
            let g = pick(f);
            self.quad_points.iter().map(|&x| g(t, x)).collect()
        })
    }

    /// Assemble and solve `A x = b` with
    /// `A[i][j] = sum_q W_q * mat(q, test_i, test_i', trial_j, trial_j')` and
    /// `b[i] = sum_q W_q * rhs(q, test_i, test_i')`, `q` a global quadrature index.
    fn solve_galerkin(
        &self,
        space: Space,
        field: &'static str,
        mat: impl Fn(usize, S, S, S, S) -> S,
        rhs: impl Fn(usize, S, S) -> S,
    ) -> Result<FeFunction<S>, StepError> {
        let mesh = &*self.mesh;
        let n = mesh.num_dofs(space);
        let nl = space.local_dofs();
        let nq = mesh.quad_order();
        let mut a = CyclicBandedMatrix::zeros(n, space.order());
        let mut b = vec![S::zero(); n];
        for e in 0..mesh.num_elements() {
            for q in 0..nq {
                let g = e * nq + q;
                let wq = mesh.ref_weights()[q] * mesh.h();
                for i in 0..nl {
                    let (vi, di) = (
                        mesh.basis_at_quad(space, q, i),
                        mesh.basis_deriv_at_quad(space, q, i),
                    );
                    let gi = mesh.dof(space, e, i);
                    b[gi] += wq * rhs(g, vi, di);
                    for j in 0..nl {
                        let (vj, dj) = (
                            mesh.basis_at_quad(space, q, j),
                            mesh.basis_deriv_at_quad(space, q, j),
                        );
                        a.add(gi, mesh.dof(space, e, j), wq * mat(g, vi, di, vj, dj));
                    }
                }
            }
        }
        let x = a
            .solve(&b)
            .map_err(|source| StepError::Solver { field, source })?;
        Ok(
            FeFunction::new(self.mesh.clone(), space, x)
                .expect("dof count matches by construction"),
        )
    }

    fn rho_from(&self, fz: &Frozen<S>, t_next: S) -> Result<FeFunction<S>, StepError> {
        let inv_k = S::one() / self.cfg.k;
        let f1 = self.forcing_at(|f| &f.f1, t_next);
        self.solve_galerkin(
            Space::P3,
            "rho",
            |g, vi, di, vj, _| inv_k * vj * vi - vj * fz.u_q[g] * di,
            |g, vi, _| (inv_k * fz.rho_q[g] + f1.as_ref().map_or(S::zero(), |f| f[g])) * vi,
        )
    }

    fn w_from(&self, fz: &Frozen<S>, t_next: S) -> Result<FeFunction<S>, StepError> {
        let inv_k = S::one() / self.cfg.k;
        let u_f = favre_ratio(
            &fz.flux_phi,
            &fz.rho_phi,
            &self.quad_points,
            self.cfg.rho_phi_floor,
        )?;
        let f2 = self.forcing_at(|f| &f.f2, t_next);
        self.solve_galerkin(
            Space::P3,
            "w",
            |g, vi, _, vj, dj| (inv_k * vj + dj * u_f[g]) * vi,
            |g, vi, _| (inv_k * fz.w_q[g] + f2.as_ref().map_or(S::zero(), |f| f[g])) * vi,
        )
    }

    fn u_from(&self, fz: &Frozen<S>, w_eff: &[S], t_next: S) -> Result<FeFunction<S>, StepError> {
        let inv_k = S::one() / self.cfg.k;
        let f3 = self.forcing_at(|f| &f.f3, t_next);
        self.solve_galerkin(
            Space::P2,
            "u",
            |g, vi, _, vj, _| (inv_k + fz.du_q[g] + w_eff[g] * fz.rho_phi[g]) * vj * vi,
            |g, vi, _| {
                (inv_k * fz.u_q[g]
                    + w_eff[g] * fz.flux_phi[g]
                    + f3.as_ref().map_or(S::zero(), |f| f[g]))
                    * vi
            },
        )
    }

    fn effective_weight(&self, fz: &Frozen<S>) -> Result<Vec<S>, StepError> {
        match self.cfg.variant {
            Variant::CuckerSmale | Variant::SModel => Ok(fz.w_q.clone()),
            Variant::MotschTadmor => {
                let ones = vec![S::one(); fz.rho_phi.len()];
                Ok(favre_ratio(
                    &ones,
                    &fz.rho_phi,
                    &self.quad_points,
                    self.cfg.rho_phi_floor,
                )?)
            }
        }
    }

    /// Density update.
    pub fn step_rho(&self, state: &SimState<S>) -> Result<FeFunction<S>, StepError> {
        self.rho_from(&self.freeze(state), state.t + self.cfg.k)
    }

    /// Weight update, transported along the Favre velocity.
    pub fn step_w(&self, state: &SimState<S>) -> Result<FeFunction<S>, StepError> {
        self.w_from(&self.freeze(state), state.t + self.cfg.k)
    }

    /// Velocity update with an explicit effective weight sampled at the
    /// quadrature points.
    pub fn step_u(&self, state: &SimState<S>, w_eff: &[S]) -> Result<FeFunction<S>, StepError> {
        assert_eq!(
            w_eff.len(),
            self.quad_points.len(),
            "one weight per quadrature point"
        );
        self.u_from(&self.freeze(state), w_eff, state.t + self.cfg.k)
    }

    /// Velocity update with the weight this variant prescribes.
    pub fn step_u_default(&self, state: &SimState<S>) -> Result<FeFunction<S>, StepError> {
        let fz = self.freeze(state);
        let w_eff = self.effective_weight(&fz)?;
        self.u_from(&fz, &w_eff, state.t + self.cfg.k)
    }

    /// Monitors on a state: minimum density, minimum `rho_phi`, maximum `|u_x|`.
    pub fn monitors(&self, state: &SimState<S>) -> StepMonitors {
        let fz = self.freeze(state);
        self.monitors_from(state, &fz).0
    }

    fn monitors_from(&self, state: &SimState<S>, fz: &Frozen<S>) -> (StepMonitors, S, S) {
        let (rho_min, _) = state.rho.range();
        let (i_phi, rho_phi_min) = argmin(&fz.rho_phi);
        let du = state.u.deriv_at_samples();
        let (i_du, dxu_max) = du.iter().enumerate().fold((0, S::zero()), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        let x_phi = self.quad_points[i_phi];
        let x_du = self.mesh.sample_points()[i_du];
        (
            StepMonitors {
                rho_min: rho_min.as_f64(),
                rho_phi_min: rho_phi_min.as_f64(),
                dxu_max: dxu_max.as_f64(),
            },
            x_phi,
            x_du,
        )
    }

    /// Advance one step; returns the new state and the monitors of the old one.
    pub fn advance(&self, state: &SimState<S>) -> Result<(SimState<S>, StepMonitors), StepError> {
        if !state.is_finite() {
            return Err(StepError::NonFinite {
                t: state.t.as_f64(),
            });
        }
        let fz = self.freeze(state);
        let (mon, x_phi, x_du) = self.monitors_from(state, &fz);
        if !(mon.rho_phi_min >= self.cfg.rho_phi_floor.as_f64()) {
            return Err(StepError::BlowUpSuspected {
                quantity: "rho_phi_min",
                value: mon.rho_phi_min,
                x: x_phi.as_f64(),
            });
        }
        if !(mon.dxu_max <= self.cfg.dxu_cap.as_f64()) {
            return Err(StepError::BlowUpSuspected {
                quantity: "dxu_max",
                value: mon.dxu_max,
                x: x_du.as_f64(),
            });
        }
        let t_next = state.t + self.cfg.k;
        let rho = self.rho_from(&fz, t_next)?;
        let w = match self.cfg.variant {
            Variant::SModel => self.w_from(&fz, t_next)?,
            Variant::CuckerSmale => state.w.clone(),
            Variant::MotschTadmor => self.motsch_tadmor_weight(&rho)?,
        };
        let w_eff = self.effective_weight(&fz)?;
        let u = self.u_from(&fz, &w_eff, t_next)?;
        let next = SimState {
            rho,
            w,
            u,
            t: t_next,
        };
        if !next.is_finite() {
            return Err(StepError::NonFinite { t: t_next.as_f64() });
        }
        Ok((next, mon))
    }

    /// `1 / rho_phi` interpolated at the P3 nodes; a derived field for MT runs.
    pub fn motsch_tadmor_weight(&self, rho: &FeFunction<S>) -> Result<FeFunction<S>, StepError> {
        let nodes = self.mesh.nodes(Space::P3);
        let rho_phi = self.kernel.convolve_at(&rho.at_quad(), &nodes);
        let ones = vec![S::one(); nodes.len()];
        let w = favre_ratio(&ones, &rho_phi, &nodes, self.cfg.rho_phi_floor)?;
        Ok(FeFunction::new(self.mesh.clone(), Space::P3, w)
            .expect("dof count matches by construction"))
    }

    /// Run to the final time, recording every `sample_every` steps plus the
    /// first and last step.
    pub fn run(
        &self,
        initial: SimState<S>,
        sample_every: usize,
    ) -> Result<RunOutput<S>, StepError> {
        let steps = self.cfg.num_steps().ok_or_else(|| {
            StepError::InvalidConfig(format!(
                "final time {} is not a whole number of steps of size {}",
                self.cfg.final_time, self.cfg.k
            ))
        })?;
        let sample_every = sample_every.max(1);
        let mut out = RunOutput {
            snapshots: vec![],
            records: vec![],
            monitors: vec![],
            failure: None,
        };
        let mut state = initial;
        out.records.push(bulk_stats(&state, &self.kernel));
        out.snapshots.push(state.clone());
        for n in 0..steps {
            match self.advance(&state) {
                Ok((next, mon)) => {
                    out.monitors.push(mon);
                    state = next;
                }
                Err(error) => {
                    out.failure = Some(RunFailure {
                        step: n,
                        t: state.t.as_f64(),
                        error,
                    });
                    return Ok(out);
                }
            }
            let step = n + 1;
            if step % sample_every == 0 || step == steps {
                // pin the recorded time to the grid to avoid drift from summation
                state.t = S::count(step) * self.cfg.k;
                out.records.push(bulk_stats(&state, &self.kernel));
                out.snapshots.push(state.clone());
            }
        }
        Ok(out)
    }
}

fn argmin<S: Scalar>(v: &[S]) -> (usize, S) {
    v.iter().enumerate().fold(
        (0, S::infinity()),
        |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc },
    )
}
