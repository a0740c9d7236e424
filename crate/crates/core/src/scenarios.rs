//! Built-in experiments: the two-flock preset, the manufactured solution
//! with its forcing, the refinement sweep and the three-model comparison.
//!
//! A [`ScenarioSpec`] is the user-facing description (every field optional);
//! [`ScenarioSpec::resolve`] fills in preset defaults and validates the result
//! into a [`ResolvedScenario`], which can build the kernel table, the initial
//! state and the step configuration for any variant.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convolution::{
    favre_ratio, KernelCurve, KernelError, KernelSpec, KernelTable, DEFAULT_RHO_PHI_FLOOR,
};
use crate::diagnostics::least_squares_slope;
use crate::fem::{ErrorNorm, FeFunction, FemError, PeriodicMesh, Space, DEFAULT_QUAD_ORDER};
use crate::scalar::Scalar;
use crate::stepper::{
    CflMode, Forcing, PointFn, RunOutput, SimState, StepConfig, StepError, Stepper, Variant,
    DEFAULT_CFL_RATIO, DEFAULT_DXU_CAP,
};

/// Velocity window of the small flock.
pub const SMALL_FLOCK_WINDOW: (f64, f64) = (0.15, 0.35);
/// Region holding the small flock, used for its density centroid.
pub const SMALL_FLOCK_REGION: (f64, f64) = (0.0, 0.5);
const WINDOW_SAMPLES: usize = 2000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("kernel table: {0}")]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("initial data line {line}: {reason}")]
    InitialData { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TwoFlock,
    Manufactured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    RationalSqrt,
    Constant,
    /// CSV of `distance,value` pairs covering `[0, 1/2]`.
    Table(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingMode {
    /// The closed-form right-hand sides; only consistent with `phi = 1`.
    ClosedForm,
    /// The equations applied to the exact solution with the discrete kernel.
    Residual,
}

/// Initial weight of the s-model on the two-flock preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    Unit,
    MotschTadmor,
}

/// Scenario as written in a configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub preset: Option<Preset>,
    pub name: Option<String>,
    pub variant: Option<Variant>,
    /// Variants run by `compare`.
    pub variants: Option<Vec<Variant>>,
    pub num_elements: Option<usize>,
    pub k: Option<f64>,
    #[serde(rename = "T")]
    pub final_time: Option<f64>,
    pub quad_order: Option<usize>,
    pub kernel: Option<KernelChoice>,
    pub sample_every: Option<usize>,
    pub cfl_mode: Option<CflMode>,
    pub cfl_ratio_max: Option<f64>,
    pub rho_phi_floor: Option<f64>,
    pub dxu_cap: Option<f64>,
    pub weight_init: Option<WeightInit>,
    /// Nodal-values CSV replacing the preset initial data.
    pub initial_data: Option<PathBuf>,
    pub forcing: Option<ForcingMode>,
    /// Inclusive range of refinement levels for the sweep.
    pub levels: Option<[u32; 2]>,
    /// Free parameter of the entropy bound.
    pub entropy_c: Option<f64>,
}

/// Scenario with every default applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedScenario {
    pub preset: Preset,
    pub name: String,
    pub variant: Variant,
    pub variants: Vec<Variant>,
    pub num_elements: usize,
    pub k: f64,
    #[serde(rename = "T")]
    pub final_time: f64,
    pub quad_order: usize,
    pub kernel: KernelChoice,
    pub sample_every: usize,
    pub cfl_mode: CflMode,
    pub cfl_ratio_max: f64,
    pub rho_phi_floor: f64,
    pub dxu_cap: f64,
    pub weight_init: WeightInit,
    pub initial_data: Option<PathBuf>,
    pub forcing: Option<ForcingMode>,
    pub levels: [u32; 2],
    pub entropy_c: f64,
}

impl ScenarioSpec {
    /// Apply preset defaults and validate.
    ///
    /// Relative paths are resolved against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedScenario, ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Config(msg));
        let preset = self
            .preset
            .ok_or_else(|| ScenarioError::Config("missing field `preset`".into()))?;
        let (variant, num_elements, final_time, kernel) = match preset {
            Preset::TwoFlock => (Variant::CuckerSmale, 100, 2.0, KernelChoice::RationalSqrt),
            Preset::Manufactured => (Variant::SModel, 16, 0.5, KernelChoice::Constant),
        };
        let variant = self.variant.unwrap_or(variant);
        let num_elements = self.num_elements.unwrap_or(num_elements);
        if num_elements < 2 {
            return bad(format!("num_elements = {num_elements} must be at least 2"));
        }
        let cfl_ratio_max = self.cfl_ratio_max.unwrap_or(DEFAULT_CFL_RATIO);
        let k = match (self.k, preset) {
            (Some(k), _) => k,
            (None, Preset::TwoFlock) => 0.05,
            (None, Preset::Manufactured) => cfl_ratio_max / num_elements as f64,
        };
        let final_time = self.final_time.unwrap_or(final_time);
        let kernel = match self.kernel.clone().unwrap_or(kernel) {
            KernelChoice::Table(p) if p.is_relative() => KernelChoice::Table(base_dir.join(p)),
            other => other,
        };
        let forcing = match preset {
            Preset::TwoFlock => {
                if self.forcing.is_some() {
                    return bad("`forcing` applies to the manufactured preset only".into());
                }
                None
            }
            Preset::Manufactured => {
                Some(self.forcing.unwrap_or(if kernel == KernelChoice::Constant {
                    ForcingMode::ClosedForm
                } else {
                    ForcingMode::Residual
                }))
            }
        };
        if forcing == Some(ForcingMode::ClosedForm) && kernel != KernelChoice::Constant {
            return bad(
                "closed_form forcing is only consistent with the constant kernel; use forcing = \"residual\""
                    .into(),
            );
        }
        if self.initial_data.is_some() && preset != Preset::TwoFlock {
            return bad("`initial_data` replaces two_flock initial data only".into());
        }
        let initial_data = self.initial_data.as_ref().map(|p| {
            if p.is_relative() {
                base_dir.join(p)
            } else {
                p.clone()
            }
        });
        let levels = self.levels.unwrap_or([2, 6]);
        if levels[0] < 1 || levels[0] > levels[1] || levels[1] > 12 {
            return bad(format!(
                "levels {levels:?} must satisfy 1 <= first <= last <= 12"
            ));
        }
        let resolved = ResolvedScenario {
            preset,
            name: self.name.clone().unwrap_or_else(|| match preset {
                Preset::TwoFlock => "two_flock".into(),
                Preset::Manufactured => "manufactured".into(),
            }),
            variant,
            variants: self.variants.clone().unwrap_or_else(|| {
                vec![Variant::CuckerSmale, Variant::MotschTadmor, Variant::SModel]
            }),
            num_elements,
            k,
            final_time,
            quad_order: self.quad_order.unwrap_or(DEFAULT_QUAD_ORDER),
            kernel,
            sample_every: self.sample_every.unwrap_or(1),
            cfl_mode: self.cfl_mode.unwrap_or(CflMode::Permissive),
            cfl_ratio_max,
            rho_phi_floor: self.rho_phi_floor.unwrap_or(DEFAULT_RHO_PHI_FLOOR),
            dxu_cap: self.dxu_cap.unwrap_or(DEFAULT_DXU_CAP),
            weight_init: self.weight_init.unwrap_or(WeightInit::MotschTadmor),
            initial_data,
            forcing,
            levels,
            entropy_c: self.entropy_c.unwrap_or(1.0),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

impl ResolvedScenario {
    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Config(msg));
        let positive = [
            ("k", self.k),
            ("T", self.final_time),
            ("cfl_ratio_max", self.cfl_ratio_max),
            ("rho_phi_floor", self.rho_phi_floor),
            ("dxu_cap", self.dxu_cap),
            ("entropy_c", self.entropy_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("`{name}` = {v} must be positive and finite"));
            }
        }
        if self.quad_order < crate::fem::MIN_QUAD_ORDER {
            return bad(format!(
                "quad_order = {} is below the minimum {}",
                self.quad_order,
                crate::fem::MIN_QUAD_ORDER
            ));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if self.variants.is_empty() {
            return bad("`variants` must not be empty".into());
        }
        if self.step_count().is_none() {
            return bad(format!(
                "T = {} is not a whole number of steps k = {}",
                self.final_time, self.k
            ));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        1.0 / self.num_elements as f64
    }

    pub fn step_count(&self) -> Option<usize> {
        StepConfig::new(self.variant, self.k, self.final_time).num_steps()
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, ScenarioError> {
        Ok(match &self.kernel {
            KernelChoice::RationalSqrt => KernelSpec::RationalSqrt,
            KernelChoice::Constant => KernelSpec::Constant,
            KernelChoice::Table(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                KernelSpec::Table(KernelCurve::from_csv(&text)?)
            }
        })
    }

    pub fn build_kernel<S: Scalar>(&self) -> Result<Arc<KernelTable<S>>, ScenarioError> {
        let mesh = Arc::new(PeriodicMesh::new(self.num_elements, self.quad_order)?);
        Ok(Arc::new(KernelTable::new(mesh, self.kernel_spec()?)))
    }

    pub fn step_config<S: Scalar>(
        &self,
        variant: Variant,
        table: &Arc<KernelTable<S>>,
    ) -> StepConfig<S> {
        let mut cfg = StepConfig::new(variant, S::lit(self.k), S::lit(self.final_time));
        cfg.cfl_mode = self.cfl_mode;
        cfg.cfl_ratio_max = S::lit(self.cfl_ratio_max);
        cfg.rho_phi_floor = S::lit(self.rho_phi_floor);
        cfg.dxu_cap = S::lit(self.dxu_cap);
        if let Some(mode) = self.forcing {
            cfg.forcing = Some(manufactured_forcing_unchecked(mode, table.clone()));
        }
        cfg
    }

    pub fn initial_state<S: Scalar>(
        &self,
        variant: Variant,
        table: &KernelTable<S>,
    ) -> Result<SimState<S>, ScenarioError> {
        let mesh = table.mesh().clone();
        match self.preset {
            Preset::Manufactured => Ok(ManufacturedSolution.state(mesh, S::zero())?),
            Preset::TwoFlock => {
                let mut state = match &self.initial_data {
                    Some(path) => {
                        let text =
                            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                                path: path.clone(),
                                source,
                            })?;
                        parse_nodal_values(&text, mesh)?
                    }
                    None => two_flock_state(table, WeightInit::Unit, self.rho_phi_floor)?,
                };
                state.w = match (variant, self.weight_init) {
                    (Variant::CuckerSmale, _) | (Variant::SModel, WeightInit::Unit) => {
                        if self.initial_data.is_some() && variant == Variant::SModel {
                            state.w
                        } else {
                            FeFunction::constant(table.mesh().clone(), Space::P3, S::one())
                        }
                    }
                    _ => inverse_rho_phi(&state.rho, table, S::lit(self.rho_phi_floor))?,
                };
                Ok(state)
            }
        }
    }

    /// Stepper and initial state for one variant.
    pub fn prepare<S: Scalar>(
        &self,
        variant: Variant,
        table: &Arc<KernelTable<S>>,
    ) -> Result<(Stepper<S>, SimState<S>), ScenarioError> {
        let stepper = Stepper::new(table.clone(), self.step_config(variant, table))?;
        let state = self.initial_state(variant, table)?;
        Ok((stepper, state))
    }
}

/// Smooth bump `exp(-1 / (1 - (10 (x - c))^2))` supported on `(c - 0.1, c + 0.1)`.
pub fn bump(x: f64, c: f64) -> f64 {
    let s = 10.0 * (x - c);
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Two-flock density: a light flock at 0.25 and a heavy one at 0.75.
pub fn two_flock_density(x: f64) -> f64 {
    0.5 * bump(x, 0.25) + 50.0 * bump(x, 0.75)
}

/// Two-flock velocity: a compressive dip inside the light flock, zero elsewhere.
pub fn two_flock_velocity(x: f64) -> f64 {
    let a = 1.0 / (12.0 * std::f64::consts::PI);
    if x > 0.15 && x < 0.35 {
        a * (10.0 * std::f64::consts::PI * (x - 0.15)).cos() - a
    } else {
        0.0
    }
}

/// Interpolated two-flock initial state with the requested weight.
pub fn two_flock_state<S: Scalar>(
    table: &KernelTable<S>,
    weight: WeightInit,
    floor: f64,
) -> Result<SimState<S>, ScenarioError> {
    let mesh = table.mesh().clone();
    let lift = |f: fn(f64) -> f64| move |x: S| S::lit(f(x.as_f64()));
    let mut state = SimState::from_fns(
        mesh,
        lift(two_flock_density),
        |_| S::one(),
        lift(two_flock_velocity),
    )?;
    if weight == WeightInit::MotschTadmor {
        state.w = inverse_rho_phi(&state.rho, table, S::lit(floor))?;
    }
    Ok(state)
}

/// P3 nodal interpolant of `1 / rho_phi`.
pub fn inverse_rho_phi<S: Scalar>(
    rho: &FeFunction<S>,
    table: &KernelTable<S>,
    floor: S,
) -> Result<FeFunction<S>, ScenarioError> {
    let mesh = table.mesh();
    let nodes = mesh.nodes(Space::P3);
    let rho_phi = table.convolve_at(&rho.at_quad(), &nodes);
    let ones = vec![S::one(); nodes.len()];
    let w = favre_ratio(&ones, &rho_phi, &nodes, floor).map_err(StepError::from)?;
    Ok(FeFunction::new(mesh.clone(), Space::P3, w)?)
}

/// Nodal-values CSV with columns `node_index,rho,w,u` at the P3 nodes.
///
/// `u` is given at the P3 nodes and evaluated from their cubic interpolant
/// at the P2 nodes.
pub fn parse_nodal_values<S: Scalar>(
    text: &str,
    mesh: Arc<PeriodicMesh<S>>,
) -> Result<SimState<S>, ScenarioError> {
    let n = mesh.num_dofs(Space::P3);
    let mut rows: Vec<Option<[f64; 3]>> = vec![None; n];
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            if fields != ["node_index", "rho", "w", "u"] {
                return Err(ScenarioError::InitialData {
                    line: line_no,
                    reason: format!("expected header node_index,rho,w,u, got {trimmed}"),
                });
            }
            continue;
        }
        let err = |reason: String| ScenarioError::InitialData {
            line: line_no,
            reason,
        };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 columns, got {}", fields.len())));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad node index {:?}", fields[0])))?;
        if i >= n {
            return Err(err(format!("node index {i} out of range for {n} nodes")));
        }
        let mut vals = [0.0f64; 3];
        for (slot, f) in vals.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite value {f:?}")));
            }
        }
        if rows[i].replace(vals).is_some() {
            return Err(err(format!("duplicate node index {i}")));
        }
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(ScenarioError::InitialData {
            line: 0,
            reason: format!("node {missing} missing; expected {n} rows"),
        });
    }
    let column = |c: usize| {
        rows.iter()
            .map(|r| S::lit(r.unwrap()[c]))
            .collect::<Vec<S>>()
    };
    let rho = FeFunction::new(mesh.clone(), Space::P3, column(0))?;
    let w = FeFunction::new(mesh.clone(), Space::P3, column(1))?;
    let u3 = FeFunction::new(mesh.clone(), Space::P3, column(2))?;
    let u = FeFunction::interpolate(mesh, Space::P2, |x| u3.value(x))?;
    Ok(SimState {
        rho,
        w,
        u,
        t: S::zero(),
    })
}

/// Smooth exact solution of the forced s-model with `rho` uniform in space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ManufacturedSolution;

impl ManufacturedSolution {
    fn g<S: Scalar>(x: S) -> S {
        (S::two() * S::pi() * x).sin() / (S::two() * S::pi())
    }

    fn g_x<S: Scalar>(x: S) -> S {
        (S::two() * S::pi() * x).cos()
    }

    pub fn rho<S: Scalar>(&self, t: S, _x: S) -> S {
        S::one() + t.sin()
    }

    pub fn rho_t<S: Scalar>(&self, t: S, _x: S) -> S {
        t.cos()
    }

    pub fn rho_x<S: Scalar>(&self, _t: S, _x: S) -> S {
        S::zero()
    }

    pub fn w<S: Scalar>(&self, t: S, x: S) -> S {
        t.sin() + S::one() / S::pi() + Self::g(x)
    }

    pub fn w_t<S: Scalar>(&self, t: S, _x: S) -> S {
        t.cos()
    }

    pub fn w_x<S: Scalar>(&self, _t: S, x: S) -> S {
        Self::g_x(x)
    }

    pub fn u<S: Scalar>(&self, t: S, x: S) -> S {
        t.sin() + Self::g(x)
    }

    pub fn u_t<S: Scalar>(&self, t: S, _x: S) -> S {
        t.cos()
    }

    pub fn u_x<S: Scalar>(&self, _t: S, x: S) -> S {
        Self::g_x(x)
    }

    /// Nodal interpolant of the exact solution at time `t`.
    pub fn state<S: Scalar>(
        &self,
        mesh: Arc<PeriodicMesh<S>>,
        t: S,
    ) -> Result<SimState<S>, FemError> {
        let mut s =
            SimState::from_fns(mesh, |x| self.rho(t, x), |x| self.w(t, x), |x| self.u(t, x))?;
        s.t = t;
        Ok(s)
    }

    /// `(E0, E1)`: summed squared L2 errors of `(rho, w, u)` and of their
    /// first derivatives against the exact solution at `state.t`.
    pub fn errors<S: Scalar>(&self, state: &SimState<S>) -> (f64, f64) {
        let t = state.t;
        let pairs: [(&FeFunction<S>, PointFn<S>, PointFn<S>); 3] = [
            (
                &state.rho,
                Arc::new(|t, x| Self.rho(t, x)),
                Arc::new(|t, x| Self.rho_x(t, x)),
            ),
            (
                &state.w,
                Arc::new(|t, x| Self.w(t, x)),
                Arc::new(|t, x| Self.w_x(t, x)),
            ),
            (
                &state.u,
                Arc::new(|t, x| Self.u(t, x)),
                Arc::new(|t, x| Self.u_x(t, x)),
            ),
        ];
        pairs.iter().fold((0.0, 0.0), |(e0, e1), (f, v, d)| {
            let l2 = f
                .error_norm(|x| v(t, x), |x| d(t, x), ErrorNorm::L2)
                .as_f64();
            let h1 = f
                .error_norm(|x| v(t, x), |x| d(t, x), ErrorNorm::H1Semi)
                .as_f64();
            (e0 + l2 * l2, e1 + h1 * h1)
        })
    }
}

/// Right-hand sides that make [`ManufacturedSolution`] exact.
pub fn manufactured_forcing<S: Scalar>(
    mode: ForcingMode,
    table: Arc<KernelTable<S>>,
) -> Result<Forcing<S>, ScenarioError> {
    if mode == ForcingMode::ClosedForm && !table.spec().is_constant() {
        return Err(ScenarioError::Config(format!(
            "closed_form forcing assumes phi = 1 (unit mass, no first harmonic); kernel {} breaks the \
             w and u equations, use residual mode",
            table.spec()
        )));
    }
    Ok(manufactured_forcing_unchecked(mode, table))
}

fn manufactured_forcing_unchecked<S: Scalar>(
    mode: ForcingMode,
    table: Arc<KernelTable<S>>,
) -> Forcing<S> {
    let ms = ManufacturedSolution;
    let f1: PointFn<S> = Arc::new(move |t, x| {
        ms.rho_t(t, x) + ms.u_x(t, x) * ms.rho(t, x) + ms.u(t, x) * ms.rho_x(t, x)
    });
    match mode {
        ForcingMode::ClosedForm => {
            let two_pi = S::two() * S::pi();
            let f2: PointFn<S> = Arc::new(move |t: S, x: S| t.cos() + t.sin() * (two_pi * x).cos());
            let f3: PointFn<S> = Arc::new(move |t: S, x: S| {
                let (st, s2) = (t.sin(), (two_pi * x).sin());
                let four_pi = S::two() * two_pi;
                t.cos()
                    + st * (two_pi * x).cos()
                    + (four_pi * x).sin() / four_pi
                    + (st + S::one() / S::pi() + s2 / two_pi) * (s2 / two_pi + st * s2 / two_pi)
            });
            Forcing { f1, f2, f3 }
        }
        ForcingMode::Residual => {
            let conv = {
                let table = table.clone();
                move |t: S, x: S| -> (S, S) {
                    let ys = table.mesh().quad_points();
                    let rho: Vec<S> = ys.iter().map(|&y| ms.rho(t, y)).collect();
                    let flux: Vec<S> = ys.iter().zip(&rho).map(|(&y, &r)| ms.u(t, y) * r).collect();
                    (
                        table.convolve_at(&rho, &[x])[0],
                        table.convolve_at(&flux, &[x])[0],
                    )
                }
            };
            let conv2 = conv.clone();
            let f2: PointFn<S> = Arc::new(move |t, x| {
                let (rho_phi, flux_phi) = conv(t, x);
                ms.w_t(t, x) + flux_phi / rho_phi * ms.w_x(t, x)
            });
            let f3: PointFn<S> = Arc::new(move |t, x| {
                let (rho_phi, flux_phi) = conv2(t, x);
                let u = ms.u(t, x);
                ms.u_t(t, x) + u * ms.u_x(t, x) - ms.w(t, x) * (flux_phi - u * rho_phi)
            });
            Forcing { f1, f2, f3 }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub levels: [u32; 2],
    pub final_time: f64,
    pub cfl_ratio: f64,
    pub kernel: KernelSpec,
    pub forcing: ForcingMode,
    pub quad_order: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            levels: [2, 6],
            final_time: 0.5,
            cfl_ratio: DEFAULT_CFL_RATIO,
            kernel: KernelSpec::Constant,
            forcing: ForcingMode::ClosedForm,
            quad_order: DEFAULT_QUAD_ORDER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub level: u32,
    pub h: f64,
    pub k: f64,
    pub e0: f64,
    pub e1: f64,
    /// Set when the level's run stopped early; errors are then NaN.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Least-squares slopes of `log E` against `log h` over successful rows.
    pub slope_e0: f64,
    pub slope_e1: f64,
}

/// Forced s-model at `h = 2^-i`, `k = cfl_ratio * h` for each level `i`.
pub fn convergence_sweep<S: Scalar>(cfg: &SweepConfig) -> Result<SweepResult, ScenarioError> {
    if cfg.forcing == ForcingMode::ClosedForm && !cfg.kernel.is_constant() {
        return Err(ScenarioError::Config(
            "closed_form forcing requires the constant kernel".into(),
        ));
    }
    let rows: Vec<SweepRow> = (cfg.levels[0]..=cfg.levels[1])
        .into_par_iter()
        .map(|level| sweep_level::<S>(cfg, level))
        .collect::<Result<_, _>>()?;
    let ok: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.failure.is_none() && r.e0 > 0.0 && r.e1 > 0.0)
        .collect();
    let slope = |f: fn(&SweepRow) -> f64| {
        if ok.len() < 2 {
            f64::NAN
        } else {
            least_squares_slope(ok.iter().map(|r| (r.h.ln(), f(r).ln())))
        }
    };
    Ok(SweepResult {
        slope_e0: slope(|r| r.e0),
        slope_e1: slope(|r| r.e1),
        rows,
    })
}

fn sweep_level<S: Scalar>(cfg: &SweepConfig, level: u32) -> Result<SweepRow, ScenarioError> {
    let m = 1usize << level;
    let h = 1.0 / m as f64;
    let k = cfg.cfl_ratio * h;
    let mesh = Arc::new(PeriodicMesh::new(m, cfg.quad_order)?);
    let table = Arc::new(KernelTable::new(mesh.clone(), cfg.kernel.clone()));
    let mut step = StepConfig::new(Variant::SModel, S::lit(k), S::lit(cfg.final_time))
        .with_forcing(manufactured_forcing_unchecked(cfg.forcing, table.clone()));
    step.cfl_ratio_max = S::lit(cfg.cfl_ratio);
    let steps = step.num_steps().ok_or_else(|| {
        ScenarioError::Config(format!(
            "level {level}: T = {} is not a multiple of k = {k}",
            cfg.final_time
        ))
    })?;
    let stepper = Stepper::new(table, step)?;
    let initial = ManufacturedSolution.state(mesh, S::zero())?;
    let out = stepper.run(initial, steps)?;
    Ok(match (&out.failure, out.snapshots.last()) {
        (None, Some(last)) => {
            let (e0, e1) = ManufacturedSolution.errors(last);
            SweepRow {
                level,
                h,
                k,
                e0,
                e1,
                failure: None,
            }
        }
        (failure, _) => SweepRow {
            level,
            h,
            k,
            e0: f64::NAN,
            e1: f64::NAN,
            failure: Some(
                failure
                    .as_ref()
                    .map_or("no output".into(), |f| f.error.to_string()),
            ),
        },
    })
}

/// One variant's trajectory in a comparison.
#[derive(Clone, Debug)]
pub struct ModelRun<S> {
    pub variant: Variant,
    pub output: RunOutput<S>,
}

/// Differences between two variants at one sampled time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairDiff {
    pub t: f64,
    pub a: Variant,
    pub b: Variant,
    pub u_sup: f64,
    pub u_l2: f64,
    /// `u_sup` over the larger of the two velocity sup-norms.
    pub u_rel_sup: f64,
    pub rho_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmallFlockMetrics {
    pub t: f64,
    pub variant: Variant,
    /// Mean of `|u|` over the small-flock window.
    pub mean_abs_u: f64,
    /// Shift of the density centroid over the small-flock region since `t = 0`.
    pub centroid_shift: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison<S> {
    pub runs: Vec<ModelRun<S>>,
    pub diffs: Vec<PairDiff>,
    pub small_flock: Vec<SmallFlockMetrics>,
}

impl<S> Comparison<S> {
    pub fn run(&self, variant: Variant) -> Option<&ModelRun<S>> {
        self.runs.iter().find(|r| r.variant == variant)
    }
}

/// Run every variant of the scenario on a shared kernel table and compare.
///
/// A variant whose setup fails aborts the comparison; a variant that stops
/// early keeps its partial trajectory and is compared up to that point.
pub fn compare_models<S: Scalar>(
    scenario: &ResolvedScenario,
    table: &Arc<KernelTable<S>>,
) -> Result<Comparison<S>, ScenarioError> {
    let runs: Vec<ModelRun<S>> = scenario
        .variants
        .par_iter()
        .map(|&variant| {
            let (stepper, initial) = scenario.prepare(variant, table)?;
            let output = stepper.run(initial, scenario.sample_every)?;
            Ok(ModelRun { variant, output })
        })
        .collect::<Result<_, ScenarioError>>()?;

    let mut diffs = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            for (sa, sb) in a.output.snapshots.iter().zip(&b.output.snapshots) {
                diffs.push(pair_diff(a.variant, b.variant, sa, sb));
            }
        }
    }
    let mut small_flock = Vec::new();
    for run in &runs {
        let c0 = run
            .output
            .snapshots
            .first()
            .map(|s| small_flock_centroid(&s.rho));
        for s in &run.output.snapshots {
            small_flock.push(SmallFlockMetrics {
                t: s.t.as_f64(),
                variant: run.variant,
                mean_abs_u: small_flock_mean_speed(&s.u),
                centroid_shift: small_flock_centroid(&s.rho) - c0.unwrap_or(0.0),
            });
        }
    }
    Ok(Comparison {
        runs,
        diffs,
        small_flock,
    })
}

fn sup_norm<S: Scalar>(f: &FeFunction<S>) -> f64 {
    let (lo, hi) = f.range();
    lo.abs().max(hi.abs()).as_f64()
}

fn l2_norm<S: Scalar>(f: &FeFunction<S>) -> f64 {
    let sq: Vec<S> = f.at_quad().iter().map(|v| *v * *v).collect();
    f.mesh().integrate_samples(&sq).as_f64().max(0.0).sqrt()
}

fn difference<S: Scalar>(a: &FeFunction<S>, b: &FeFunction<S>) -> FeFunction<S> {
    let d = a
        .coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(x, y)| *x - *y)
        .collect();
    FeFunction::new(a.mesh().clone(), a.space(), d).expect("operands share a space")
}

/// Difference metrics between two states on the same mesh.
pub fn pair_diff<S: Scalar>(
    a: Variant,
    b: Variant,
    sa: &SimState<S>,
    sb: &SimState<S>,
) -> PairDiff {
    let du = difference(&sa.u, &sb.u);
    let u_sup = sup_norm(&du);
    let scale = sup_norm(&sa.u).max(sup_norm(&sb.u));
    PairDiff {
        t: sa.t.as_f64(),
        a,
        b,
        u_sup,
        u_l2: l2_norm(&du),
        u_rel_sup: if scale > 0.0 { u_sup / scale } else { 0.0 },
        rho_l2: l2_norm(&difference(&sa.rho, &sb.rho)),
    }
}

fn midpoints(window: (f64, f64)) -> impl Iterator<Item = f64> {
    let dx = (window.1 - window.0) / WINDOW_SAMPLES as f64;
    (0..WINDOW_SAMPLES).map(move |i| window.0 + (i as f64 + 0.5) * dx)
}

/// Mean of `|u|` over [`SMALL_FLOCK_WINDOW`] by the midpoint rule.
pub fn small_flock_mean_speed<S: Scalar>(u: &FeFunction<S>) -> f64 {
    midpoints(SMALL_FLOCK_WINDOW)
        .map(|x| u.value(S::lit(x)).as_f64().abs())
        .sum::<f64>()
        / WINDOW_SAMPLES as f64
}

/// Density centroid over [`SMALL_FLOCK_REGION`] by the midpoint rule.
pub fn small_flock_centroid<S: Scalar>(rho: &FeFunction<S>) -> f64 {
    let (m, mx) = midpoints(SMALL_FLOCK_REGION).fold((0.0, 0.0), |(m, mx), x| {
        let r = rho.value(S::lit(x)).as_f64();
        (m + r, mx + r * x)
    });
    if m > 0.0 {
        mx / m
    } else {
        f64::NAN
    }
}
