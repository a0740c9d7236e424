//! Periodic 1D finite-element solver and diagnostics for pressureless Euler
//! alignment models: Cucker-Smale, Motsch-Tadmor and the adaptive-strength
//! s-model written in weight form.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are what the CLI and the experiments use.

// `!(a < b)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod convolution;
pub mod diagnostics;
pub mod fem;
pub mod linalg;
pub mod scalar;
pub mod scenarios;
pub mod stepper;

pub use scalar::Scalar;

pub type Mesh64 = fem::PeriodicMesh<f64>;
pub type Mesh32 = fem::PeriodicMesh<f32>;
pub type FeFunction64 = fem::FeFunction<f64>;
pub type FeFunction32 = fem::FeFunction<f32>;
pub type KernelTable64 = convolution::KernelTable<f64>;
pub type KernelTable32 = convolution::KernelTable<f32>;
pub type SimState64 = stepper::SimState<f64>;
pub type SimState32 = stepper::SimState<f32>;
pub type Stepper64 = stepper::Stepper<f64>;
pub type Stepper32 = stepper::Stepper<f32>;
pub type StepConfig64 = stepper::StepConfig<f64>;
