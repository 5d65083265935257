//! Surface augmented Markov chain Monte Carlo for distributions concentrated
//! near a constraint surface `S = {x : q(x) = 0}`.
//!
//! The chain samples a mixture of the soft target `∝ exp(-|q(x)|²/2ε²)` in
//! the ambient space and a density on `S` itself. Moves within `S` and
//! between `S` and the ambient space are built from Newton projections, so
//! the acceptance rate of the cross moves stays bounded away from zero as
//! `ε → 0`. The off-surface samples are draws from the soft target.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases fix the scalar to `f64`.

// `!(a > b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod geometry;
pub mod models;
pub mod moves;
pub mod projection;
pub mod sampler;
pub mod scalar;

pub use geometry::{tangent_frame, ConstraintModel, GeometryError, TangentFrame};
pub use models::{EllipsoidSphereModel, LinearModel, ModelError, TwoSpheresModel};
pub use moves::{ChainState, ConfigError, Infeasibility, Label, MoveKind, Proposal, SamplerConfig};
pub use projection::{newton_project, NewtonSettings, ProjectionResult, ProjectionStatus};
pub use sampler::{
    extract_soft_samples, run, run_chains, tune_soft_scale, ChainDiagnostics, RunOptions, SampleLog, Sampler,
    SamplerError, Start, StepRecord,
};
pub use scalar::Real;

pub type Frame64 = TangentFrame<f64>;
pub type Config64 = SamplerConfig<f64>;
pub type ChainState64 = ChainState<f64>;
pub type SampleLog64 = SampleLog<f64>;
pub type Linear64 = LinearModel<f64>;
pub type TwoSpheres64 = TwoSpheresModel<f64>;
pub type EllipsoidSphere64 = EllipsoidSphereModel<f64>;
