//! The four proposal kinds of the surface augmented chain and their
//! Metropolis-Hastings acceptance.
//!
//! States carry a label: [`Label::Ambient`] for points off the surface (the
//! soft target, Lebesgue reference measure) and [`Label::Surface`] for points
//! on it (surface measure). A move is named by its (from, to) labels:
//!
//! | from \ to | Ambient | Surface |
//! |-----------|---------|---------|
//! | Ambient   | Soft    | On      |
//! | Surface   | Off     | Hard    |
//!
//! All densities are handled as natural logarithms.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{log_abs_jacobian, tangent_frame, ConstraintModel, GeometryError, TangentFrame};
use crate::projection::{newton_project, reverse_check_from_frame, NewtonSettings};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Off the surface, label 1.
    Ambient,
    /// On the surface, label 2.
    Surface,
}

impl Label {
    pub fn index(self) -> u8 {
        match self {
            Label::Ambient => 1,
            Label::Surface => 2,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(Label::Ambient),
            2 => Some(Label::Surface),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveKind {
    Hard,
    Off,
    On,
    Soft,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Hard, MoveKind::Off, MoveKind::On, MoveKind::Soft];

    pub fn between(from: Label, to: Label) -> Self {
        match (from, to) {
            (Label::Surface, Label::Surface) => MoveKind::Hard,
            (Label::Surface, Label::Ambient) => MoveKind::Off,
            (Label::Ambient, Label::Surface) => MoveKind::On,
            (Label::Ambient, Label::Ambient) => MoveKind::Soft,
        }
    }

    pub fn source(self) -> Label {
        match self {
            MoveKind::Hard | MoveKind::Off => Label::Surface,
            MoveKind::On | MoveKind::Soft => Label::Ambient,
        }
    }

    pub fn target(self) -> Label {
        match self {
            MoveKind::Hard | MoveKind::On => Label::Surface,
            MoveKind::Off | MoveKind::Soft => Label::Ambient,
        }
    }

    pub fn reverse(self) -> Self {
        MoveKind::between(self.target(), self.source())
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Hard => "hard",
            MoveKind::Off => "off",
            MoveKind::On => "on",
            MoveKind::Soft => "soft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must lie in [0, 1], got {value}")]
    Probability { field: &'static str, value: f64 },
    #[error("lambda{row}1 + lambda{row}2 must equal 1, got {sum}")]
    LambdaRow { row: u8, sum: f64 },
    #[error("newton settings need tol_q > 0, max_iter >= 1 and reverse_tol > 0")]
    Newton,
}

/// Softness, step scales, label probabilities and density constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct SamplerConfig<T: Real> {
    pub epsilon: T,
    /// Normal step scale of the Off move.
    pub sigma_prp: T,
    /// Tangent step scale of the Off move.
    pub sigma_tan: T,
    pub sigma_on: T,
    pub sigma_hrd: T,
    pub sigma_sft: T,
    pub lambda11: T,
    pub lambda12: T,
    pub lambda21: T,
    pub lambda22: T,
    pub k1: T,
    pub k2: T,
    pub newton: NewtonSettings<T>,
    pub seed: u64,
}

impl<T: Real> SamplerConfig<T> {
    /// Defaults for a surface of codimension `num_constraints`:
    /// `σ_prp = σ_tan = σ_on = ε`, `σ_hrd = 1`, `σ_sft = 0.7 ε`,
    /// `λ = (0.2, 0.8; 0.2, 0.8)`, `k1 = 1` and `k2` from [`Self::balanced_k2`].
    pub fn new(epsilon: T, num_constraints: usize) -> Self {
        let mut config = Self {
            epsilon,
            sigma_prp: epsilon,
            sigma_tan: epsilon,
            sigma_on: epsilon,
            sigma_hrd: T::one(),
            sigma_sft: T::lit(0.7) * epsilon,
            lambda11: T::lit(0.2),
            lambda12: T::lit(0.8),
            lambda21: T::lit(0.2),
            lambda22: T::lit(0.8),
            k1: T::one(),
            k2: T::one(),
            newton: NewtonSettings::default(),
            seed: 0,
        };
        config.rebalance(num_constraints);
        config
    }

    /// Sets the label probabilities (`λ11`, `λ21`) and rebalances `k2`.
    pub fn with_lambdas(mut self, lambda11: T, lambda21: T, num_constraints: usize) -> Self {
        self.lambda11 = lambda11;
        self.lambda12 = T::one() - lambda11;
        self.lambda21 = lambda21;
        self.lambda22 = T::one() - lambda21;
        self.rebalance(num_constraints);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `k2 = k1 λ12 (2π)^{m/2} ε^m / λ21`, the value that makes On/Off moves
    /// exact on flat surfaces. Falls back to `k1` when either jump
    /// probability is zero, since the two labels then never exchange mass.
    pub fn balanced_k2(&self, num_constraints: usize) -> T {
        if self.lambda12 > T::zero() && self.lambda21 > T::zero() {
            let m = T::count(num_constraints);
            let log_k2 = self.k1.ln() + self.lambda12.ln() - self.lambda21.ln()
                + m * (T::lit(0.5) * T::two_pi().ln() + self.epsilon.ln());
            log_k2.exp()
        } else {
            self.k1
        }
    }

    pub fn rebalance(&mut self, num_constraints: usize) {
        self.k2 = self.balanced_k2(num_constraints);
    }

    pub fn lambda(&self, from: Label, to: Label) -> T {
        match (from, to) {
            (Label::Ambient, Label::Ambient) => self.lambda11,
            (Label::Ambient, Label::Surface) => self.lambda12,
            (Label::Surface, Label::Ambient) => self.lambda21,
            (Label::Surface, Label::Surface) => self.lambda22,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("epsilon", self.epsilon),
            ("sigma_prp", self.sigma_prp),
            ("sigma_tan", self.sigma_tan),
            ("sigma_on", self.sigma_on),
            ("sigma_hrd", self.sigma_hrd),
            ("sigma_sft", self.sigma_sft),
            ("k1", self.k1),
            ("k2", self.k2),
        ];
        for (field, value) in positive {
            if !(value > T::zero() && value.is_finite()) {
                return Err(ConfigError::NonPositive {
                    field,
                    value: value.as_f64(),
                });
            }
        }
        let probs = [
            ("lambda11", self.lambda11),
            ("lambda12", self.lambda12),
            ("lambda21", self.lambda21),
            ("lambda22", self.lambda22),
        ];
        for (field, value) in probs {
            if !(value >= T::zero() && value <= T::one()) {
                return Err(ConfigError::Probability {
                    field,
                    value: value.as_f64(),
                });
            }
        }
        let tol = 1e-9;
        let row1 = (self.lambda11 + self.lambda12).as_f64();
        if (row1 - 1.0).abs() > tol {
            return Err(ConfigError::LambdaRow { row: 1, sum: row1 });
        }
        let row2 = (self.lambda21 + self.lambda22).as_f64();
        if (row2 - 1.0).abs() > tol {
            return Err(ConfigError::LambdaRow { row: 2, sum: row2 });
        }
        if !self.newton.is_valid() {
            return Err(ConfigError::Newton);
        }
        Ok(())
    }

    /// `ln f1(x) = ln k1 - U(x) / 2ε²`.
    pub fn log_f1<M: ConstraintModel<T> + ?Sized>(&self, model: &M, x: &DVector<T>) -> T {
        self.k1.ln() - model.potential(x) / (T::lit(2.0) * self.epsilon * self.epsilon)
    }

    /// `ln f2(x) = ln k2 - ½ ln det(∇qᵀ∇q)`.
    pub fn log_f2(&self, frame: &TangentFrame<T>) -> T {
        self.k2.ln() + frame.log_gradient_factor()
    }
}

/// Off-surface density `k1 exp(-|q(x)|² / 2ε²)`.
pub fn density_f1<T: Real, M: ConstraintModel<T> + ?Sized>(config: &SamplerConfig<T>, model: &M, x: &DVector<T>) -> T {
    config.log_f1(model, x).exp()
}

/// On-surface density `k2 det(∇q(x)ᵀ∇q(x))^{-1/2}`.
pub fn density_f2<T: Real, M: ConstraintModel<T> + ?Sized>(
    config: &SamplerConfig<T>,
    model: &M,
    x: &DVector<T>,
) -> Result<T, GeometryError> {
    Ok(config.log_f2(&tangent_frame(model, x)?).exp())
}

/// Log density of an isotropic Gaussian in `dim` dimensions evaluated at a
/// point with squared norm `sq_norm`.
pub fn log_isotropic_gaussian<T: Real>(sq_norm: T, sigma: T, dim: usize) -> T {
    let k = T::count(dim);
    -k * (T::lit(0.5) * T::two_pi().ln() + sigma.ln()) - sq_norm / (T::lit(2.0) * sigma * sigma)
}

/// Three equivalent forms of the density of the Off move's normal step
/// `v_n = N r_n`, `r_n ~ N(0, σ² I_m)`.
pub mod off_density {
    use super::*;

    /// Degenerate Gaussian form with covariance `C = σ² N Nᵀ`, using its
    /// pseudo-inverse and pseudo-determinant. Both come from the SVD of `N`
    /// (`C⁺ = U diag(σ τ_i)⁻² Uᵀ`, `det* C = ∏ σ² τ_i²`) rather than of `C`,
    /// which would square the condition number.
    pub fn log_pseudo_inverse_form<T: Real>(frame: &TangentFrame<T>, sigma: T, v_n: &DVector<T>) -> T {
        let m = frame.num_constraints();
        let svd = frame.normal.clone().svd(true, false);
        let u = svd.u.as_ref().expect("u requested");
        let mut log_pdet = T::zero();
        let mut quad = T::zero();
        for (i, tau) in svd.singular_values.iter().enumerate() {
            let var = sigma * sigma * *tau * *tau;
            let c = u.column(i).dot(v_n);
            log_pdet += var.ln();
            quad += c * c / var;
        }
        -T::lit(0.5) * (T::count(m) * T::two_pi().ln() + log_pdet) - T::lit(0.5) * quad
    }

    /// Gram-determinant form: `det(GᵀG)^{1/2} / ((2π)^{m/2} σ^m) exp(-|Gᵀ v_n|² / 2σ²)`.
    pub fn log_gram_form<T: Real>(frame: &TangentFrame<T>, sigma: T, v_n: &DVector<T>) -> T {
        let m = frame.num_constraints();
        let gram = frame.gradient.tr_mul(&frame.gradient);
        let proj = frame.gradient.tr_mul(v_n);
        T::lit(0.5) * gram.determinant().ln() + log_isotropic_gaussian(proj.norm_squared(), sigma, m)
    }

    /// Coordinate form: `∏σ_i / ((2π)^{m/2} σ^m) exp(-|r_n|² / 2σ²)`.
    pub fn log_coordinate_form<T: Real>(frame: &TangentFrame<T>, sigma: T, r_n: &DVector<T>) -> T {
        frame.log_singular_product() + log_isotropic_gaussian(r_n.norm_squared(), sigma, frame.num_constraints())
    }
}

/// Why a proposal could not be offered to the Metropolis test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infeasibility {
    /// A forward Newton projection failed.
    NewtonFailure,
    /// The reverse move could not regenerate the current point.
    ReverseCheckFailure,
    /// An off-surface proposal landed within `tol_q` of the surface.
    LandedOnSurface,
    /// The gradient became rank deficient at a visited point.
    Degenerate,
}

/// A chain state with the quantities the moves reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<T: Real> {
    pub x: DVector<T>,
    pub label: Label,
    frame: Option<TangentFrame<T>>,
    log_target: T,
}

impl<T: Real> ChainState<T> {
    /// A surface state; `x` must satisfy `|q(x)| ≤ tol_q`.
    pub fn on_surface<M: ConstraintModel<T> + ?Sized>(
        model: &M,
        config: &SamplerConfig<T>,
        x: DVector<T>,
    ) -> Result<Self, GeometryError> {
        let frame = tangent_frame(model, &x)?;
        Ok(Self::from_frame(config, frame))
    }

    fn from_frame(config: &SamplerConfig<T>, frame: TangentFrame<T>) -> Self {
        Self {
            x: frame.base_point.clone(),
            label: Label::Surface,
            log_target: config.log_f2(&frame),
            frame: Some(frame),
        }
    }

    /// An off-surface state.
    pub fn off_surface<M: ConstraintModel<T> + ?Sized>(model: &M, config: &SamplerConfig<T>, x: DVector<T>) -> Self {
        Self {
            log_target: config.log_f1(model, &x),
            x,
            label: Label::Ambient,
            frame: None,
        }
    }

    /// Tangent frame at `x`, present for surface states.
    pub fn frame(&self) -> Option<&TangentFrame<T>> {
        self.frame.as_ref()
    }

    /// `ln f_label(x)`.
    pub fn log_target(&self) -> T {
        self.log_target
    }
}

/// A proposed state `(y, j)` with the densities needed for the Metropolis test.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<T: Real> {
    pub kind: MoveKind,
    pub y: DVector<T>,
    pub status: Result<(), Infeasibility>,
    /// `ln h_ij(x, y)`.
    pub log_forward: T,
    /// `ln h_ji(y, x)`.
    pub log_reverse: T,
    /// `ln f_j(y)`.
    pub log_target_y: T,
    frame_y: Option<TangentFrame<T>>,
}

impl<T: Real> Proposal<T> {
    fn infeasible(kind: MoveKind, y: DVector<T>, why: Infeasibility) -> Self {
        Self {
            kind,
            y,
            status: Err(why),
            log_forward: T::zero(),
            log_reverse: T::zero(),
            log_target_y: T::zero(),
            frame_y: None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status.is_ok()
    }

    pub fn forward_density(&self) -> T {
        self.log_forward.exp()
    }

    pub fn reverse_density(&self) -> T {
        self.log_reverse.exp()
    }

    /// The state the chain moves to if this proposal is accepted.
    pub fn into_state(self, config: &SamplerConfig<T>) -> ChainState<T> {
        match self.kind.target() {
            Label::Surface => ChainState::from_frame(config, self.frame_y.expect("surface proposals carry a frame")),
            Label::Ambient => ChainState {
                x: self.y,
                label: Label::Ambient,
                frame: None,
                log_target: self.log_target_y,
            },
        }
    }
}

fn draw_normals<T: Real, R: Rng + ?Sized>(rng: &mut R, dim: usize, sigma: T) -> DVector<T> {
    DVector::from_fn(dim, |_, _| T::standard_normal(rng) * sigma)
}

fn lands_on_surface<T: Real, M: ConstraintModel<T> + ?Sized>(
    model: &M,
    y: &DVector<T>,
    settings: &NewtonSettings<T>,
) -> bool {
    model.evaluate(y).norm() <= settings.tol_q
}

/// Hard move: tangent Gaussian step of scale `σ_hrd` projected back onto the
/// surface along `∇q(x)`, followed by the reverse check from `y`.
pub fn propose_hard<T, M, R>(
    model: &M,
    frame_x: &TangentFrame<T>,
    config: &SamplerConfig<T>,
    rng: &mut R,
) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let coords = draw_normals(rng, frame_x.surface_dim(), config.sigma_hrd);
    hard_from_coords(model, frame_x, config, &coords)
}

fn hard_from_coords<T, M>(
    model: &M,
    frame_x: &TangentFrame<T>,
    config: &SamplerConfig<T>,
    coords: &DVector<T>,
) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let kind = MoveKind::Hard;
    let x = &frame_x.base_point;
    let start = x + &frame_x.tangent * coords;
    let projected = newton_project(model, &start, &frame_x.gradient, &config.newton);
    if !projected.converged() {
        return Proposal::infeasible(kind, projected.point, Infeasibility::NewtonFailure);
    }
    let y = projected.point;
    let frame_y = match tangent_frame(model, &y) {
        Ok(f) => f,
        Err(_) => return Proposal::infeasible(kind, y, Infeasibility::Degenerate),
    };
    if !reverse_check_from_frame(model, &frame_y, x, &config.newton) {
        return Proposal::infeasible(kind, y, Infeasibility::ReverseCheckFailure);
    }
    let d = frame_x.surface_dim();
    let log_jac = log_abs_jacobian(frame_x, &frame_y);
    let reverse_coords = frame_y.tangent_coords(&(x - &y));
    Proposal {
        kind,
        log_forward: log_isotropic_gaussian(coords.norm_squared(), config.sigma_hrd, d) + log_jac,
        log_reverse: log_isotropic_gaussian(reverse_coords.norm_squared(), config.sigma_hrd, d) + log_jac,
        log_target_y: config.log_f2(&frame_y),
        y,
        status: Ok(()),
        frame_y: Some(frame_y),
    }
}

/// Off move: `y = x + N r_n + T r_t` with `r_n ~ N(0, σ_prp²)` and
/// `r_t ~ N(0, σ_tan²)`, accepted for the Metropolis test only if an On move
/// from `y` could regenerate `x`.
pub fn propose_off<T, M, R>(model: &M, frame_x: &TangentFrame<T>, config: &SamplerConfig<T>, rng: &mut R) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let r_n = draw_normals(rng, frame_x.num_constraints(), config.sigma_prp);
    let r_t = draw_normals(rng, frame_x.surface_dim(), config.sigma_tan);
    off_from_coords(model, frame_x, config, &r_n, &r_t)
}

fn off_from_coords<T, M>(
    model: &M,
    frame_x: &TangentFrame<T>,
    config: &SamplerConfig<T>,
    r_n: &DVector<T>,
    r_t: &DVector<T>,
) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let kind = MoveKind::Off;
    let x = &frame_x.base_point;
    let y = x + &frame_x.normal * r_n + &frame_x.tangent * r_t;
    if lands_on_surface(model, &y, &config.newton) {
        return Proposal::infeasible(kind, y, Infeasibility::LandedOnSurface);
    }
    let log_reverse = match log_density_on(model, config, &y, frame_x) {
        Some(v) => v,
        None => return Proposal::infeasible(kind, y, Infeasibility::ReverseCheckFailure),
    };
    Proposal {
        kind,
        log_forward: log_off_from_coords(frame_x, config, r_n, r_t),
        log_reverse,
        log_target_y: config.log_f1(model, &y),
        y,
        status: Ok(()),
        frame_y: None,
    }
}

fn log_off_from_coords<T: Real>(
    frame: &TangentFrame<T>,
    config: &SamplerConfig<T>,
    r_n: &DVector<T>,
    r_t: &DVector<T>,
) -> T {
    off_density::log_coordinate_form(frame, config.sigma_prp, r_n)
        + log_isotropic_gaussian(r_t.norm_squared(), config.sigma_tan, frame.surface_dim())
}

/// On move: project `x` onto the surface along `∇q(x)`, then take a surface
/// step of scale `σ_on` from the projection.
pub fn propose_on<T, M, R>(model: &M, x: &DVector<T>, config: &SamplerConfig<T>, rng: &mut R) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let kind = MoveKind::On;
    let foot = match project_foot(model, x, &config.newton) {
        Ok(frame) => frame,
        Err(why) => return Proposal::infeasible(kind, x.clone(), why),
    };
    let coords = draw_normals(rng, foot.surface_dim(), config.sigma_on);
    on_from_coords(model, x, &foot, config, &coords)
}

/// Projects an off-surface point onto the surface along its own gradient.
fn project_foot<T, M>(model: &M, x: &DVector<T>, settings: &NewtonSettings<T>) -> Result<TangentFrame<T>, Infeasibility>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let projected = newton_project(model, x, &model.gradient(x), settings);
    if !projected.converged() {
        return Err(Infeasibility::NewtonFailure);
    }
    tangent_frame(model, &projected.point).map_err(|_| Infeasibility::Degenerate)
}

fn on_from_coords<T, M>(
    model: &M,
    x: &DVector<T>,
    foot: &TangentFrame<T>,
    config: &SamplerConfig<T>,
    coords: &DVector<T>,
) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let kind = MoveKind::On;
    let start = &foot.base_point + &foot.tangent * coords;
    let projected = newton_project(model, &start, &foot.gradient, &config.newton);
    if !projected.converged() {
        return Proposal::infeasible(kind, projected.point, Infeasibility::NewtonFailure);
    }
    let frame_y = match tangent_frame(model, &projected.point) {
        Ok(f) => f,
        Err(_) => return Proposal::infeasible(kind, projected.point, Infeasibility::Degenerate),
    };
    let log_forward = log_isotropic_gaussian(coords.norm_squared(), config.sigma_on, foot.surface_dim())
        + log_abs_jacobian(foot, &frame_y);
    Proposal {
        kind,
        log_forward,
        log_reverse: log_density_off(config, &frame_y, x),
        log_target_y: config.log_f2(&frame_y),
        y: projected.point,
        status: Ok(()),
        frame_y: Some(frame_y),
    }
}

/// Soft move: isotropic Gaussian step of scale `σ_sft` in the ambient space.
pub fn propose_soft<T, M, R>(model: &M, x: &DVector<T>, config: &SamplerConfig<T>, rng: &mut R) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let v = draw_normals(rng, model.ambient_dim(), config.sigma_sft);
    soft_from_step(model, x, config, &v)
}

fn soft_from_step<T, M>(model: &M, x: &DVector<T>, config: &SamplerConfig<T>, v: &DVector<T>) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let kind = MoveKind::Soft;
    let y = x + v;
    if lands_on_surface(model, &y, &config.newton) {
        return Proposal::infeasible(kind, y, Infeasibility::LandedOnSurface);
    }
    let log_h = log_isotropic_gaussian(v.norm_squared(), config.sigma_sft, model.ambient_dim());
    Proposal {
        kind,
        log_forward: log_h,
        log_reverse: log_h,
        log_target_y: config.log_f1(model, &y),
        y,
        status: Ok(()),
        frame_y: None,
    }
}

/// Draws a proposal of the given kind from `state`.
///
/// # Panics
/// If `kind` does not start from `state.label`.
pub fn propose<T, M, R>(
    model: &M,
    config: &SamplerConfig<T>,
    state: &ChainState<T>,
    kind: MoveKind,
    rng: &mut R,
) -> Proposal<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    assert_eq!(kind.source(), state.label, "move kind does not match the state label");
    match kind {
        MoveKind::Hard => propose_hard(model, state.frame().expect("surface state"), config, rng),
        MoveKind::Off => propose_off(model, state.frame().expect("surface state"), config, rng),
        MoveKind::On => propose_on(model, &state.x, config, rng),
        MoveKind::Soft => propose_soft(model, &state.x, config, rng),
    }
}

/// `ln h_22(x, y)` for surface points, or `None` if a Hard move from `x`
/// cannot produce `y`.
pub fn log_density_hard<T, M>(
    model: &M,
    config: &SamplerConfig<T>,
    frame_x: &TangentFrame<T>,
    frame_y: &TangentFrame<T>,
) -> Option<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    if !reverse_check_from_frame(model, frame_x, &frame_y.base_point, &config.newton) {
        return None;
    }
    let coords = frame_x.tangent_coords(&(&frame_y.base_point - &frame_x.base_point));
    Some(
        log_isotropic_gaussian(coords.norm_squared(), config.sigma_hrd, frame_x.surface_dim())
            + log_abs_jacobian(frame_x, frame_y),
    )
}

/// `ln h_12(x, y)` for off-surface `x` and surface point `y`, or `None` if an
/// On move from `x` cannot produce `y`.
pub fn log_density_on<T, M>(
    model: &M,
    config: &SamplerConfig<T>,
    x: &DVector<T>,
    frame_y: &TangentFrame<T>,
) -> Option<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let foot = project_foot(model, x, &config.newton).ok()?;
    if !reverse_check_from_frame(model, &foot, &frame_y.base_point, &config.newton) {
        return None;
    }
    let coords = foot.tangent_coords(&(&frame_y.base_point - &foot.base_point));
    Some(
        log_isotropic_gaussian(coords.norm_squared(), config.sigma_on, foot.surface_dim())
            + log_abs_jacobian(&foot, frame_y),
    )
}

/// `ln h_21(x, y)` for surface point `x` and any `y`. The step `y - x` is
/// split at the frame of `x` into normal coordinates `r_n = ∇q(x)ᵀ(y - x)`
/// and tangent coordinates `r_t = T_xᵀ(y - x)`.
pub fn log_density_off<T: Real>(config: &SamplerConfig<T>, frame_x: &TangentFrame<T>, y: &DVector<T>) -> T {
    let step = y - &frame_x.base_point;
    let r_n = frame_x.normal_coords(&step);
    let r_t = frame_x.tangent_coords(&step);
    log_off_from_coords(frame_x, config, &r_n, &r_t)
}

/// `ln h_11(x, y)`.
pub fn log_density_soft<T: Real>(config: &SamplerConfig<T>, x: &DVector<T>, y: &DVector<T>) -> T {
    log_isotropic_gaussian((y - x).norm_squared(), config.sigma_sft, x.len())
}

/// `ln h_ij(from, to)` evaluated from the endpoints alone, with `i, j` given
/// by the state labels. `None` when the move cannot connect the two states.
pub fn log_proposal_density<T, M>(
    model: &M,
    config: &SamplerConfig<T>,
    from: &ChainState<T>,
    to: &ChainState<T>,
) -> Option<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    match MoveKind::between(from.label, to.label) {
        MoveKind::Hard => log_density_hard(model, config, from.frame()?, to.frame()?),
        MoveKind::Off => Some(log_density_off(config, from.frame()?, &to.x)),
        MoveKind::On => log_density_on(model, config, &from.x, to.frame()?),
        MoveKind::Soft => Some(log_density_soft(config, &from.x, &to.x)),
    }
}

/// Log of the Metropolis-Hastings ratio
/// `f_j(y) λ_ji h_ji(y,x) / (f_i(x) λ_ij h_ij(x,y))`, or `None` for an
/// infeasible proposal.
pub fn log_acceptance_ratio<T: Real>(
    config: &SamplerConfig<T>,
    state: &ChainState<T>,
    proposal: &Proposal<T>,
) -> Option<T> {
    if !proposal.is_feasible() {
        return None;
    }
    let i = state.label;
    let j = proposal.kind.target();
    let numerator = proposal.log_target_y + config.lambda(j, i).ln() + proposal.log_reverse;
    let denominator = state.log_target + config.lambda(i, j).ln() + proposal.log_forward;
    Some(numerator - denominator)
}

/// `min(1, ratio)`, zero for infeasible proposals.
pub fn acceptance_probability<T: Real>(config: &SamplerConfig<T>, state: &ChainState<T>, proposal: &Proposal<T>) -> T {
    match log_acceptance_ratio(config, state, proposal) {
        Some(log_ratio) if log_ratio >= T::zero() => T::one(),
        Some(log_ratio) if log_ratio.is_finite() => log_ratio.exp(),
        _ => T::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EllipsoidSphereModel, LinearModel, TwoSpheresModel};
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn balanced_k2_matches_closed_form() {
        let c = SamplerConfig::<f64>::new(0.1, 2);
        let expected = 0.8 * std::f64::consts::TAU * 0.01 / 0.2;
        assert!(rel(c.k2, expected) < 1e-14);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_validation_reports_fields() {
        let mut c = SamplerConfig::<f64>::new(0.1, 1);
        c.lambda12 = 0.7;
        assert_eq!(
            c.validate(),
            Err(ConfigError::LambdaRow {
                row: 1,
                sum: 0.8999999999999999
            })
        );
        let mut c = SamplerConfig::<f64>::new(0.1, 1);
        c.sigma_hrd = 0.0;
        assert!(matches!(
            c.validate(),
            Err(ConfigError::NonPositive { field: "sigma_hrd", .. })
        ));
    }

    #[test]
    fn f1_values() {
        let model = LinearModel::new(dmatrix![0.0; 0.0; 1.0]).unwrap();
        let c = SamplerConfig::<f64>::new(0.1, 1);
        assert_eq!(density_f1(&c, &model, &dvector![3.0, -1.0, 0.0]), 1.0);
        let x = dvector![0.0, 0.0, 0.1 * 2f64.sqrt()];
        assert!(rel(density_f1(&c, &model, &x), (-1.0f64).exp()) < 1e-14);
    }

    #[test]
    fn f1_two_spheres_direct_evaluation() {
        let model = TwoSpheresModel::<f64>::standard();
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let delta: f64 = 0.01;
        let x = dvector![1.0 + delta, 0.0, 0.0];
        // |x - c1|^2 - 2 and |x - c2|^2 - 2 written out.
        let q1 = (1.0 + delta).powi(2) + 1.0 - 2.0;
        let q2 = (1.0 + delta).powi(2) + 1.0 - 2.0;
        let expected = (-(q1 * q1 + q2 * q2) / (2.0 * 0.05 * 0.05)).exp();
        assert!(rel(density_f1(&c, &model, &x), expected) < 1e-12);
    }

    #[test]
    fn f2_constant_on_circle_but_not_on_ellipsoid_curve() {
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let spheres = TwoSpheresModel::<f64>::standard();
        let a = density_f2(&c, &spheres, &spheres.circle_point(0.0)).unwrap();
        let b = density_f2(&c, &spheres, &spheres.circle_point(2.1)).unwrap();
        assert!(rel(a, b) < 1e-12);

        let ell = EllipsoidSphereModel::<f64>::standard();
        let frame = tangent_frame(&ell, &ell.surface_point()).unwrap();
        let x0 = ell.surface_point();
        let step = &frame.tangent * dvector![0.5];
        let moved = newton_project(&ell, &(&x0 + step), &frame.gradient, &c.newton);
        assert!(moved.converged());
        let fa = density_f2(&c, &ell, &x0).unwrap();
        let fb = density_f2(&c, &ell, &moved.point).unwrap();
        assert!(rel(fa, fb) > 1e-3);
    }

    #[test]
    fn null_hard_step_is_accepted() {
        let model = EllipsoidSphereModel::<f64>::standard();
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let state = ChainState::on_surface(&model, &c, model.surface_point()).unwrap();
        let p = hard_from_coords(&model, state.frame().unwrap(), &c, &dvector![0.0]);
        assert!(p.is_feasible());
        assert!((&p.y - &state.x).amax() < 1e-12);
        assert_eq!(acceptance_probability(&c, &state, &p), 1.0);
    }

    #[test]
    fn soft_move_ratio_is_potential_difference() {
        let model = TwoSpheresModel::<f64>::standard();
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let x = dvector![1.01, 0.02, 0.0];
        let state = ChainState::off_surface(&model, &c, x.clone());
        let v = dvector![0.003, -0.01, 0.004];
        let p = soft_from_step(&model, &x, &c, &v);
        assert_eq!(p.log_forward, p.log_reverse);
        let y = &x + &v;
        let expected = (model.potential(&x) - model.potential(&y)) / (2.0 * 0.05 * 0.05);
        let got = log_acceptance_ratio(&c, &state, &p).unwrap();
        assert!((got - expected).abs() < 1e-12);
        let null = soft_from_step(&model, &x, &c, &dvector![0.0, 0.0, 0.0]);
        assert_eq!(acceptance_probability(&c, &state, &null), 1.0);
    }

    #[test]
    fn null_off_step_keeps_point_but_changes_label() {
        let model = EllipsoidSphereModel::<f64>::standard();
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let state = ChainState::on_surface(&model, &c, model.surface_point()).unwrap();
        let p = off_from_coords(&model, state.frame().unwrap(), &c, &dvector![0.0, 0.0], &dvector![0.0]);
        // y = x sits on the surface, which an off-surface proposal may not do.
        assert_eq!(p.status, Err(Infeasibility::LandedOnSurface));
    }

    #[test]
    fn flat_on_off_hard_are_exact() {
        let a = dmatrix![1.0, 0.2; -0.5, 1.0; 0.3, 0.4; 2.0, -1.0; 0.0, 0.7];
        let model = LinearModel::new(a).unwrap();
        let c = SamplerConfig::<f64>::new(0.03, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = dvector![0.0, 0.0, 0.0, 0.0, 0.0];
        let state = ChainState::on_surface(&model, &c, x).unwrap();
        for _ in 0..200 {
            for kind in [MoveKind::Hard, MoveKind::Off] {
                let p = propose(&model, &c, &state, kind, &mut rng);
                assert!(p.is_feasible());
                let lr = log_acceptance_ratio(&c, &state, &p).unwrap();
                assert!(lr.abs() < 1e-9, "{kind:?} {lr}");
            }
            let off = propose(&model, &c, &state, MoveKind::Off, &mut rng);
            let ambient = off.into_state(&c);
            let p = propose(&model, &c, &ambient, MoveKind::On, &mut rng);
            let lr = log_acceptance_ratio(&c, &ambient, &p).unwrap();
            assert!(lr.abs() < 1e-9, "on {lr}");
        }
    }

    #[test]
    fn hard_ratio_without_jacobians_is_identical() {
        let model = EllipsoidSphereModel::<f64>::standard();
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let state = ChainState::on_surface(&model, &c, model.surface_point()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..100 {
            let p = propose(&model, &c, &state, MoveKind::Hard, &mut rng);
            if !p.is_feasible() {
                continue;
            }
            let with = log_acceptance_ratio(&c, &state, &p).unwrap();
            let frame_y = p.frame_y.as_ref().unwrap();
            let jac = log_abs_jacobian(state.frame().unwrap(), frame_y);
            let mut stripped = p.clone();
            stripped.log_forward -= jac;
            stripped.log_reverse -= jac;
            let without = log_acceptance_ratio(&c, &state, &stripped).unwrap();
            assert!((with - without).abs() < 1e-12);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn infeasible_proposals_have_zero_acceptance() {
        let model = TwoSpheresModel::<f64>::standard();
        let c = SamplerConfig::<f64>::new(0.05, 2);
        let state = ChainState::on_surface(&model, &c, model.surface_point()).unwrap();
        // A tangent step longer than the radius cannot be projected back.
        let p = hard_from_coords(&model, state.frame().unwrap(), &c, &dvector![3.0]);
        assert!(!p.is_feasible());
        assert_eq!(acceptance_probability(&c, &state, &p), 0.0);
    }
}
