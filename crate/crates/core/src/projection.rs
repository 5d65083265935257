//! Newton projection onto the constraint surface and the reverse-feasibility
//! checks that keep projected moves reversible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{decompose, tangent_frame, ConstraintModel, TangentFrame};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct NewtonSettings<T: Real> {
    /// Convergence threshold on `|q|`.
    pub tol_q: T,
    pub max_iter: usize,
    /// Distance under which a reverse projection counts as hitting its target.
    pub reverse_tol: T,
}

impl<T: Real> Default for NewtonSettings<T> {
    fn default() -> Self {
        Self {
            tol_q: T::floor_tol(1e-10, 1e3),
            max_iter: 25,
            reverse_tol: T::floor_tol(1e-7, 1e4),
        }
    }
}

impl<T: Real> NewtonSettings<T> {
    pub fn is_valid(&self) -> bool {
        self.tol_q > T::zero() && self.max_iter >= 1 && self.reverse_tol > T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionStatus {
    Converged,
    MaxIterExceeded,
    SingularSystem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult<T: Real> {
    pub status: ProjectionStatus,
    /// Coefficients `a` along the columns of the direction matrix.
    pub coeffs: DVector<T>,
    /// `x0 + G a`.
    pub point: DVector<T>,
    /// Number of Newton updates applied.
    pub iterations: usize,
}

impl<T: Real> ProjectionResult<T> {
    pub fn converged(&self) -> bool {
        self.status == ProjectionStatus::Converged
    }
}

/// Solves `q(x0 + G a) = 0` for `a` with plain Newton iterations started at
/// `a = 0`.
///
/// Each update solves the `m × m` system `[∇q(x0 + G a)ᵀ G] δ = q(x0 + G a)`
/// by LU with partial pivoting. No damping or line search.
pub fn newton_project<T, M>(
    model: &M,
    x0: &DVector<T>,
    directions: &DMatrix<T>,
    settings: &NewtonSettings<T>,
) -> ProjectionResult<T>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let m = directions.ncols();
    let mut coeffs = DVector::<T>::zeros(m);
    let mut point = x0.clone();
    let mut iterations = 0;
    loop {
        let q = model.evaluate(&point);
        let residual = q.norm();
        if !residual.is_finite() {
            return ProjectionResult {
                status: ProjectionStatus::MaxIterExceeded,
                coeffs,
                point,
                iterations,
            };
        }
        if residual <= settings.tol_q {
            return ProjectionResult {
                status: ProjectionStatus::Converged,
                coeffs,
                point,
                iterations,
            };
        }
        if iterations == settings.max_iter {
            return ProjectionResult {
                status: ProjectionStatus::MaxIterExceeded,
                coeffs,
                point,
                iterations,
            };
        }
        let jac = model.gradient(&point).tr_mul(directions);
        let step = match jac.lu().solve(&q) {
            Some(step) if step.iter().all(|s| s.is_finite()) => step,
            _ => {
                return ProjectionResult {
                    status: ProjectionStatus::SingularSystem,
                    coeffs,
                    point,
                    iterations,
                }
            }
        };
        coeffs -= step;
        point = x0 + directions * &coeffs;
        iterations += 1;
    }
}

/// Whether a surface move started at `frame.base_point` can land on `to`.
///
/// The tangent part of `to - from` is recovered from the frame, then Newton
/// projects `from + v'` along `∇q(from)`; success means convergence within
/// `reverse_tol` of `to`.
pub fn reverse_check_from_frame<T, M>(
    model: &M,
    frame: &TangentFrame<T>,
    to: &DVector<T>,
    settings: &NewtonSettings<T>,
) -> bool
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let from = &frame.base_point;
    let (v_tan, _) = decompose(frame, &(to - from));
    let start = from + v_tan;
    let result = newton_project(model, &start, &frame.gradient, settings);
    result.converged() && (&result.point - to).norm() <= settings.reverse_tol
}

/// Surface-to-surface reachability, `from` and `to` both on the surface.
pub fn reverse_check_surface<T, M>(model: &M, from: &DVector<T>, to: &DVector<T>, settings: &NewtonSettings<T>) -> bool
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    match tangent_frame(model, from) {
        Ok(frame) => reverse_check_from_frame(model, &frame, to, settings),
        Err(_) => false,
    }
}

/// Whether an On move started at the off-surface point `y` can generate the
/// surface point `x`: project `y` along `∇q(y)`, then check the surface move
/// from the projection to `x`.
pub fn reverse_check_off<T, M>(model: &M, x: &DVector<T>, y: &DVector<T>, settings: &NewtonSettings<T>) -> bool
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let projected = newton_project(model, y, &model.gradient(y), settings);
    projected.converged() && reverse_check_surface(model, &projected.point, x, settings)
}
