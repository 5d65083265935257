//! Constraint maps and the local geometry of their zero set.
//!
//! A [`ConstraintModel`] is a smooth map `q: R^n -> R^m` with `m < n`. Its
//! zero set is the hard constraint surface. At a point `x` the gradient matrix
//! `G = ∇q(x)` is `n × m`, one column per constraint gradient. Everything the
//! moves need about the surface near `x` is collected in a [`TangentFrame`].

use nalgebra::{DMatrix, DVector, QR, SVD};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("gradient matrix is rank deficient (smallest singular value {smallest:e}, tolerance {tolerance:e})")]
    RankDeficient { smallest: f64, tolerance: f64 },
    #[error("gradient matrix contains non-finite entries")]
    NonFinite,
}

/// A smooth constraint map `q: R^n -> R^m` with an analytic gradient.
///
/// Implementations must be immutable once built; the sampler shares them
/// between threads.
pub trait ConstraintModel<T: Real>: Send + Sync {
    fn ambient_dim(&self) -> usize;

    fn num_constraints(&self) -> usize;

    /// `q(x)`, a vector of length `m`.
    fn evaluate(&self, x: &DVector<T>) -> DVector<T>;

    /// `∇q(x)`, an `n × m` matrix whose columns are the constraint gradients.
    fn gradient(&self, x: &DVector<T>) -> DMatrix<T>;

    /// Axis-aligned box known to contain the surface, when the model can say.
    fn bounding_box(&self) -> Option<(DVector<T>, DVector<T>)> {
        None
    }

    /// Dimension of the surface, `n - m`.
    fn surface_dim(&self) -> usize {
        self.ambient_dim() - self.num_constraints()
    }

    /// `U(x) = |q(x)|^2`.
    fn potential(&self, x: &DVector<T>) -> T {
        self.evaluate(x).norm_squared()
    }
}

impl<T: Real, M: ConstraintModel<T> + ?Sized> ConstraintModel<T> for &M {
    fn ambient_dim(&self) -> usize {
        (**self).ambient_dim()
    }
    fn num_constraints(&self) -> usize {
        (**self).num_constraints()
    }
    fn evaluate(&self, x: &DVector<T>) -> DVector<T> {
        (**self).evaluate(x)
    }
    fn gradient(&self, x: &DVector<T>) -> DMatrix<T> {
        (**self).gradient(x)
    }
    fn bounding_box(&self) -> Option<(DVector<T>, DVector<T>)> {
        (**self).bounding_box()
    }
    fn potential(&self, x: &DVector<T>) -> T {
        (**self).potential(x)
    }
}

/// Local geometry at a point: orthonormal tangent basis, normal pseudo-basis
/// and singular values of the gradient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame<T: Real> {
    pub base_point: DVector<T>,
    /// `∇q(x)`, `n × m`.
    pub gradient: DMatrix<T>,
    /// `n × d`, orthonormal columns spanning the tangent space.
    pub tangent: DMatrix<T>,
    /// `n × m`, transpose of the pseudo-inverse of the gradient, so that
    /// `gradientᵀ · normal = I`.
    pub normal: DMatrix<T>,
    pub singular_values: DVector<T>,
}

impl<T: Real> TangentFrame<T> {
    pub fn ambient_dim(&self) -> usize {
        self.gradient.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.gradient.ncols()
    }

    pub fn surface_dim(&self) -> usize {
        self.tangent.ncols()
    }

    /// `Σ ln σ_i = ½ ln det(GᵀG)`.
    pub fn log_singular_product(&self) -> T {
        self.singular_values.iter().map(|s| s.ln()).sum()
    }

    /// `ln det(GᵀG)^{-1/2}`.
    pub fn log_gradient_factor(&self) -> T {
        -self.log_singular_product()
    }

    /// Tangent coordinates `Tᵀ v`.
    pub fn tangent_coords(&self, v: &DVector<T>) -> DVector<T> {
        self.tangent.tr_mul(v)
    }

    /// Normal coordinates `r` such that the normal part of `v` equals `N r`.
    pub fn normal_coords(&self, v: &DVector<T>) -> DVector<T> {
        self.gradient.tr_mul(v)
    }
}

/// Relative rank tolerance applied to the largest singular value.
pub fn rank_rel_tol<T: Real>() -> T {
    T::floor_tol(1e-10, 100.0)
}

/// Builds the tangent frame of `model` at `x`.
///
/// The tangent basis is the trailing `d` columns of the full QR factor of
/// `∇q(x)`, taken as is. The normal pseudo-basis `U Σ⁻¹ Vᵀ` comes from the
/// thin SVD.
pub fn tangent_frame<T, M>(model: &M, x: &DVector<T>) -> Result<TangentFrame<T>, GeometryError>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    frame_from_gradient(x.clone(), model.gradient(x))
}

pub fn frame_from_gradient<T: Real>(
    base_point: DVector<T>,
    gradient: DMatrix<T>,
) -> Result<TangentFrame<T>, GeometryError> {
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let (n, m) = gradient.shape();
    debug_assert!(m < n, "need fewer constraints than ambient dimensions");

    let svd = SVD::new(gradient.clone(), true, true);
    let singular_values = svd.singular_values.clone();
    let largest = singular_values.max();
    let smallest = singular_values.min();
    let tolerance = rank_rel_tol::<T>() * largest;
    if !(smallest > tolerance) {
        return Err(GeometryError::RankDeficient {
            smallest: smallest.as_f64(),
            tolerance: tolerance.as_f64(),
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut u_scaled = u.clone();
    for (j, s) in singular_values.iter().enumerate() {
        u_scaled.column_mut(j).scale_mut(T::one() / *s);
    }
    let normal = u_scaled * v_t;

    let qr = QR::new(gradient.clone());
    let mut q_t = DMatrix::<T>::identity(n, n);
    qr.q_tr_mul(&mut q_t);
    let tangent = q_t.rows(m, n - m).transpose();

    Ok(TangentFrame {
        base_point,
        gradient,
        tangent,
        normal,
        singular_values,
    })
}

/// `det(∇q(x)ᵀ∇q(x))^{-1/2}`, computed as `∏ σ_i⁻¹`.
pub fn gradient_factor<T, M>(model: &M, x: &DVector<T>) -> Result<T, GeometryError>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let frame = tangent_frame(model, x)?;
    Ok(frame.log_gradient_factor().exp())
}

/// `det(T_xᵀ T_y)`. Densities use its absolute value.
pub fn projection_jacobian<T: Real>(frame_x: &TangentFrame<T>, frame_y: &TangentFrame<T>) -> T {
    frame_x.tangent.tr_mul(&frame_y.tangent).determinant()
}

/// `ln |det(T_xᵀ T_y)|`.
pub fn log_abs_jacobian<T: Real>(frame_x: &TangentFrame<T>, frame_y: &TangentFrame<T>) -> T {
    projection_jacobian(frame_x, frame_y).abs().ln()
}

/// Splits `v` into its tangent part `T Tᵀ v` and the remainder.
pub fn decompose<T: Real>(frame: &TangentFrame<T>, v: &DVector<T>) -> (DVector<T>, DVector<T>) {
    let v_tan = &frame.tangent * frame.tangent.tr_mul(v);
    let v_norm = v - &v_tan;
    (v_tan, v_norm)
}
