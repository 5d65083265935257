//! Built-in constraint models: linear subspaces, the intersection of two
//! spheres and the intersection of a sphere with an axis-aligned ellipsoid.

use nalgebra::{DMatrix, DVector, SVD};
use thiserror::Error;

use crate::geometry::{rank_rel_tol, ConstraintModel};
use crate::projection::{newton_project, NewtonSettings};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("constraint matrix must have more rows than columns, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("constraint matrix is not of full column rank")]
    RankDeficient,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("spheres do not intersect in a circle (|r1 - r2| < |c1 - c2| < r1 + r2 violated)")]
    NoIntersection,
    #[error("no point of the sphere-ellipsoid intersection could be found")]
    NoFeasiblePoint,
    #[error("theta is undefined for points on the circle's axis")]
    DegenerateProjection,
}

/// `q(x) = Aᵀ x`, a flat surface through the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real> {
    a: DMatrix<T>,
}

impl<T: Real> LinearModel<T> {
    pub fn new(a: DMatrix<T>) -> Result<Self, ModelError> {
        let (rows, cols) = a.shape();
        if cols == 0 || cols >= rows {
            return Err(ModelError::Shape { rows, cols });
        }
        let sv = SVD::new(a.clone(), false, false).singular_values;
        if !(sv.min() > rank_rel_tol::<T>() * sv.max()) {
            return Err(ModelError::RankDeficient);
        }
        Ok(Self { a })
    }

    /// Skips the rank check.
    pub fn new_unchecked(a: DMatrix<T>) -> Self {
        Self { a }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.a
    }
}

impl<T: Real> ConstraintModel<T> for LinearModel<T> {
    fn ambient_dim(&self) -> usize {
        self.a.nrows()
    }

    fn num_constraints(&self) -> usize {
        self.a.ncols()
    }

    fn evaluate(&self, x: &DVector<T>) -> DVector<T> {
        self.a.tr_mul(x)
    }

    fn gradient(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }
}

/// `q_i(x) = |x - c_i|² - r_i²` for two spheres in R³; the surface is a circle.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSpheresModel<T: Real> {
    c1: DVector<T>,
    c2: DVector<T>,
    r1: T,
    r2: T,
    center: DVector<T>,
    radius: T,
    /// Unit normal of the circle's plane, pointing from `c2` to `c1`.
    axis: DVector<T>,
    /// `s - c` for the reference point `s` on the circle.
    reference: DVector<T>,
}

impl<T: Real> TwoSpheresModel<T> {
    pub fn new(c1: [T; 3], r1: T, c2: [T; 3], r2: T) -> Result<Self, ModelError> {
        if !(r1 > T::zero()) {
            return Err(ModelError::NonPositive("r1"));
        }
        if !(r2 > T::zero()) {
            return Err(ModelError::NonPositive("r2"));
        }
        let c1 = DVector::from_column_slice(&c1);
        let c2 = DVector::from_column_slice(&c2);
        let diff = &c1 - &c2;
        let dist = diff.norm();
        if !((r1 - r2).abs() < dist && dist < r1 + r2) {
            return Err(ModelError::NoIntersection);
        }
        let axis = &diff / dist;
        // Distance from c1 towards c2 at which the circle's plane sits.
        let offset = (dist * dist + r1 * r1 - r2 * r2) / (T::lit(2.0) * dist);
        let center = &c1 - &axis * offset;
        let radius = (r1 * r1 - offset * offset).sqrt();
        // Reference direction: e1 projected into the plane, else e2.
        let mut reference = DVector::zeros(3);
        for k in 0..3 {
            let mut e = DVector::<T>::zeros(3);
            e[k] = T::one();
            let in_plane = &e - &axis * axis.dot(&e);
            if in_plane.norm() > T::lit(1e-3) {
                reference = in_plane.normalize() * radius;
                break;
            }
        }
        Ok(Self {
            c1,
            c2,
            r1,
            r2,
            center,
            radius,
            axis,
            reference,
        })
    }

    /// Centers `(0,0,1)`, `(0,-1,0)`, both radii `√2`. The surface passes
    /// through `(1,0,0)`, which is used as the angular reference point.
    pub fn standard() -> Self {
        let z = T::zero();
        let one = T::one();
        let r = T::lit(2.0).sqrt();
        let mut model = Self::new([z, z, one], r, [z, -one, z], r).expect("spheres intersect");
        model.reference = DVector::from_column_slice(&[one, z, z]) - &model.center;
        model
    }

    pub fn circle_center(&self) -> DVector<T> {
        self.center.clone()
    }

    pub fn circle_radius(&self) -> T {
        self.radius
    }

    /// Unit normal of the plane containing the circle.
    pub fn plane_normal(&self) -> DVector<T> {
        self.axis.clone()
    }

    /// The point of the circle at angle `theta` from the reference point.
    pub fn circle_point(&self, theta: T) -> DVector<T> {
        let w = &self.reference;
        let w_perp = self.axis.cross(w);
        &self.center + w * theta.cos() + w_perp * theta.sin()
    }

    /// Signed angle in `(-π, π]` between the in-plane part of `x - c` and the
    /// reference direction, measured counter-clockwise about the plane normal.
    pub fn theta_coordinate(&self, x: &DVector<T>) -> Result<T, ModelError> {
        let p = x - &self.center;
        let in_plane = &p - &self.axis * self.axis.dot(&p);
        if in_plane.norm() < T::lit(1e-12) {
            return Err(ModelError::DegenerateProjection);
        }
        let w = self.reference.normalize();
        let w_perp = self.axis.cross(&w);
        let theta = w_perp.dot(&in_plane).atan2(w.dot(&in_plane));
        Ok(if theta <= -T::pi() { T::pi() } else { theta })
    }

    pub fn surface_point(&self) -> DVector<T> {
        &self.center + &self.reference
    }
}

impl<T: Real> ConstraintModel<T> for TwoSpheresModel<T> {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn num_constraints(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_column_slice(&[
            (x - &self.c1).norm_squared() - self.r1 * self.r1,
            (x - &self.c2).norm_squared() - self.r2 * self.r2,
        ])
    }

    fn gradient(&self, x: &DVector<T>) -> DMatrix<T> {
        let two = T::lit(2.0);
        let mut g = DMatrix::zeros(3, 2);
        for k in 0..3 {
            g[(k, 0)] = two * (x[k] - self.c1[k]);
            g[(k, 1)] = two * (x[k] - self.c2[k]);
        }
        g
    }

    fn bounding_box(&self) -> Option<(DVector<T>, DVector<T>)> {
        let half = self
            .axis
            .map(|n| self.radius * (T::one() - n * n).max(T::zero()).sqrt());
        Some((&self.center - &half, &self.center + &half))
    }
}

/// Sphere `|x - c1|² = r1²` intersected with the axis-aligned ellipsoid
/// `Σ (x_k - c2_k)² / s_k² = 1` in R³.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSphereModel<T: Real> {
    c1: DVector<T>,
    r1: T,
    c2: DVector<T>,
    inv_axes_sq: DVector<T>,
    semi_axes: DVector<T>,
    surface_point: DVector<T>,
}

impl<T: Real> EllipsoidSphereModel<T> {
    pub fn new(c1: [T; 3], r1: T, c2: [T; 3], semi_axes: [T; 3]) -> Result<Self, ModelError> {
        if !(r1 > T::zero()) {
            return Err(ModelError::NonPositive("r1"));
        }
        if semi_axes.iter().any(|s| !(*s > T::zero())) {
            return Err(ModelError::NonPositive("semi-axis"));
        }
        let semi_axes = DVector::from_column_slice(&semi_axes);
        let mut model = Self {
            c1: DVector::from_column_slice(&c1),
            r1,
            c2: DVector::from_column_slice(&c2),
            inv_axes_sq: semi_axes.map(|s| T::one() / (s * s)),
            semi_axes,
            surface_point: DVector::zeros(3),
        };
        model.surface_point = model.find_surface_point().ok_or(ModelError::NoFeasiblePoint)?;
        Ok(model)
    }

    /// Sphere at `(0,0,1)` with radius `√2`, ellipsoid at `(0,-1,0)` with
    /// squared semi-axes `(2,3,5)`.
    ///
    /// With semi-axes `(2,3,5)` the ellipsoid would contain the whole sphere
    /// and the intersection would be empty.
    pub fn standard() -> Self {
        let z = T::zero();
        let one = T::one();
        Self::new(
            [z, z, one],
            T::lit(2.0).sqrt(),
            [z, -one, z],
            [T::lit(2.0).sqrt(), T::lit(3.0).sqrt(), T::lit(5.0).sqrt()],
        )
        .expect("surfaces intersect")
    }

    pub fn surface_point(&self) -> DVector<T> {
        self.surface_point.clone()
    }

    pub fn semi_axes(&self) -> &DVector<T> {
        &self.semi_axes
    }

    /// Projects a fan of points on the sphere until one lands on both surfaces.
    fn find_surface_point(&self) -> Option<DVector<T>> {
        let settings = NewtonSettings::default();
        let steps = 12usize;
        for i in 0..steps {
            for j in 0..steps {
                let theta = T::pi() * (T::count(i) + T::lit(0.5)) / T::count(steps);
                let phi = T::two_pi() * T::count(j) / T::count(steps);
                let dir = DVector::from_column_slice(&[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
                let start = &self.c1 + dir * self.r1;
                let res = newton_project(self, &start, &self.gradient(&start), &settings);
                if res.converged() {
                    return Some(res.point);
                }
            }
        }
        None
    }
}

impl<T: Real> ConstraintModel<T> for EllipsoidSphereModel<T> {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn num_constraints(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &DVector<T>) -> DVector<T> {
        let mut q2 = -T::one();
        for k in 0..3 {
            let d = x[k] - self.c2[k];
            q2 += d * d * self.inv_axes_sq[k];
        }
        DVector::from_column_slice(&[(x - &self.c1).norm_squared() - self.r1 * self.r1, q2])
    }

    fn gradient(&self, x: &DVector<T>) -> DMatrix<T> {
        let two = T::lit(2.0);
        let mut g = DMatrix::zeros(3, 2);
        for k in 0..3 {
            g[(k, 0)] = two * (x[k] - self.c1[k]);
            g[(k, 1)] = two * (x[k] - self.c2[k]) * self.inv_axes_sq[k];
        }
        g
    }

    fn bounding_box(&self) -> Option<(DVector<T>, DVector<T>)> {
        let lo = DVector::from_fn(3, |k, _| (self.c1[k] - self.r1).max(self.c2[k] - self.semi_axes[k]));
        let hi = DVector::from_fn(3, |k, _| (self.c1[k] + self.r1).min(self.c2[k] + self.semi_axes[k]));
        Some((lo, hi))
    }
}
