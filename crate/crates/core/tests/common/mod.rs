//! Reference computations written independently of the library internals.
//! Frames are avoided where possible: in R³ with two constraints the tangent
//! line is the normalised cross product of the gradient columns, and all
//! densities are written out from their closed forms.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sas_core::{newton_project, ConstraintModel, Label, NewtonSettings, SamplerConfig};

pub fn log_normal(sq_norm: f64, sigma: f64, dim: usize) -> f64 {
    let d = dim as f64;
    -0.5 * sq_norm / (sigma * sigma) - d * sigma.ln() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

pub fn normals<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Unit tangent of a curve in R³ cut out by two constraints.
pub fn cross_tangent(g: &DMatrix<f64>) -> Vector3<f64> {
    let a = Vector3::new(g[(0, 0)], g[(1, 0)], g[(2, 0)]);
    let b = Vector3::new(g[(0, 1)], g[(1, 1)], g[(2, 1)]);
    a.cross(&b).normalize()
}

pub fn v3(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2])
}

pub fn log_gram_det(g: &DMatrix<f64>) -> f64 {
    g.tr_mul(g).determinant().ln()
}

pub fn oracle_log_f1<M: ConstraintModel<f64>>(model: &M, c: &SamplerConfig<f64>, x: &DVector<f64>) -> f64 {
    let q = model.evaluate(x);
    c.k1.ln() - q.norm_squared() / (2.0 * c.epsilon * c.epsilon)
}

pub fn oracle_log_f2<M: ConstraintModel<f64>>(model: &M, c: &SamplerConfig<f64>, x: &DVector<f64>) -> f64 {
    c.k2.ln() - 0.5 * log_gram_det(&model.gradient(x))
}

pub fn oracle_log_target<M: ConstraintModel<f64>>(
    model: &M,
    c: &SamplerConfig<f64>,
    x: &DVector<f64>,
    label: Label,
) -> f64 {
    match label {
        Label::Ambient => oracle_log_f1(model, c, x),
        Label::Surface => oracle_log_f2(model, c, x),
    }
}

/// `ln h(x → y)` for a model in R³ with two constraints, for the move kind
/// implied by the labels.
pub fn oracle_log_h<M: ConstraintModel<f64>>(
    model: &M,
    c: &SamplerConfig<f64>,
    x: &DVector<f64>,
    from: Label,
    y: &DVector<f64>,
    to: Label,
) -> f64 {
    match (from, to) {
        (Label::Ambient, Label::Ambient) => log_normal((y - x).norm_squared(), c.sigma_sft, 3),
        (Label::Surface, Label::Surface) => {
            let tx = cross_tangent(&model.gradient(x));
            let ty = cross_tangent(&model.gradient(y));
            let s = tx.dot(&(v3(y) - v3(x)));
            log_normal(s * s, c.sigma_hrd, 1) + tx.dot(&ty).abs().ln()
        }
        (Label::Surface, Label::Ambient) => {
            let g = model.gradient(x);
            let r_n = g.tr_mul(&(y - x));
            let r_t = cross_tangent(&g).dot(&(v3(y) - v3(x)));
            log_normal(r_n.norm_squared(), c.sigma_prp, 2)
                + 0.5 * log_gram_det(&g)
                + log_normal(r_t * r_t, c.sigma_tan, 1)
        }
        (Label::Ambient, Label::Surface) => {
            let foot = newton_project(model, x, &model.gradient(x), &NewtonSettings::default());
            assert!(foot.converged());
            let tf = cross_tangent(&model.gradient(&foot.point));
            let ty = cross_tangent(&model.gradient(y));
            let s = tf.dot(&(v3(y) - v3(&foot.point)));
            log_normal(s * s, c.sigma_on, 1) + tf.dot(&ty).abs().ln()
        }
    }
}

/// A point on the surface near `anchor + noise`.
pub fn random_surface_point<M: ConstraintModel<f64>, R: Rng>(
    model: &M,
    anchor: &DVector<f64>,
    spread: f64,
    rng: &mut R,
) -> DVector<f64> {
    loop {
        let start = anchor + normals(rng, anchor.len()) * spread;
        let res = newton_project(model, &start, &model.gradient(&start), &NewtonSettings::default());
        if res.converged() {
            return res.point;
        }
    }
}

/// Lag-`t` autocovariance by the direct sum, divided by `N - t`.
pub fn direct_autocovariance(series: &[f64], t: usize) -> f64 {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    (0..n - t)
        .map(|j| (series[j] - mean) * (series[j + t] - mean))
        .sum::<f64>()
        / (n - t) as f64
}

/// Stationary AR(1) with unit marginal variance.
pub fn ar1<R: Rng>(n: usize, phi: f64, rng: &mut R) -> Vec<f64> {
    let mut x: f64 = StandardNormal.sample(rng);
    let scale = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        x = phi * x + scale * e;
        out.push(x);
    }
    out
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
