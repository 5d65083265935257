//! Post-run statistics: autocovariance, integrated autocorrelation time,
//! the x₁ marginal of the soft target and the bin-ratio estimator.

use nalgebra::DVector;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::geometry::ConstraintModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("series too short: {len} values, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("series is constant")]
    DegenerateSeries,
    #[error("no window M < N/2 = {half} satisfies M >= c * tau(M)")]
    WindowNotFound { half: usize },
    #[error("bin edges must be strictly increasing and at least two")]
    InvalidBins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocovariance {
    /// `C_t` for `t = 0..len`.
    pub c: Vec<f64>,
    /// `C_t / C_0`.
    pub normalized: Vec<f64>,
}

/// Lag-`t` autocovariances of `series` for `t < max_lag` (all lags when
/// `None`), each lag sum divided by `N - t`.
///
/// Computed as a zero-padded circular correlation by FFT.
pub fn autocovariance(series: &[f64], max_lag: Option<usize>) -> Result<Autocovariance, AnalysisError> {
    let n = series.len();
    if n < 2 {
        return Err(AnalysisError::TooShort { len: n, min: 2 });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);

    let lags = max_lag.unwrap_or(n).min(n);
    let c: Vec<f64> = (0..lags).map(|t| buf[t].re / size as f64 / (n - t) as f64).collect();
    if !(c[0] > 0.0) || !c[0].is_finite() {
        return Err(AnalysisError::DegenerateSeries);
    }
    let normalized = c.iter().map(|v| v / c[0]).collect();
    Ok(Autocovariance { c, normalized })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IactResult {
    pub tau: f64,
    pub window: usize,
    pub n_eff: f64,
}

pub const DEFAULT_WINDOW_CONSTANT: f64 = 5.0;

/// Integrated autocorrelation time `τ̂(M) = 1 + 2 Σ_{t=1}^{M} C_t/C_0`
/// with the smallest window `M` satisfying `M ≥ c τ̂(M)`.
pub fn integrated_autocorrelation_time(series: &[f64], c: f64) -> Result<IactResult, AnalysisError> {
    let n = series.len();
    if n < 100 {
        return Err(AnalysisError::TooShort { len: n, min: 100 });
    }
    let acov = autocovariance(series, Some(n / 2))?;
    iact_from_normalized(&acov.normalized, n, c)
}

/// Applies the self-consistent window to normalised autocovariances of a
/// series (or pooled series) of total length `n`.
pub fn iact_from_normalized(normalized: &[f64], n: usize, c: f64) -> Result<IactResult, AnalysisError> {
    let half = normalized.len().min(n / 2);
    let mut tau = 1.0;
    for (m, rho) in normalized.iter().enumerate().take(half).skip(1) {
        tau += 2.0 * rho;
        if m as f64 >= c * tau {
            return Ok(IactResult {
                tau,
                window: m,
                n_eff: n as f64 / tau,
            });
        }
    }
    Err(AnalysisError::WindowNotFound { half })
}

/// Autocovariance pooled over chains: the lag-`t` values of each chain are
/// averaged, weighted by their number of lag pairs. Each chain is centred
/// on its own mean.
pub fn pooled_autocovariance(chains: &[&[f64]], max_lag: usize) -> Result<Autocovariance, AnalysisError> {
    let mut num = vec![0.0; max_lag];
    let mut den = vec![0.0; max_lag];
    for chain in chains {
        let acov = autocovariance(chain, Some(max_lag))?;
        for (t, ct) in acov.c.iter().enumerate() {
            let pairs = (chain.len() - t) as f64;
            num[t] += ct * pairs;
            den[t] += pairs;
        }
    }
    let lags = den.iter().take_while(|d| **d > 0.0).count();
    if lags == 0 {
        return Err(AnalysisError::TooShort { len: 0, min: 2 });
    }
    let c: Vec<f64> = (0..lags).map(|t| num[t] / den[t]).collect();
    let normalized = c.iter().map(|v| v / c[0]).collect();
    Ok(Autocovariance { c, normalized })
}

/// Every `k`-th value, starting with the first.
pub fn thin<T: Clone>(series: &[T], k: usize) -> Vec<T> {
    series.iter().step_by(k.max(1)).cloned().collect()
}

/// Midpoint-rule grid over the `(x₂, x₃)` rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub cells: [usize; 2],
}

impl QuadratureGrid {
    /// The model's bounding box in `(x₂, x₃)` inflated by `6ε`, with square-ish
    /// cells of side about `cell`. `None` if the model has no bounding box.
    pub fn auto<M: ConstraintModel<f64> + ?Sized>(model: &M, epsilon: f64, cell: f64) -> Option<Self> {
        let (lo, hi) = model.bounding_box()?;
        let pad = 6.0 * epsilon;
        let lo = [lo[1] - pad, lo[2] - pad];
        let hi = [hi[1] + pad, hi[2] + pad];
        let cells = [
            ((hi[0] - lo[0]) / cell).ceil().max(1.0) as usize,
            ((hi[1] - lo[1]) / cell).ceil().max(1.0) as usize,
        ];
        Some(Self { lo, hi, cells })
    }

    /// The same rectangle with twice the resolution in each direction.
    pub fn refined(&self) -> Self {
        Self {
            cells: [2 * self.cells[0], 2 * self.cells[1]],
            ..*self
        }
    }

    fn spacing(&self) -> [f64; 2] {
        [
            (self.hi[0] - self.lo[0]) / self.cells[0] as f64,
            (self.hi[1] - self.lo[1]) / self.cells[1] as f64,
        ]
    }
}

/// Unnormalised x₁ marginal of the soft target: the midpoint-rule integral
/// of `exp(-|q(x)|²/2ε²)` over the grid at fixed `x₁`.
pub fn marginal_density_x1<M: ConstraintModel<f64> + ?Sized>(
    model: &M,
    epsilon: f64,
    x1: f64,
    grid: &QuadratureGrid,
) -> f64 {
    let [h2, h3] = grid.spacing();
    let scale = -0.5 / (epsilon * epsilon);
    let mut x = DVector::zeros(3);
    x[0] = x1;
    let mut total = 0.0;
    for i in 0..grid.cells[0] {
        x[1] = grid.lo[0] + (i as f64 + 0.5) * h2;
        let mut row = 0.0;
        for j in 0..grid.cells[1] {
            x[2] = grid.lo[1] + (j as f64 + 0.5) * h3;
            row += (model.potential(&x) * scale).exp();
        }
        total += row;
    }
    total * h2 * h3
}

/// `n_bins` equal-width bins over the sample range with a fraction `trim`
/// cut from each tail.
pub fn central_bin_edges(samples: &[f64], n_bins: usize, trim: f64) -> Result<Vec<f64>, AnalysisError> {
    if samples.is_empty() || n_bins == 0 {
        return Err(AnalysisError::InvalidBins);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pick = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let (lo, hi) = (pick(trim), pick(1.0 - trim));
    if !(hi > lo) {
        return Err(AnalysisError::InvalidBins);
    }
    let w = (hi - lo) / n_bins as f64;
    Ok((0..=n_bins).map(|i| lo + w * i as f64).collect())
}

/// Bin index of `v` for strictly increasing `edges`; the last bin is closed.
fn bin_of(edges: &[f64], v: f64) -> Option<usize> {
    let last = *edges.last()?;
    if !(v >= edges[0] && v <= last) {
        return None;
    }
    if v == last {
        return Some(edges.len() - 2);
    }
    Some(edges.partition_point(|e| *e <= v) - 1)
}

/// Counts of `values` in the bins defined by `edges`; values outside are dropped.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<u64>, AnalysisError> {
    check_edges(edges)?;
    let mut counts = vec![0u64; edges.len() - 1];
    for v in values {
        if let Some(b) = bin_of(edges, *v) {
            counts[b] += 1;
        }
    }
    Ok(counts)
}

fn check_edges(edges: &[f64]) -> Result<(), AnalysisError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AnalysisError::InvalidBins);
    }
    Ok(())
}

pub fn uniform_edges(lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    let w = (hi - lo) / n_bins as f64;
    (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + w * i as f64 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRatio {
    pub index: usize,
    pub center: f64,
    pub count: u64,
    /// Density at the bin centre.
    pub pdf: f64,
    /// `count / (N · mass)` where `mass` approximates `∫_B p`.
    pub ratio: f64,
    /// Poisson standard error `ratio / √count`.
    pub std_err: f64,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRatioReport {
    pub n: usize,
    pub bins: Vec<BinRatio>,
}

/// Ratios `R̂_i = count_i / (N · mass_i)` with `mass_i` the midpoint-rule
/// integral of `pdf` over bin `i` using `sub_intervals` pieces. One piece
/// gives the centre-point estimate `p(b_i) |B_i|`.
pub fn bin_ratio_report<F: Fn(f64) -> f64>(
    samples: &[f64],
    edges: &[f64],
    pdf: F,
    sub_intervals: usize,
) -> Result<BinRatioReport, AnalysisError> {
    let counts = histogram(samples, edges)?;
    let n = samples.len();
    let k = sub_intervals.max(1);
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let (a, b) = (edges[i], edges[i + 1]);
            let center = 0.5 * (a + b);
            let pdf_center = pdf(center);
            let h = (b - a) / k as f64;
            let mass = if k == 1 {
                pdf_center * (b - a)
            } else {
                (0..k).map(|s| pdf(a + (s as f64 + 0.5) * h)).sum::<f64>() * h
            };
            let ratio = count as f64 / (n as f64 * mass);
            let std_err = if count == 0 {
                f64::INFINITY
            } else {
                ratio / (count as f64).sqrt()
            };
            BinRatio {
                index: i,
                center,
                count,
                pdf: pdf_center,
                ratio,
                std_err,
                empty: count == 0,
            }
        })
        .collect();
    Ok(BinRatioReport { n, bins })
}

impl BinRatioReport {
    /// Inverse-variance weighted mean of the non-empty ratios.
    pub fn weighted_mean(&self) -> f64 {
        let (num, den) = self.bins.iter().filter(|b| !b.empty).fold((0.0, 0.0), |(n, d), b| {
            let w = 1.0 / (b.std_err * b.std_err);
            (n + w * b.ratio, d + w)
        });
        num / den
    }

    /// Largest `|R̂_i - R̄| / se_i` over the non-empty bins.
    pub fn max_deviation(&self) -> f64 {
        let mean = self.weighted_mean();
        self.bins
            .iter()
            .filter(|b| !b.empty)
            .map(|b| (b.ratio - mean).abs() / b.std_err)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `counts` against equal expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> ChiSquareResult {
    let k = counts.len();
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k as f64;
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dof = k.saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}
