//! TOML run specifications.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sas_core::{ConstraintModel, EllipsoidSphereModel, LinearModel, NewtonSettings, SamplerConfig, TwoSpheresModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub table1: Table1Spec,
    #[serde(default)]
    pub baseline: BaselineSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    TwoSpheres {
        c1: Option<[f64; 3]>,
        r1: Option<f64>,
        c2: Option<[f64; 3]>,
        r2: Option<f64>,
        init: Option<Vec<f64>>,
    },
    EllipsoidSphere {
        c1: Option<[f64; 3]>,
        r1: Option<f64>,
        c2: Option<[f64; 3]>,
        semi_axes: Option<[f64; 3]>,
        init: Option<Vec<f64>>,
    },
    /// `q(x) = Aᵀx`; `matrix` lists the rows of `A` (`n` rows of `m` values).
    Linear {
        matrix: Vec<Vec<f64>>,
        init: Option<Vec<f64>>,
    },
}

/// A constructed model with its starting point.
pub enum Model {
    TwoSpheres(TwoSpheresModel<f64>),
    EllipsoidSphere(EllipsoidSphereModel<f64>),
    Linear(LinearModel<f64>),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn ConstraintModel<f64> {
        match self {
            Model::TwoSpheres(m) => m,
            Model::EllipsoidSphere(m) => m,
            Model::Linear(m) => m,
        }
    }

    pub fn two_spheres(&self) -> Option<&TwoSpheresModel<f64>> {
        match self {
            Model::TwoSpheres(m) => Some(m),
            _ => None,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<(Model, DVector<f64>), CliError> {
        let bad = |e: sas_core::ModelError| CliError::Config(format!("model: {e}"));
        let (model, default_init, init) = match self {
            ModelSpec::TwoSpheres { c1, r1, c2, r2, init } => {
                let m = if c1.is_none() && r1.is_none() && c2.is_none() && r2.is_none() {
                    TwoSpheresModel::standard()
                } else {
                    TwoSpheresModel::new(
                        c1.unwrap_or([0.0, 0.0, 1.0]),
                        r1.unwrap_or(2f64.sqrt()),
                        c2.unwrap_or([0.0, -1.0, 0.0]),
                        r2.unwrap_or(2f64.sqrt()),
                    )
                    .map_err(bad)?
                };
                let start = m.surface_point();
                (Model::TwoSpheres(m), start, init)
            }
            ModelSpec::EllipsoidSphere {
                c1,
                r1,
                c2,
                semi_axes,
                init,
            } => {
                let m = if c1.is_none() && r1.is_none() && c2.is_none() && semi_axes.is_none() {
                    EllipsoidSphereModel::standard()
                } else {
                    EllipsoidSphereModel::new(
                        c1.unwrap_or([0.0, 0.0, 1.0]),
                        r1.unwrap_or(2f64.sqrt()),
                        c2.unwrap_or([0.0, -1.0, 0.0]),
                        semi_axes.unwrap_or([2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt()]),
                    )
                    .map_err(bad)?
                };
                let start = m.surface_point();
                (Model::EllipsoidSphere(m), start, init)
            }
            ModelSpec::Linear { matrix, init } => {
                let n = matrix.len();
                let m = matrix.first().map_or(0, Vec::len);
                if n == 0 || m == 0 || matrix.iter().any(|r| r.len() != m) {
                    return Err(CliError::Config(
                        "model.matrix: rows must be non-empty and of equal length".into(),
                    ));
                }
                let a = DMatrix::from_fn(n, m, |i, j| matrix[i][j]);
                let model = LinearModel::new(a).map_err(bad)?;
                (Model::Linear(model), DVector::zeros(n), init)
            }
        };
        let init = match init {
            Some(v) => {
                let dim = model.as_dyn().ambient_dim();
                if v.len() != dim {
                    return Err(CliError::Config(format!(
                        "model.init: expected {dim} coordinates, got {}",
                        v.len()
                    )));
                }
                DVector::from_column_slice(v)
            }
            None => default_init,
        };
        Ok((model, init))
    }
}

/// Sampler parameters. Unset scales default from `epsilon`; unset `k2` is
/// chosen so that flat surfaces are sampled exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub epsilon: f64,
    pub sigma_prp: Option<f64>,
    pub sigma_tan: Option<f64>,
    pub sigma_on: Option<f64>,
    pub sigma_hrd: Option<f64>,
    pub sigma_sft: Option<f64>,
    pub lambda11: Option<f64>,
    pub lambda12: Option<f64>,
    pub lambda21: Option<f64>,
    pub lambda22: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub tol_q: Option<f64>,
    pub max_iter: Option<usize>,
    pub reverse_tol: Option<f64>,
}

impl SamplerSpec {
    pub fn config(&self, num_constraints: usize) -> Result<SamplerConfig<f64>, CliError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CliError::Config(format!(
                "sampler.epsilon: must be positive, got {}",
                self.epsilon
            )));
        }
        let mut c = SamplerConfig::new(self.epsilon, num_constraints).with_seed(self.seed);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut c.sigma_prp, self.sigma_prp);
        set(&mut c.sigma_tan, self.sigma_tan);
        set(&mut c.sigma_on, self.sigma_on);
        set(&mut c.sigma_hrd, self.sigma_hrd);
        set(&mut c.sigma_sft, self.sigma_sft);
        c.lambda11 = self
            .lambda11
            .unwrap_or_else(|| self.lambda12.map_or(c.lambda11, |l| 1.0 - l));
        c.lambda12 = self.lambda12.unwrap_or(1.0 - c.lambda11);
        c.lambda21 = self
            .lambda21
            .unwrap_or_else(|| self.lambda22.map_or(c.lambda21, |l| 1.0 - l));
        c.lambda22 = self.lambda22.unwrap_or(1.0 - c.lambda21);
        set(&mut c.k1, self.k1);
        c.k2 = match self.k2 {
            Some(k2) => k2,
            None => c.balanced_k2(num_constraints),
        };
        let defaults = NewtonSettings::<f64>::default();
        c.newton = NewtonSettings {
            tol_q: self.tol_q.unwrap_or(defaults.tol_q),
            max_iter: self.max_iter.unwrap_or(defaults.max_iter),
            reverse_tol: self.reverse_tol.unwrap_or(defaults.reverse_tol),
        };
        c.validate().map_err(|e| CliError::Config(format!("sampler: {e}")))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub n_chains: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_steps: 100_000,
            burn_in: 10_000,
            thin: 1,
            n_chains: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    /// Coordinate index of the observable `F(x) = x_k` (0-based).
    pub observable: usize,
    pub window_constant: f64,
    /// Rows written to autocov.csv.
    pub max_lag: usize,
    /// Restrict the autocovariance to off-surface records.
    pub soft_only: bool,
    pub bins: usize,
    /// Fraction trimmed from each tail before placing the bins.
    pub trim: f64,
    /// Midpoint pieces per bin for the bin mass; 1 uses `p(b_i)|B_i|`.
    pub sub_intervals: usize,
    /// Quadrature cell side as a multiple of epsilon.
    pub quadrature_cell: f64,
    pub theta_bins: usize,
    /// Thin the off-surface samples by their autocorrelation time before
    /// histogramming.
    pub decorrelate: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            observable: 0,
            window_constant: sas_core::analysis::DEFAULT_WINDOW_CONSTANT,
            max_lag: 1000,
            soft_only: false,
            bins: 10,
            trim: 0.005,
            sub_intervals: 16,
            quadrature_cell: 0.25,
            theta_bins: 36,
            decorrelate: false,
        }
    }
}

impl AnalysisSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: &str| Err(CliError::Config(format!("analysis.{m}")));
        if !(self.window_constant > 0.0) {
            return fail("window_constant: must be positive");
        }
        if self.bins == 0 || self.theta_bins == 0 || self.sub_intervals == 0 || self.max_lag == 0 {
            return fail("bins, theta_bins, sub_intervals and max_lag must be at least 1");
        }
        if !(0.0..0.5).contains(&self.trim) {
            return fail("trim: must lie in [0, 0.5)");
        }
        if !(self.quadrature_cell > 0.0) {
            return fail("quadrature_cell: must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Spec {
    pub epsilons: Vec<f64>,
}

impl Default for Table1Spec {
    fn default() -> Self {
        Self {
            epsilons: vec![0.223, 0.070, 0.022, 0.007, 0.002],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    pub target_acceptance: f64,
    pub pilots: usize,
    pub pilot_steps: u64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            target_acceptance: 0.4,
            pilots: 20,
            pilot_steps: 10_000,
        }
    }
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.run.n_chains == 0 {
            return Err(CliError::Config("run.n_chains: must be at least 1".into()));
        }
        if self.run.thin == 0 {
            return Err(CliError::Config("run.thin: must be at least 1".into()));
        }
        self.analysis.validate()
    }
}
