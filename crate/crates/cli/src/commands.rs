//! The `run`, `analyze`, `table1`, `baseline` and `check-flat` commands.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sas_core::analysis::{
    self, bin_ratio_report, central_bin_edges, chi_square_uniform, histogram, iact_from_normalized,
    marginal_density_x1, pooled_autocovariance, uniform_edges, ChiSquareResult, IactResult, QuadratureGrid,
};
use sas_core::sampler::{soft_only, tune_soft_scale};
use sas_core::{
    run_chains, ChainDiagnostics, Label, LinearModel, MoveKind, Real, RunOptions, SampleLog, Sampler, SamplerConfig,
    Start,
};
use serde::Serialize;

use crate::output::{read_samples, write_csv, write_diagnostics, write_json, write_samples};
use crate::spec::{AnalysisSpec, Model, RunSpec};
use crate::CliError;

/// Command-line values that replace the spec file's.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub n_steps: Option<u64>,
    pub burn_in: Option<u64>,
    pub thin: Option<u64>,
    pub n_chains: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut RunSpec) {
        if let Some(v) = self.seed {
            spec.sampler.seed = v;
        }
        if let Some(v) = self.epsilon {
            spec.sampler.epsilon = v;
        }
        if let Some(v) = self.n_steps {
            spec.run.n_steps = v;
        }
        if let Some(v) = self.burn_in {
            spec.run.burn_in = v;
        }
        if let Some(v) = self.thin {
            spec.run.thin = v;
        }
        if let Some(v) = self.n_chains {
            spec.run.n_chains = v;
        }
        if let Some(v) = &self.output_dir {
            spec.output_dir = v.clone();
        }
    }
}

/// A validated spec with its model, start point and sampler configuration.
pub struct Prepared {
    pub spec: RunSpec,
    pub model: Model,
    pub init: DVector<f64>,
    pub config: SamplerConfig<f64>,
}

pub fn prepare(spec: RunSpec) -> Result<Prepared, CliError> {
    spec.validate()?;
    let (model, init) = spec.model.build()?;
    let config = spec.sampler.config(model.as_dyn().num_constraints())?;
    Ok(Prepared {
        spec,
        model,
        init,
        config,
    })
}

fn run_options(spec: &RunSpec, start: Start) -> RunOptions {
    RunOptions::steps(spec.run.n_steps)
        .with_burn_in(spec.run.burn_in)
        .with_thin(spec.run.thin)
        .with_start(start)
}

pub fn cmd_run(p: &Prepared) -> Result<ChainDiagnostics, CliError> {
    let opts = run_options(&p.spec, Start::Surface);
    let (logs, diag) = run_chains(p.model.as_dyn(), &p.config, &p.init, &opts, p.spec.run.n_chains)?;
    let dir = &p.spec.output_dir;
    write_samples(&dir.join("samples.csv"), &logs)?;
    write_diagnostics::<()>(&dir.join("diagnostics.json"), &diag, &p.config, logs.len(), None)?;
    Ok(diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub epsilon: f64,
    pub off_acc: f64,
    pub on_acc: f64,
    pub n_off_proposed: u64,
    pub n_on_proposed: u64,
}

/// Mean Off and On acceptance probabilities for each `ε`, with
/// `σ_prp = σ_tan = σ_on = ε`.
pub fn cmd_table1(p: &Prepared, epsilons: &[f64]) -> Result<Vec<Table1Row>, CliError> {
    if epsilons.is_empty() {
        return Err(CliError::Config("table1.epsilons: empty".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut sampler = p.spec.sampler.clone();
        sampler.epsilon = eps;
        sampler.sigma_prp = Some(eps);
        sampler.sigma_tan = Some(eps);
        sampler.sigma_on = Some(eps);
        let config = sampler.config(p.model.as_dyn().num_constraints())?;
        let opts = run_options(&p.spec, Start::Surface);
        let (_, diag) = run_chains(p.model.as_dyn(), &config, &p.init, &opts, p.spec.run.n_chains)?;
        rows.push(Table1Row {
            epsilon: eps,
            off_acc: diag.off.mean_acceptance_probability(),
            on_acc: diag.on.mean_acceptance_probability(),
            n_off_proposed: diag.off.proposed,
            n_on_proposed: diag.on.proposed,
        });
    }
    write_csv(
        &p.spec.output_dir.join("table1.csv"),
        &["epsilon", "off_acc", "on_acc", "n_off_proposed", "n_on_proposed"],
        rows.iter().map(|r| {
            vec![
                r.epsilon.to_string(),
                format!("{:.6}", r.off_acc),
                format!("{:.6}", r.on_acc),
                r.n_off_proposed.to_string(),
                r.n_on_proposed.to_string(),
            ]
        }),
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineTuning {
    pub sigma_sft: f64,
    pub pilot_acceptance: f64,
    pub acceptance: f64,
}

/// Soft-only Metropolis chain with its step size tuned to the target
/// acceptance rate.
pub fn cmd_baseline(p: &Prepared) -> Result<BaselineTuning, CliError> {
    let b = &p.spec.baseline;
    if !(b.target_acceptance > 0.0 && b.target_acceptance < 1.0) || b.pilots == 0 || b.pilot_steps == 0 {
        return Err(CliError::Config(
            "baseline: need 0 < target_acceptance < 1, pilots >= 1, pilot_steps >= 1".into(),
        ));
    }
    let tuned = tune_soft_scale(
        p.model.as_dyn(),
        &p.config,
        &p.init,
        b.target_acceptance,
        b.pilots,
        b.pilot_steps,
    )?;
    let mut config = soft_only(&p.config);
    config.sigma_sft = tuned.sigma_sft;
    let opts = run_options(&p.spec, Start::Ambient);
    let (logs, diag) = run_chains(p.model.as_dyn(), &config, &p.init, &opts, p.spec.run.n_chains)?;
    let tuning = BaselineTuning {
        sigma_sft: tuned.sigma_sft,
        pilot_acceptance: tuned.acceptance,
        acceptance: diag.soft.acceptance_rate(),
    };
    let dir = &p.spec.output_dir;
    write_samples(&dir.join("samples.csv"), &logs)?;
    write_diagnostics(&dir.join("diagnostics.json"), &diag, &config, logs.len(), Some(tuning))?;
    Ok(tuning)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub n_records: usize,
    pub n_soft: usize,
    pub iact: Option<IactResult>,
    pub thinning: usize,
    pub theta: Option<ChiSquareResult>,
    pub bin_ratio_max_deviation: Option<f64>,
}

/// Model context for the analyses that need the target density.
pub struct AnalysisModel<'a> {
    pub model: &'a Model,
    pub epsilon: f64,
}

pub fn cmd_analyze(
    samples: &Path,
    ctx: Option<AnalysisModel<'_>>,
    opts: &AnalysisSpec,
    out: &Path,
) -> Result<AnalysisSummary, CliError> {
    opts.validate()?;
    let logs = read_samples(samples)?;
    let dim = logs[0].dim();
    if opts.observable >= dim {
        return Err(CliError::Config(format!(
            "analysis.observable: index {} out of range for {dim} coordinates",
            opts.observable
        )));
    }
    if let Some(ctx) = &ctx {
        let model_dim = ctx.model.as_dyn().ambient_dim();
        if model_dim != dim {
            return Err(CliError::Samples(format!(
                "{dim} coordinates in the file, model has {model_dim}"
            )));
        }
    }
    let mut summary = AnalysisSummary {
        n_records: logs.iter().map(SampleLog::len).sum(),
        n_soft: logs
            .iter()
            .map(|l| l.labels.iter().filter(|x| **x == Label::Ambient).count())
            .sum(),
        thinning: 1,
        ..Default::default()
    };

    let series: Vec<Vec<f64>> = logs
        .iter()
        .map(|l| {
            if opts.soft_only {
                l.soft_coordinate(opts.observable)
            } else {
                l.coordinate(opts.observable).to_vec()
            }
        })
        .collect();
    match autocorrelation(&series, opts) {
        Ok((acov, iact)) => {
            write_csv(
                &out.join("autocov.csv"),
                &["lag", "c", "rho"],
                acov.c
                    .iter()
                    .zip(&acov.normalized)
                    .take(opts.max_lag)
                    .enumerate()
                    .map(|(t, (c, r))| vec![t.to_string(), c.to_string(), r.to_string()]),
            )?;
            if let Some(iact) = iact {
                write_json(&out.join("iact.json"), &iact)?;
            }
            summary.iact = iact;
        }
        Err(e) => eprintln!("warning: autocorrelation skipped: {e}"),
    }

    let soft_x: Vec<Vec<f64>> = logs.iter().map(|l| l.soft_coordinate(0)).collect();
    let thin = if opts.decorrelate {
        decorrelation_stride(&soft_x, opts.window_constant)
    } else {
        1
    };
    summary.thinning = thin;
    let soft_points: Vec<DVector<f64>> = logs
        .iter()
        .flat_map(|l| analysis::thin(&sas_core::extract_soft_samples(l), thin))
        .collect();

    let Some(ctx) = ctx else {
        return Ok(summary);
    };
    if let Some(two) = ctx.model.two_spheres() {
        let thetas: Vec<f64> = soft_points
            .iter()
            .filter_map(|x| two.theta_coordinate(x).ok())
            .collect();
        let edges = uniform_edges(-std::f64::consts::PI, std::f64::consts::PI, opts.theta_bins);
        let counts = histogram(&thetas, &edges).map_err(|e| CliError::Config(e.to_string()))?;
        let n = thetas.len().max(1) as f64;
        let uniform = 1.0 / std::f64::consts::TAU;
        write_csv(
            &out.join("theta_hist.csv"),
            &["bin", "lo", "hi", "count", "density", "uniform_density"],
            counts.iter().enumerate().map(|(i, c)| {
                let width = edges[i + 1] - edges[i];
                vec![
                    i.to_string(),
                    edges[i].to_string(),
                    edges[i + 1].to_string(),
                    c.to_string(),
                    (*c as f64 / (n * width)).to_string(),
                    uniform.to_string(),
                ]
            }),
        )?;
        if !thetas.is_empty() {
            summary.theta = Some(chi_square_uniform(&counts));
        }
    }

    let x1: Vec<f64> = soft_points.iter().map(|x| x[0]).collect();
    let grid = QuadratureGrid::auto(ctx.model.as_dyn(), ctx.epsilon, opts.quadrature_cell * ctx.epsilon);
    match (grid, central_bin_edges(&x1, opts.bins, opts.trim)) {
        (Some(grid), Ok(edges)) if dim == 3 => {
            let pdf = |v: f64| marginal_density_x1(ctx.model.as_dyn(), ctx.epsilon, v, &grid);
            let report =
                bin_ratio_report(&x1, &edges, pdf, opts.sub_intervals).map_err(|e| CliError::Config(e.to_string()))?;
            write_csv(
                &out.join("binratio.csv"),
                &["bin", "center", "count", "pdf", "ratio", "std_err"],
                report.bins.iter().map(|b| {
                    vec![
                        b.index.to_string(),
                        b.center.to_string(),
                        b.count.to_string(),
                        b.pdf.to_string(),
                        b.ratio.to_string(),
                        b.std_err.to_string(),
                    ]
                }),
            )?;
            summary.bin_ratio_max_deviation = Some(report.max_deviation());
        }
        (_, Err(e)) => eprintln!("warning: bin ratios skipped: {e}"),
        _ => eprintln!("warning: bin ratios need a three-dimensional model with a bounding box"),
    }
    Ok(summary)
}

type AcovAndIact = (analysis::Autocovariance, Option<IactResult>);

fn autocorrelation(series: &[Vec<f64>], opts: &AnalysisSpec) -> Result<AcovAndIact, analysis::AnalysisError> {
    let longest = series.iter().map(Vec::len).max().unwrap_or(0);
    let n: usize = series.iter().map(Vec::len).sum();
    let usable: Vec<&[f64]> = series.iter().filter(|s| s.len() >= 2).map(Vec::as_slice).collect();
    let lags = (longest / 2).max(opts.max_lag.min(longest)).max(1);
    let acov = pooled_autocovariance(&usable, lags)?;
    let iact = if longest >= 100 {
        match iact_from_normalized(&acov.normalized, longest, opts.window_constant) {
            Ok(r) => Some(IactResult {
                n_eff: n as f64 / r.tau,
                ..r
            }),
            Err(e) => {
                eprintln!("warning: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok((acov, iact))
}

/// `ceil(τ)` of the pooled off-surface x₁ series, or 1 if it cannot be
/// estimated.
pub fn decorrelation_stride(series: &[Vec<f64>], c: f64) -> usize {
    let longest = series.iter().map(Vec::len).max().unwrap_or(0);
    let usable: Vec<&[f64]> = series.iter().filter(|s| s.len() >= 2).map(Vec::as_slice).collect();
    pooled_autocovariance(&usable, (longest / 2).max(1))
        .ok()
        .and_then(|a| iact_from_normalized(&a.normalized, longest, c).ok())
        .map_or(1, |r| r.tau.ceil().max(1.0) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlatCheck {
    pub models: usize,
    pub feasible: u64,
    pub max_abs_deviation: f64,
}

pub const FLAT_TOLERANCE: f64 = 1e-8;

/// Runs the sampler on random linear constraints and records the largest
/// `|ratio - 1|` over feasible Hard, Off and On proposals.
pub fn cmd_check_flat(models: usize, steps: u64, seed: u64) -> Result<FlatCheck, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feasible = 0u64;
    let mut worst = 0.0f64;
    for i in 0..models {
        let n = [3usize, 5, 10][rng.random_range(0..3)];
        let choices: Vec<usize> = [1usize, 2, 4].into_iter().filter(|m| *m < n).collect();
        let m = choices[rng.random_range(0..choices.len())];
        let a = DMatrix::from_fn(n, m, |_, _| f64::standard_normal(&mut rng));
        let model = LinearModel::new(a).map_err(|e| CliError::Config(e.to_string()))?;
        let eps = 0.01 + 0.5 * f64::unit_uniform(&mut rng);
        let config = SamplerConfig::new(eps, m).with_seed(seed.wrapping_add(i as u64));
        let mut sampler = Sampler::new(&model, config, &DVector::zeros(n), Start::Surface)?;
        for _ in 0..steps {
            let rec = sampler.step();
            if rec.kind == MoveKind::Soft {
                continue;
            }
            if let Some(lr) = rec.log_ratio {
                feasible += 1;
                worst = worst.max((lr.exp() - 1.0).abs());
            }
        }
    }
    Ok(FlatCheck {
        models,
        feasible,
        max_abs_deviation: worst,
    })
}
