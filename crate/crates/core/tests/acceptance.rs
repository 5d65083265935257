//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines appear in plain `cargo test` output.

mod common;

use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sas_core::analysis::{
    autocovariance, bin_ratio_report, central_bin_edges, chi_square_uniform, histogram,
    integrated_autocorrelation_time, marginal_density_x1, thin, uniform_edges, QuadratureGrid,
};
use sas_core::geometry::frame_from_gradient;
use sas_core::moves::{acceptance_probability, off_density, propose};
use sas_core::sampler::{soft_only, tune_soft_scale};
use sas_core::*;

const REFERENCE_RATES: [(f64, f64, f64); 5] = [
    (0.223, 0.768781, 0.763992),
    (0.070, 0.919511, 0.919816),
    (0.022, 0.974695, 0.974659),
    (0.007, 0.992233, 0.99188),
    (0.002, 0.997509, 0.997627),
];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `ceil(τ)` of a series, used to thin it to roughly independent draws.
fn stride(series: &[f64]) -> usize {
    integrated_autocorrelation_time(series, 5.0).map_or(1, |r| r.tau.ceil().max(1.0) as usize)
}

fn flat_exactness() -> Outcome {
    let shapes = [
        (3, 1),
        (3, 2),
        (5, 1),
        (5, 2),
        (5, 4),
        (10, 1),
        (10, 2),
        (10, 4),
        (3, 1),
        (10, 4),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut feasible = 0u64;
    for (i, &(n, m)) in shapes.iter().enumerate() {
        let a = DMatrix::from_fn(n, m, |_, _| normals(&mut rng, 1)[0]);
        let model = LinearModel::new(a).unwrap();
        let eps = [0.01, 0.1, 0.5][i % 3];
        let cfg = SamplerConfig::new(eps, m).with_seed(i as u64);
        let mut sampler = Sampler::new(&model, cfg, &DVector::zeros(n), Start::Surface).unwrap();
        for _ in 0..10_000 {
            let rec = sampler.step();
            if rec.kind == MoveKind::Soft {
                continue;
            }
            if let Some(lr) = rec.log_ratio {
                feasible += 1;
                worst = worst.max(lr.exp_m1().abs());
            }
        }
    }
    outcome(
        worst < 1e-8 && feasible > 0,
        format!("10 models, {feasible} feasible Hard/Off/On proposals, max |ratio - 1| = {worst:.2e} (< 1e-8)"),
    )
}

fn table1(steps: u64, tol: f64) -> Outcome {
    let model = EllipsoidSphereModel::<f64>::standard();
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for (i, &(eps, off, on)) in REFERENCE_RATES.iter().enumerate() {
        let cfg = SamplerConfig::new(eps, 2).with_seed(500 + i as u64);
        let (_, d) = run(&model, &cfg, &model.surface_point(), &RunOptions::steps(steps)).unwrap();
        let (a, b) = (d.off.mean_acceptance_probability(), d.on.mean_acceptance_probability());
        worst = worst.max((a - off).abs()).max((b - on).abs());
        cells.push(format!("{eps}: {a:.4}/{b:.4}"));
    }
    outcome(
        worst <= tol,
        format!(
            "{steps} steps per eps, Off/On {}; max deviation {worst:.4} (<= {tol})",
            cells.join(", ")
        ),
    )
}

fn theta_uniformity() -> Outcome {
    let model = TwoSpheresModel::<f64>::standard();
    let cfg = SamplerConfig::new(0.022, 2).with_seed(31);
    let (log, _) = run(&model, &cfg, &model.surface_point(), &RunOptions::steps(1_000_000)).unwrap();
    let soft = extract_soft_samples(&log);
    let k = stride(&log.soft_coordinate(0));
    let thetas: Vec<f64> = thin(&soft, k)
        .iter()
        .map(|x| model.theta_coordinate(x).unwrap())
        .collect();
    let edges = uniform_edges(-std::f64::consts::PI, std::f64::consts::PI, 36);
    let gof = chi_square_uniform(&histogram(&thetas, &edges).unwrap());
    outcome(
        soft.len() >= 100_000 && gof.p_value > 0.01,
        format!(
            "{} extracted samples thinned by {k} to {}; chi-square {:.1} on {} dof, p = {:.3} (> 0.01)",
            soft.len(),
            thetas.len(),
            gof.statistic,
            gof.dof,
            gof.p_value
        ),
    )
}

fn bin_ratios_for<M: ConstraintModel<f64>>(name: &str, model: &M, init: &DVector<f64>, seed: u64) -> (bool, String) {
    let eps = 0.022;
    let cfg = SamplerConfig::new(eps, 2).with_seed(seed);
    let (log, _) = run(model, &cfg, init, &RunOptions::steps(2_000_000)).unwrap();
    let x1 = log.soft_coordinate(0);
    let k = stride(&x1);
    let x1 = thin(&x1, k);
    let edges = central_bin_edges(&x1, 10, 0.005).unwrap();
    let grid = QuadratureGrid::auto(model, eps, eps / 4.0).unwrap();
    let fine = grid.refined();
    let quad_change = (0..10)
        .map(|i| {
            let c = 0.5 * (edges[i] + edges[i + 1]);
            rel(
                marginal_density_x1(model, eps, c, &grid),
                marginal_density_x1(model, eps, c, &fine),
            )
        })
        .fold(0.0, f64::max);
    let pdf = |v: f64| marginal_density_x1(model, eps, v, &grid);
    let report = bin_ratio_report(&x1, &edges, pdf, 16).unwrap();
    let centre_point = bin_ratio_report(&x1, &edges, pdf, 1).unwrap();
    let dev = report.max_deviation();
    (
        dev <= 3.0 && quad_change < 0.005,
        format!(
            "{name}: n = {} (thinned by {k}), max |R_i - R| = {dev:.2} se, grid doubling change {:.1e}; centre-point masses give {:.1} se",
            x1.len(),
            quad_change,
            centre_point.max_deviation()
        ),
    )
}

fn bin_ratio_constancy() -> Outcome {
    let two = TwoSpheresModel::<f64>::standard();
    let ell = EllipsoidSphereModel::<f64>::standard();
    let (a, da) = bin_ratios_for("two-sphere", &two, &two.surface_point(), 41);
    let (b, db) = bin_ratios_for("ellipsoid-sphere", &ell, &ell.surface_point(), 42);
    outcome(a && b, format!("{da}; {db} (<= 3 se, < 5e-3)"))
}

fn iact_flatness() -> Outcome {
    let model = EllipsoidSphereModel::<f64>::standard();
    let init = model.surface_point();
    let mut sas = Vec::new();
    for (i, beta) in [1e2f64, 1e3, 1e4].into_iter().enumerate() {
        let eps = (1.0 / (2.0 * beta)).sqrt();
        let cfg = SamplerConfig::new(eps, 2).with_seed(60 + i as u64);
        let (log, _) = run(&model, &cfg, &init, &RunOptions::steps(1_000_000)).unwrap();
        sas.push(integrated_autocorrelation_time(log.coordinate(0), 5.0).map_or(f64::NAN, |r| r.tau));
    }
    let spread = sas.iter().cloned().fold(f64::MIN, f64::max) / sas.iter().cloned().fold(f64::MAX, f64::min);

    let mut base = Vec::new();
    let mut tuned_ok = true;
    for (i, beta) in [5.0f64, 10.0, 15.0, 20.0].into_iter().enumerate() {
        let eps = (1.0 / (2.0 * beta)).sqrt();
        let cfg = SamplerConfig::new(eps, 2).with_seed(70 + i as u64);
        let tuned = tune_soft_scale(&model, &cfg, &init, 0.4, 20, 10_000).unwrap();
        let mut soft = soft_only(&cfg);
        soft.sigma_sft = tuned.sigma_sft;
        let opts = RunOptions::steps(4_000_000)
            .with_burn_in(100_000)
            .with_start(Start::Ambient);
        let (log, diag) = run(&model, &soft, &init, &opts).unwrap();
        tuned_ok &= (0.35..=0.45).contains(&diag.soft.acceptance_rate());
        base.push(integrated_autocorrelation_time(log.coordinate(0), 5.0).map_or(f64::NAN, |r| r.tau));
    }
    let monotone = base.windows(2).all(|w| w[1] > w[0]);
    let growth = base[3] / base[0];
    let fmt = |v: &[f64]| v.iter().map(|t| format!("{t:.1}")).collect::<Vec<_>>().join(", ");
    outcome(
        spread < 2.0 && monotone && growth >= 3.0 && tuned_ok,
        format!(
            "SAS tau at beta 1e2/1e3/1e4 = {} (max/min {spread:.2} < 2); baseline tau at beta 5/10/15/20 = {} (monotone {monotone}, growth {growth:.1} >= 3, acceptance in [0.35, 0.45] {tuned_ok})",
            fmt(&sas),
            fmt(&base)
        ),
    )
}

fn detailed_balance() -> Outcome {
    let model = EllipsoidSphereModel::<f64>::standard();
    let cfg = SamplerConfig::new(0.05, 2);
    let anchor = model.surface_point();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut per_kind = [0usize; 4];
    for (slot, kind) in MoveKind::ALL.into_iter().enumerate() {
        let mut attempts = 0;
        while per_kind[slot] < 250 && attempts < 100_000 {
            attempts += 1;
            let base = random_surface_point(&model, &anchor, 1.5, &mut rng);
            let state = match kind.source() {
                Label::Surface => ChainState::on_surface(&model, &cfg, base).unwrap(),
                Label::Ambient => {
                    let x = &base + normals(&mut rng, 3) * cfg.epsilon;
                    ChainState::off_surface(&model, &cfg, x)
                }
            };
            let proposal = propose(&model, &cfg, &state, kind, &mut rng);
            if !proposal.is_feasible() {
                continue;
            }
            let (i, j) = (kind.source(), kind.target());
            let (x, y) = (&state.x, &proposal.y);
            let lhs = state.log_target()
                + cfg.lambda(i, j).ln()
                + proposal.log_forward
                + acceptance_probability(&cfg, &state, &proposal).ln();
            let fwd =
                oracle_log_target(&model, &cfg, x, i) + cfg.lambda(i, j).ln() + oracle_log_h(&model, &cfg, x, i, y, j);
            let rev =
                oracle_log_target(&model, &cfg, y, j) + cfg.lambda(j, i).ln() + oracle_log_h(&model, &cfg, y, j, x, i);
            let rhs = rev + (fwd - rev).min(0.0);
            worst = worst.max((lhs - rhs).exp_m1().abs());
            per_kind[slot] += 1;
        }
    }
    let total: usize = per_kind.iter().sum();
    outcome(
        worst < 1e-8 && total == 1000,
        format!("{total} pairs (Hard/Off/On/Soft = {per_kind:?}), max relative mismatch {worst:.2e} (< 1e-8)"),
    )
}

fn off_density_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst_form = 0.0f64;
    let mut worst_frame = 0.0f64;
    let mut worst_cond = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..9);
        let m = rng.random_range(1..n);
        let g = DMatrix::from_fn(n, m, |_, _| normals(&mut rng, 1)[0]);
        let frame = frame_from_gradient(DVector::zeros(n), g.clone()).unwrap();
        worst_cond = worst_cond.max(frame.singular_values.max() / frame.singular_values.min());
        let sigma = 0.01 + rng.random::<f64>();
        let r_n = normals(&mut rng, m) * sigma;
        let v_n = &frame.normal * &r_n;
        let a = off_density::log_pseudo_inverse_form(&frame, sigma, &v_n);
        let b = off_density::log_gram_form(&frame, sigma, &v_n);
        let c = off_density::log_coordinate_form(&frame, sigma, &r_n);
        worst_form = worst_form.max((a - b).exp_m1().abs()).max((a - c).exp_m1().abs());
        let gt = g.tr_mul(&frame.tangent).amax();
        let gn = (g.tr_mul(&frame.normal) - DMatrix::identity(m, m)).amax();
        let tt = (frame.tangent.tr_mul(&frame.tangent) - DMatrix::identity(n - m, n - m)).amax();
        worst_frame = worst_frame.max(gt).max(gn).max(tt);
    }
    outcome(
        worst_form < 1e-10 && worst_frame < 1e-10,
        format!("1000 random frames (worst condition number {worst_cond:.1e}): max form mismatch {worst_form:.2e}, max frame identity residual {worst_frame:.2e} (< 1e-10)"),
    )
}

fn flat_stationarity() -> Outcome {
    let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, -0.5, 1.5, 0.3, 0.0, 2.0, -1.0, 0.0, 0.7]);
    let model = LinearModel::new(a.clone()).unwrap();
    let eps = 0.1;
    let cfg = SamplerConfig::new(eps, 2).with_seed(90);
    let (log, _) = run(&model, &cfg, &DVector::zeros(5), &RunOptions::steps(1_000_000)).unwrap();
    let soft = extract_soft_samples(&log);
    let svd = a.svd(true, false);
    let u = svd.u.unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for k in 0..2 {
        let z: Vec<f64> = soft.iter().map(|x| u.column(k).dot(x)).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let expected = eps * eps / (svd.singular_values[k] * svd.singular_values[k]);
        let n_eff = integrated_autocorrelation_time(&z, 5.0).map_or(0.0, |r| r.n_eff);
        let err = rel(var, expected);
        pass &= err < 0.05 && n_eff >= 1e4;
        details.push(format!(
            "direction {}: var/expected = {:.4}, n_eff = {n_eff:.0}",
            k + 1,
            var / expected
        ));
    }
    outcome(pass, format!("{} (within 5%, n_eff >= 1e4)", details.join("; ")))
}

fn fft_autocovariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let series = ar1(1000, 0.7, &mut rng);
    let acov = autocovariance(&series, None).unwrap();
    let worst = (0..series.len())
        .map(|t| (acov.c[t] - direct_autocovariance(&series, t)).abs())
        .fold(0.0, f64::max);
    let long = ar1(1_000_000, 0.9, &mut rng);
    let tau = integrated_autocorrelation_time(&long, 5.0).unwrap().tau;
    let err = rel(tau, 19.0);
    outcome(
        worst < 1e-10 && err < 0.15,
        format!(
            "N = 1000 max |FFT - direct| = {worst:.2e} (< 1e-10); AR(1) phi = 0.9 tau = {tau:.2} vs 19 ({:.1}% < 15%)",
            100.0 * err
        ),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 flat-surface exactness", flat_exactness),
        ("2 reference Off/On acceptance (1e6 steps)", || table1(1_000_000, 0.01)),
        ("2 reference Off/On acceptance, fast variant (1e5 steps)", || {
            table1(100_000, 0.03)
        }),
        ("3 theta uniformity", theta_uniformity),
        ("4 bin-ratio constancy", bin_ratio_constancy),
        ("5 IACT flatness and baseline contrast", iact_flatness),
        ("6 detailed-balance identity", detailed_balance),
        ("7 Off-density forms and frame identities", off_density_equivalence),
        ("8 flat-model stationarity", flat_stationarity),
        ("9 FFT autocovariance and AR(1) IACT", fft_autocovariance),
    ];
    // Optional substring filters, e.g. `cargo test --test acceptance -- reference`.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let r = check();
        if !r.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
