//! The augmented Markov chain: label choice, move dispatch, Metropolis
//! accept/reject and bookkeeping.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{tangent_frame, ConstraintModel, GeometryError};
use crate::moves::{
    acceptance_probability, log_acceptance_ratio, propose, ChainState, ConfigError, Infeasibility, Label, MoveKind,
    SamplerConfig,
};
use crate::projection::newton_project;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("initial point could not be projected onto the surface")]
    InitializationFailure,
    #[error("initial point has the wrong dimension: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Accepted,
    /// Feasible proposal rejected by the Metropolis test.
    Rejected,
    Infeasible(Infeasibility),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<T: Real> {
    pub kind: MoveKind,
    pub outcome: StepOutcome,
    /// `min(1, ratio)`; zero for infeasible proposals.
    pub acceptance: T,
    /// Log Metropolis-Hastings ratio, present for feasible proposals.
    pub log_ratio: Option<T>,
}

/// Chooses the move kind from the current label with one uniform draw.
pub fn choose_move<T: Real, R: Rng + ?Sized>(config: &SamplerConfig<T>, label: Label, rng: &mut R) -> MoveKind {
    let u = T::unit_uniform(rng);
    match label {
        Label::Ambient if u < config.lambda11 => MoveKind::Soft,
        Label::Ambient => MoveKind::On,
        Label::Surface if u < config.lambda22 => MoveKind::Hard,
        Label::Surface => MoveKind::Off,
    }
}

/// One transition of the chain. Rejections and infeasible proposals leave
/// both the point and the label unchanged.
pub fn step<T, M, R>(
    state: ChainState<T>,
    model: &M,
    config: &SamplerConfig<T>,
    rng: &mut R,
) -> (ChainState<T>, StepRecord<T>)
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let kind = choose_move(config, state.label, rng);
    let proposal = propose(model, config, &state, kind, rng);
    if let Err(why) = proposal.status {
        let record = StepRecord {
            kind,
            outcome: StepOutcome::Infeasible(why),
            acceptance: T::zero(),
            log_ratio: None,
        };
        return (state, record);
    }
    let log_ratio = log_acceptance_ratio(config, &state, &proposal);
    let acceptance = acceptance_probability(config, &state, &proposal);
    let accepted = T::unit_uniform(rng) < acceptance;
    let record = StepRecord {
        kind,
        outcome: if accepted {
            StepOutcome::Accepted
        } else {
            StepOutcome::Rejected
        },
        acceptance,
        log_ratio,
    };
    if accepted {
        (proposal.into_state(config), record)
    } else {
        (state, record)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveCounters {
    pub proposed: u64,
    pub accepted: u64,
    pub newton_failures: u64,
    pub reverse_check_failures: u64,
    /// Landings on the surface and rank-deficient points.
    pub other_failures: u64,
    /// Sum of acceptance probabilities, infeasible proposals counting zero.
    pub acceptance_sum: f64,
}

impl MoveCounters {
    pub fn acceptance_rate(&self) -> f64 {
        ratio(self.accepted, self.proposed)
    }

    /// Mean of `min(1, ratio)` over all proposals of this kind.
    pub fn mean_acceptance_probability(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.acceptance_sum / self.proposed as f64
        }
    }

    fn merge(&mut self, other: &Self) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
        self.newton_failures += other.newton_failures;
        self.reverse_check_failures += other.reverse_check_failures;
        self.other_failures += other.other_failures;
        self.acceptance_sum += other.acceptance_sum;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-move counters and label occupancy over the logged part of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub hard: MoveCounters,
    pub off: MoveCounters,
    pub on: MoveCounters,
    pub soft: MoveCounters,
    /// Steps that ended off the surface.
    pub occupancy_ambient: u64,
    /// Steps that ended on the surface.
    pub occupancy_surface: u64,
}

impl ChainDiagnostics {
    pub fn counters(&self, kind: MoveKind) -> &MoveCounters {
        match kind {
            MoveKind::Hard => &self.hard,
            MoveKind::Off => &self.off,
            MoveKind::On => &self.on,
            MoveKind::Soft => &self.soft,
        }
    }

    fn counters_mut(&mut self, kind: MoveKind) -> &mut MoveCounters {
        match kind {
            MoveKind::Hard => &mut self.hard,
            MoveKind::Off => &mut self.off,
            MoveKind::On => &mut self.on,
            MoveKind::Soft => &mut self.soft,
        }
    }

    pub fn record<T: Real>(&mut self, rec: &StepRecord<T>, label_after: Label) {
        let c = self.counters_mut(rec.kind);
        c.proposed += 1;
        c.acceptance_sum += rec.acceptance.as_f64();
        match rec.outcome {
            StepOutcome::Accepted => c.accepted += 1,
            StepOutcome::Rejected => {}
            StepOutcome::Infeasible(Infeasibility::NewtonFailure) => c.newton_failures += 1,
            StepOutcome::Infeasible(Infeasibility::ReverseCheckFailure) => c.reverse_check_failures += 1,
            StepOutcome::Infeasible(_) => c.other_failures += 1,
        }
        match label_after {
            Label::Ambient => self.occupancy_ambient += 1,
            Label::Surface => self.occupancy_surface += 1,
        }
    }

    pub fn steps(&self) -> u64 {
        self.occupancy_ambient + self.occupancy_surface
    }

    pub fn ambient_fraction(&self) -> f64 {
        ratio(self.occupancy_ambient, self.steps())
    }

    pub fn merge(&mut self, other: &Self) {
        for kind in MoveKind::ALL {
            let theirs = *other.counters(kind);
            self.counters_mut(kind).merge(&theirs);
        }
        self.occupancy_ambient += other.occupancy_ambient;
        self.occupancy_surface += other.occupancy_surface;
    }
}

/// Logged chain states, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLog<T: Real> {
    pub steps: Vec<u64>,
    pub labels: Vec<Label>,
    /// One column per ambient coordinate.
    pub coords: Vec<Vec<T>>,
}

impl<T: Real> SampleLog<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            steps: Vec::new(),
            labels: Vec::new(),
            coords: vec![Vec::new(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, step: u64, label: Label, x: &DVector<T>) {
        self.steps.push(step);
        self.labels.push(label);
        for (col, v) in self.coords.iter_mut().zip(x.iter()) {
            col.push(*v);
        }
    }

    pub fn point(&self, i: usize) -> DVector<T> {
        DVector::from_fn(self.dim(), |k, _| self.coords[k][i])
    }

    pub fn coordinate(&self, k: usize) -> &[T] {
        &self.coords[k]
    }

    /// Values of coordinate `k` at the off-surface records.
    pub fn soft_coordinate(&self, k: usize) -> Vec<T> {
        self.labels
            .iter()
            .zip(&self.coords[k])
            .filter(|(l, _)| **l == Label::Ambient)
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn append(&mut self, other: &Self) {
        self.steps.extend_from_slice(&other.steps);
        self.labels.extend_from_slice(&other.labels);
        for (a, b) in self.coords.iter_mut().zip(&other.coords) {
            a.extend_from_slice(b);
        }
    }
}

/// The off-surface records of a log, in order. These are the draws from the
/// soft target; surface records follow the surface density instead.
pub fn extract_soft_samples<T: Real>(log: &SampleLog<T>) -> Vec<DVector<T>> {
    (0..log.len())
        .filter(|&i| log.labels[i] == Label::Ambient)
        .map(|i| log.point(i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Start {
    /// Project the initial point onto the surface and start with label 2.
    Surface,
    /// Start off the surface at the initial point as given, or nudged along
    /// the surface normal by `ε` if it lies on the surface.
    Ambient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub start: Start,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            n_steps: 0,
            burn_in: 10_000,
            thin: 1,
            start: Start::Surface,
        }
    }
}

impl RunOptions {
    pub fn steps(n_steps: u64) -> Self {
        Self {
            n_steps,
            ..Self::default()
        }
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_thin(mut self, thin: u64) -> Self {
        self.thin = thin.max(1);
        self
    }

    pub fn with_start(mut self, start: Start) -> Self {
        self.start = start;
        self
    }
}

/// A single chain with its own seeded generator.
pub struct Sampler<'a, T: Real, M: ConstraintModel<T> + ?Sized> {
    model: &'a M,
    config: SamplerConfig<T>,
    state: Option<ChainState<T>>,
    rng: ChaCha8Rng,
}

impl<'a, T: Real, M: ConstraintModel<T> + ?Sized> Sampler<'a, T, M> {
    pub fn new(model: &'a M, config: SamplerConfig<T>, init: &DVector<T>, start: Start) -> Result<Self, SamplerError> {
        config.validate()?;
        if init.len() != model.ambient_dim() {
            return Err(SamplerError::Dimension {
                expected: model.ambient_dim(),
                got: init.len(),
            });
        }
        let on_surface = model.evaluate(init).norm() <= config.newton.tol_q;
        let state = match start {
            Start::Ambient if !on_surface => ChainState::off_surface(model, &config, init.clone()),
            Start::Ambient => {
                let frame = tangent_frame(model, init)?;
                let dir = frame.normal.column(0).normalize();
                ChainState::off_surface(model, &config, init + dir * config.epsilon)
            }
            Start::Surface => {
                let projected = newton_project(model, init, &model.gradient(init), &config.newton);
                if !projected.converged() {
                    return Err(SamplerError::InitializationFailure);
                }
                ChainState::on_surface(model, &config, projected.point)?
            }
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            state: Some(state),
            rng,
        })
    }

    pub fn state(&self) -> &ChainState<T> {
        self.state.as_ref().expect("state is restored after every step")
    }

    pub fn config(&self) -> &SamplerConfig<T> {
        &self.config
    }

    pub fn step(&mut self) -> StepRecord<T> {
        let current = self.state.take().expect("state is restored after every step");
        let (next, record) = step(current, self.model, &self.config, &mut self.rng);
        self.state = Some(next);
        record
    }

    /// Runs `burn_in` unlogged steps, then `n_steps` logged ones.
    pub fn run(&mut self, options: &RunOptions) -> (SampleLog<T>, ChainDiagnostics) {
        for _ in 0..options.burn_in {
            self.step();
        }
        let thin = options.thin.max(1);
        let mut log = SampleLog::new(self.model.ambient_dim());
        let mut diag = ChainDiagnostics::default();
        for k in 1..=options.n_steps {
            let rec = self.step();
            let state = self.state();
            diag.record(&rec, state.label);
            if k % thin == 0 {
                log.push(k, state.label, &state.x);
            }
        }
        (log, diag)
    }
}

/// Runs one chain from `init`.
pub fn run<T, M>(
    model: &M,
    config: &SamplerConfig<T>,
    init: &DVector<T>,
    options: &RunOptions,
) -> Result<(SampleLog<T>, ChainDiagnostics), SamplerError>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let mut sampler = Sampler::new(model, config.clone(), init, options.start)?;
    Ok(sampler.run(options))
}

/// Runs `n_chains` independent chains in parallel with seeds
/// `config.seed + index`. Logs are concatenated in chain order and the
/// diagnostics summed.
pub fn run_chains<T, M>(
    model: &M,
    config: &SamplerConfig<T>,
    init: &DVector<T>,
    options: &RunOptions,
    n_chains: usize,
) -> Result<(Vec<SampleLog<T>>, ChainDiagnostics), SamplerError>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let results: Vec<_> = (0..n_chains.max(1))
        .into_par_iter()
        .map(|i| {
            let cfg = config.clone().with_seed(config.seed.wrapping_add(i as u64));
            run(model, &cfg, init, options)
        })
        .collect();
    let mut logs = Vec::with_capacity(results.len());
    let mut diag = ChainDiagnostics::default();
    for r in results {
        let (log, d) = r?;
        diag.merge(&d);
        logs.push(log);
    }
    Ok((logs, diag))
}

/// Result of tuning the Soft-only baseline chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedScale {
    pub sigma_sft: f64,
    pub acceptance: f64,
}

/// Bisects `σ_sft` on a log scale so that a Soft-only chain
/// (`λ11 = 1`) accepts about `target` of its proposals.
///
/// Each of the `pilots` runs takes `pilot_steps` steps and continues from
/// where the previous one stopped. The initial bracket is `[1e-3 ε, 1e2 ε]`.
pub fn tune_soft_scale<T, M>(
    model: &M,
    config: &SamplerConfig<T>,
    init: &DVector<T>,
    target: f64,
    pilots: usize,
    pilot_steps: u64,
) -> Result<TunedScale, SamplerError>
where
    T: Real,
    M: ConstraintModel<T> + ?Sized,
{
    let eps = config.epsilon.as_f64();
    let mut lo = (1e-3 * eps).ln();
    let mut hi = (1e2 * eps).ln();
    let mut cfg = soft_only(config);
    let mut point = init.clone();
    let mut best = TunedScale {
        sigma_sft: eps,
        acceptance: 0.0,
    };
    for _ in 0..pilots.max(1) {
        let mid = 0.5 * (lo + hi);
        cfg.sigma_sft = T::lit(mid.exp());
        let mut sampler = Sampler::new(model, cfg.clone(), &point, Start::Ambient)?;
        let (_, diag) = sampler.run(&RunOptions::steps(pilot_steps).with_burn_in(0));
        point = sampler.state().x.clone();
        let acc = diag.soft.acceptance_rate();
        best = TunedScale {
            sigma_sft: mid.exp(),
            acceptance: acc,
        };
        if acc > target {
            lo = mid;
        } else {
            hi = mid;
        }
        cfg.seed = cfg.seed.wrapping_add(1);
    }
    Ok(best)
}

/// The Soft-only variant of `config`: label 1 always proposes Soft moves.
pub fn soft_only<T: Real>(config: &SamplerConfig<T>) -> SamplerConfig<T> {
    let mut cfg = config.clone();
    cfg.lambda11 = T::one();
    cfg.lambda12 = T::zero();
    cfg
}
