use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sas_cli::commands::{self, AnalysisModel, Overrides, FLAT_TOLERANCE};
use sas_cli::spec::{AnalysisSpec, RunSpec};
use sas_cli::CliError;

/// Surface augmented MCMC sampler.
#[derive(Parser)]
#[command(name = "sas", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler; writes samples.csv and diagnostics.json.
    Run(RunArgs),
    /// Autocovariance, IACT, theta histogram and bin ratios of a samples file.
    Analyze(AnalyzeArgs),
    /// Mean Off/On acceptance over a grid of epsilon values; writes table1.csv.
    Table1 {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated epsilon values.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Soft-move-only Metropolis chain tuned to the target acceptance rate.
    Baseline(RunArgs),
    /// Check that the acceptance ratio is exactly 1 on random flat surfaces.
    CheckFlat {
        #[arg(long, default_value_t = 10)]
        models: usize,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML spec file.
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_steps: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<commands::Prepared, CliError> {
        let mut spec = RunSpec::load(&self.spec)?;
        Overrides {
            seed: self.seed,
            epsilon: self.epsilon,
            n_steps: self.n_steps,
            burn_in: self.burn_in,
            thin: self.thin,
            n_chains: self.chains,
            output_dir: self.out.clone(),
        }
        .apply(&mut spec);
        commands::prepare(spec)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// samples.csv written by `run` or `baseline`.
    samples: PathBuf,
    /// Spec the samples came from; enables the theta histogram and bin ratios.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory (default: the spec's, else the samples file's).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    observable: Option<usize>,
    #[arg(long)]
    window_constant: Option<f64>,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    sub_intervals: Option<usize>,
    #[arg(long)]
    soft_only: bool,
    #[arg(long)]
    decorrelate: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let p = args.load()?;
            let diag = commands::cmd_run(&p)?;
            println!(
                "steps {}  off-surface fraction {:.4}  output {}",
                diag.steps(),
                diag.ambient_fraction(),
                p.spec.output_dir.display()
            );
        }
        Command::Table1 { run, epsilons } => {
            let p = run.load()?;
            let eps = epsilons.unwrap_or_else(|| p.spec.table1.epsilons.clone());
            println!("epsilon   off_acc    on_acc");
            for r in commands::cmd_table1(&p, &eps)? {
                println!("{:<9} {:.6}   {:.6}", r.epsilon, r.off_acc, r.on_acc);
            }
        }
        Command::Baseline(args) => {
            let p = args.load()?;
            let t = commands::cmd_baseline(&p)?;
            println!(
                "sigma_sft {:.6}  pilot acceptance {:.4}  acceptance {:.4}",
                t.sigma_sft, t.pilot_acceptance, t.acceptance
            );
        }
        Command::Analyze(args) => analyze(args)?,
        Command::CheckFlat { models, steps, seed } => {
            let r = commands::cmd_check_flat(models, steps, seed)?;
            println!(
                "models {}  feasible proposals {}  max |ratio - 1| {:e}",
                r.models, r.feasible, r.max_abs_deviation
            );
            if r.max_abs_deviation.is_nan() || r.max_abs_deviation >= FLAT_TOLERANCE {
                return Err(CliError::CheckFailed(format!(
                    "max |ratio - 1| = {:e} >= {FLAT_TOLERANCE:e}",
                    r.max_abs_deviation
                )));
            }
        }
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let spec = args.spec.as_deref().map(RunSpec::load).transpose()?;
    let mut opts = spec.as_ref().map_or_else(AnalysisSpec::default, |s| s.analysis.clone());
    if let Some(v) = args.observable {
        opts.observable = v;
    }
    if let Some(v) = args.window_constant {
        opts.window_constant = v;
    }
    if let Some(v) = args.max_lag {
        opts.max_lag = v;
    }
    if let Some(v) = args.bins {
        opts.bins = v;
    }
    if let Some(v) = args.sub_intervals {
        opts.sub_intervals = v;
    }
    opts.soft_only |= args.soft_only;
    opts.decorrelate |= args.decorrelate;

    let out = args
        .out
        .or_else(|| spec.as_ref().map(|s| s.output_dir.clone()))
        .unwrap_or_else(|| args.samples.parent().map(PathBuf::from).unwrap_or_default());
    let built = match &spec {
        Some(s) => Some((s.model.build()?.0, s.sampler.epsilon)),
        None => None,
    };
    let ctx = built.as_ref().map(|(model, epsilon)| AnalysisModel {
        model,
        epsilon: *epsilon,
    });
    let summary = commands::cmd_analyze(&args.samples, ctx, &opts, &out)?;
    println!("records {}  off-surface {}", summary.n_records, summary.n_soft);
    if let Some(i) = summary.iact {
        println!("tau {:.3}  window {}  n_eff {:.1}", i.tau, i.window, i.n_eff);
    }
    if let Some(t) = summary.theta {
        println!(
            "theta chi-square {:.3} on {} dof, p = {:.4}",
            t.statistic, t.dof, t.p_value
        );
    }
    if let Some(d) = summary.bin_ratio_max_deviation {
        println!("bin ratios: max deviation {d:.2} standard errors");
    }
    Ok(())
}
