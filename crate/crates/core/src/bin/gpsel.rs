use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gpsel::harness::experiment::{finish_timings, reference_posterior, DEFAULT_RESTARTS};
use gpsel::harness::report::{csv_path, FitRecord, RankingRecord, SamplerRecord, TraceRecord};
use gpsel::harness::{
    emit_report, gen_toy, load_report, load_with_recipe, run_benchmark, run_toy_ard_experiment, split,
    CategoricalPolicy, DataSource, ExperimentConfig, Recipe, ReferenceKind, ResultReport, ToyExperimentConfig, ToySpec,
};
use gpsel::hmc::SamplerConfig;
use gpsel::search::{forward_search, leave_input_out};
use gpsel::{fit_ml2, par, Dataset, Error, Reference, Result};

/// Projection predictive input selection for Gaussian process regression.
#[derive(Parser)]
#[command(name = "gpsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the full model and report hyperparameters and marginal likelihood.
    Fit(Common),
    /// Averaged ARD and leave-input-out relevance on the sinusoidal toy problem.
    Toy(Common),
    /// Leave-input-out relevance from the projected full model.
    Lio(Common),
    /// Forward search by predictive divergence; reports the full trace.
    Select(Common),
    /// Held-out MLPD curves of forward-search and ARD orderings over random splits.
    Bench(Common),
    /// Re-render the curve CSV of a saved report.
    Report {
        /// Saved JSON report.
        report: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// CSV file; the sinusoidal toy problem is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column (overrides the recipe).
    #[arg(long)]
    target: Option<String>,
    /// Preprocessing recipe (TOML).
    #[arg(long)]
    recipe: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training rows; for toy data, the size of both training and test sets.
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// HMC draws for the reference model; 0 uses the ML-II plug-in instead.
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Toy replications.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Relevant inputs of the toy problem.
    #[arg(long, default_value_t = 8)]
    toy_inputs: usize,
    /// Pure-noise inputs appended to the toy problem.
    #[arg(long, default_value_t = 0)]
    toy_noise_inputs: usize,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// JSON report destination (a curve CSV is written alongside); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall-clock timings, which makes reports differ between runs.
    #[arg(long)]
    record_timings: bool,
}

const DEFAULT_TOY_N: usize = 300;
const DEFAULT_CSV_N_TRAIN: usize = 300;

impl Common {
    fn recipe(&self) -> Result<Option<Recipe>> {
        let mut recipe = match (&self.recipe, &self.target) {
            (Some(p), _) => Recipe::from_path(p)?,
            (None, Some(t)) => Recipe::for_target(t, CategoricalPolicy::default()),
            (None, None) if self.data.is_some() => {
                return Err(Error::InvalidArgument("--data needs --target or --recipe".into()));
            }
            (None, None) => return Ok(None),
        };
        if let Some(t) = &self.target {
            recipe.target = t.clone();
        }
        Ok(Some(recipe))
    }

    fn toy_spec(&self, seed: u64) -> ToySpec {
        ToySpec {
            n: self.n_train.unwrap_or(DEFAULT_TOY_N),
            n_inputs: self.toy_inputs,
            n_noise_inputs: self.toy_noise_inputs,
            seed,
            ..ToySpec::default()
        }
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig { n_samples: self.samples.max(1), seed: self.seed, ..SamplerConfig::default() }
    }

    fn reference_kind(&self) -> ReferenceKind {
        if self.samples == 0 {
            ReferenceKind::Ml2
        } else {
            ReferenceKind::Hmc
        }
    }

    /// Training data for single-dataset commands: the whole CSV (or a
    /// seeded training split when `--n-train` is given), or a toy draw.
    fn training_data(&self) -> Result<Dataset> {
        match (&self.data, self.recipe()?) {
            (Some(path), Some(recipe)) => {
                let d = load_with_recipe(path, &recipe)?.dataset;
                match self.n_train.or(recipe.n_train) {
                    Some(n) if n < d.n() => Ok(split(&d, n, self.seed)?.train),
                    _ => Ok(d),
                }
            }
            _ => Ok(gen_toy(&self.toy_spec(self.seed))?.0),
        }
    }

    fn config_echo(&self) -> serde_json::Value {
        json!({
            "data": self.data,
            "target": self.target,
            "recipe": self.recipe,
            "seed": self.seed,
            "n_train": self.n_train,
            "samples": self.samples,
            "max_steps": self.max_steps,
            "restarts": self.restarts,
            "toy_inputs": self.toy_inputs,
            "toy_noise_inputs": self.toy_noise_inputs,
        })
    }
}

fn fit_cmd(c: &Common) -> Result<ResultReport> {
    let d = c.training_data()?;
    let fit = fit_ml2(&d, c.restarts, c.seed)?;
    log::info!("log marginal likelihood {:.6}", fit.log_ml);
    let mut report = ResultReport::new("fit", c.config_echo());
    report.feature_names = d.feature_names.clone();
    if c.reference_kind() == ReferenceKind::Hmc {
        let (_, run) = reference_posterior(&d, &fit, ReferenceKind::Hmc, &c.sampler())?;
        if let Some(run) = run {
            report.sampler.push(SamplerRecord { split: 0, diagnostics: run.diagnostics });
        }
    }
    report.fits.push(FitRecord { split: 0, fit });
    Ok(report)
}

fn reference_for(c: &Common, d: &Dataset) -> Result<(gpsel::LatentPosterior, ResultReport)> {
    let fit = fit_ml2(d, c.restarts, c.seed)?;
    let (lp, run) = reference_posterior(d, &fit, c.reference_kind(), &c.sampler())?;
    let mut report = ResultReport::new("", c.config_echo());
    report.feature_names = d.feature_names.clone();
    report.sampler.extend(run.map(|r| SamplerRecord { split: 0, diagnostics: r.diagnostics }));
    report.fits.push(FitRecord { split: 0, fit });
    Ok((lp, report))
}

fn lio_cmd(c: &Common) -> Result<ResultReport> {
    let d = c.training_data()?;
    let (lp, mut report) = reference_for(c, &d)?;
    report.command = "lio".into();
    let ranking = leave_input_out(&Reference::new(&lp, &d)?, true)?;
    report.warnings.extend(ranking.warnings.iter().cloned());
    report.rankings.push(RankingRecord { split: None, ranking });
    Ok(report)
}

fn select_cmd(c: &Common) -> Result<ResultReport> {
    let d = c.training_data()?;
    let (lp, mut report) = reference_for(c, &d)?;
    report.command = "select".into();
    let trace = forward_search(&Reference::new(&lp, &d)?, c.max_steps.unwrap_or(d.n_inputs()).min(d.n_inputs()))?;
    for s in &trace.steps {
        log::info!("added {:?}: divergence {:.6}", s.added_input, s.predictive_divergence);
    }
    report.warnings.extend(trace.warnings.iter().cloned());
    report.traces.push(TraceRecord { split: 0, trace });
    finish_timings(&mut report, Vec::new(), c.record_timings);
    Ok(report)
}

fn toy_cmd(c: &Common) -> Result<ResultReport> {
    run_toy_ard_experiment(&ToyExperimentConfig {
        reps: c.reps,
        spec: c.toy_spec(c.seed),
        ml2_restarts: c.restarts,
        record_timings: c.record_timings,
    })
}

fn bench_cmd(c: &Common) -> Result<ResultReport> {
    let (source, n_train, max_steps) = match (&c.data, c.recipe()?) {
        (Some(path), Some(recipe)) => {
            let n_train = c.n_train.or(recipe.n_train).unwrap_or(DEFAULT_CSV_N_TRAIN);
            let max_steps = c.max_steps.or(recipe.max_steps).unwrap_or(usize::MAX);
            (DataSource::Csv { path: path.clone(), recipe }, n_train, max_steps)
        }
        _ => {
            let spec = c.toy_spec(c.seed);
            (DataSource::Toy(spec.clone()), spec.n, c.max_steps.unwrap_or(usize::MAX))
        }
    };
    run_benchmark(&ExperimentConfig {
        source,
        n_train,
        n_splits: c.splits,
        reference: c.reference_kind(),
        sampler: c.sampler(),
        max_steps,
        ml2_restarts: c.restarts,
        seed: c.seed,
        record_timings: c.record_timings,
    })
}

fn write_report(report: &ResultReport, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            emit_report(report, path)?;
            log::info!("wrote {} and {}", path.display(), csv_path(path).display());
        }
        None => std::io::stdout().write_all(report.to_json()?.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (report, common) = match &cli.command {
        Command::Report { report, out } => {
            let csv = load_report(report)?.curves_csv()?;
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => std::io::stdout().write_all(csv.as_bytes())?,
            }
            return Ok(());
        }
        Command::Fit(c) => (fit_cmd(c)?, c),
        Command::Toy(c) => (toy_cmd(c)?, c),
        Command::Lio(c) => (lio_cmd(c)?, c),
        Command::Select(c) => (select_cmd(c)?, c),
        Command::Bench(c) => (bench_cmd(c)?, c),
    };
    write_report(&report, common.out.as_ref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    par::init_from_env();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
