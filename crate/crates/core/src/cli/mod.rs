//! The `asm` command-line tool.
//!
//! Every command reads a [`RunConfig`], writes plain CSV/JSON into the output
//! directory and removes whatever it wrote if it fails part way.

pub mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{ConfigError, FieldSource, FunctionalConfig, RunConfig};

use crate::asm::{
    collect_gradients, convergence_diagnostic, eigendecompose, read_estimate, read_samples, write_estimate,
    LowRankOperator, Reference, StoredEstimate,
};
use crate::bayesopt::{compare_methods, CompareConfig};
use crate::csv;
use crate::error::Error;
use crate::functionals::{
    check_gradient, linear_functional, poisson_control, quadratic_functional, ridge_functional, Functional,
    LinearFunctional, PoissonControl, PoissonControlProblem, Profile, QuadraticFunctional, RidgeFunctional,
};
use crate::hilbert::{read_field, Field, FunctionSpace, Space, Subspace};
use crate::randfield::{separable_sine_measure, GaussianMeasure};
use crate::rng::derive_seed;
use crate::surrogate::{gp_surface, KnnRegressor, Metric, Provenance, ReducedDataset};

#[derive(Debug, Parser)]
#[command(
    name = "asm",
    version,
    about = "Active subspace analysis of functionals on discretized function spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the top-level seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo estimate of the active subspace; writes estimate.json,
    /// estimate.samples.json and spectrum.csv.
    Estimate(Common),
    /// Coordinates of the stored samples on the leading eigenfunctions;
    /// writes scatter.csv and, for two coordinates, surface.csv.
    Project {
        #[command(flatten)]
        common: Common,
        /// Estimate file; defaults to OUT/estimate.json.
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Number of coordinates; defaults to experiment.dim.
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Leave-one-out nearest neighbor errors with full and projected
    /// distances; writes knn.csv.
    Knn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// ASM vs random-span Bayesian optimization; writes bo_traces.csv and
    /// bo_summary.csv.
    Bo(Common),
    /// Adjoint gradient against central differences; writes gradcheck.csv.
    Gradcheck(Common),
    /// Operator-norm error over experiment.b_grid; writes convergence.csv
    /// and convergence.json.
    Converge(Common),
}

/// Failure of a command, classified for the exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(Error),
    Other(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::RankTooSmall { .. } | Error::NonTraceClass { .. } => {
                CliError::Config(e.to_string())
            }
            Error::Io(_) | Error::Json(_) => CliError::Other(e),
            _ => CliError::Numerical(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Files written so far, deleted again unless the command succeeds.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Other(e.into()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            done: false,
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn finish(mut self) -> Vec<PathBuf> {
        self.done = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.done {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

/// The configured functional, keeping its concrete type where a closed-form
/// operator exists.
pub enum BuiltFunctional {
    Linear(LinearFunctional),
    Quadratic(QuadraticFunctional),
    Ridge(RidgeFunctional<Profile>),
    Poisson(PoissonControl),
}

impl BuiltFunctional {
    pub fn as_dyn(&self) -> &dyn Functional {
        match self {
            BuiltFunctional::Linear(f) => f,
            BuiltFunctional::Quadratic(f) => f,
            BuiltFunctional::Ridge(f) => f,
            BuiltFunctional::Poisson(f) => f,
        }
    }

    /// `E[∇f ⊗ ∇f]` when it is known in closed form.
    pub fn exact_operator(&self, measure: &GaussianMeasure) -> Option<crate::Result<LowRankOperator>> {
        match self {
            BuiltFunctional::Linear(f) => Some(Ok(f.exact_operator())),
            BuiltFunctional::Quadratic(f) => Some(f.exact_operator(measure)),
            _ => None,
        }
    }
}

/// Space, measure and functional described by a config.
pub struct Problem {
    pub space: Space,
    pub measure: GaussianMeasure,
    pub functional: BuiltFunctional,
}

fn source_field(cfg: &RunConfig, measure: &GaussianMeasure, s: &FieldSource) -> crate::Result<Field> {
    match s {
        FieldSource::Path(p) => read_field(&cfg.resolve(p), measure.space()),
        FieldSource::Mode { kl_mode, scale } => Ok(measure.kl_functions().basis()[*kl_mode].scaled(*scale)),
    }
}

fn basis_fields(
    cfg: &RunConfig,
    measure: &GaussianMeasure,
    kl_modes: &Option<Vec<usize>>,
    basis: &Option<Vec<PathBuf>>,
) -> crate::Result<Vec<Field>> {
    match (kl_modes, basis) {
        (Some(k), _) => Ok(k.iter().map(|&i| measure.kl_functions().basis()[i].clone()).collect()),
        (None, Some(b)) => b.iter().map(|p| read_field(&cfg.resolve(p), measure.space())).collect(),
        (None, None) => Err(Error::EmptySubspace),
    }
}

impl Problem {
    pub fn build(cfg: &RunConfig) -> CliResult<Self> {
        let space: Space = Arc::new(FunctionSpace::unit_square(cfg.grid.nx, cfg.grid.ny)?);
        let m = &cfg.measure;
        let measure = separable_sine_measure(&space, m.m_per_axis, m.decay, m.amplitude)?;
        // files named in the config that cannot be used are config errors
        let config_err = |e: Error| CliError::Config(format!("invalid config: functional: {e}"));
        let functional = match &cfg.functional {
            FunctionalConfig::Linear { h1, h2 } => {
                let h1 = source_field(cfg, &measure, h1).map_err(config_err)?;
                let h2 = source_field(cfg, &measure, h2).map_err(config_err)?;
                BuiltFunctional::Linear(linear_functional(h1, h2)?)
            }
            FunctionalConfig::Quadratic {
                kl_modes,
                basis,
                coefficients,
            } => {
                let b = basis_fields(cfg, &measure, kl_modes, basis).map_err(config_err)?;
                BuiltFunctional::Quadratic(
                    quadratic_functional(b.into_iter().zip(coefficients.iter().copied()).collect())
                        .map_err(config_err)?,
                )
            }
            FunctionalConfig::Ridge {
                kl_modes,
                basis,
                profile,
                scale,
            } => {
                let b = basis_fields(cfg, &measure, kl_modes, basis).map_err(config_err)?;
                let sub = Subspace::orthonormal(&space, b).map_err(config_err)?;
                let profile = match profile.as_str() {
                    "sum" => Profile::Sum,
                    "half_squares" => Profile::HalfSquares,
                    _ => Profile::SineQuadratic { scale: *scale },
                };
                BuiltFunctional::Ridge(ridge_functional(sub, profile)?)
            }
            FunctionalConfig::PoissonControl {
                alpha,
                solver_tol,
                solver_max_iter,
            } => {
                let mut p = PoissonControlProblem::new(&space).with_alpha(*alpha);
                let max_iter = solver_max_iter.unwrap_or(p.solver_max_iter);
                p = p.with_solver(*solver_tol, max_iter);
                BuiltFunctional::Poisson(poisson_control(p)?)
            }
        };
        Ok(Self {
            space,
            measure,
            functional,
        })
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs a parsed command line and returns the files it wrote.
pub fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    match cli.command {
        Command::Estimate(c) => cmd_estimate(&load_config(&c)?, &c.out),
        Command::Project { common, estimate, dim } => {
            let cfg = load_config(&common)?;
            let est = estimate.unwrap_or_else(|| common.out.join("estimate.json"));
            cmd_project(&cfg, &est, dim.unwrap_or(cfg.experiment.dim), &common.out)
        }
        Command::Knn { common, estimate } => {
            let cfg = load_config(&common)?;
            let est = estimate.unwrap_or_else(|| common.out.join("estimate.json"));
            cmd_knn(&cfg, &est, &common.out)
        }
        Command::Bo(c) => cmd_bo(&load_config(&c)?, &c.out),
        Command::Gradcheck(c) => cmd_gradcheck(&load_config(&c)?, &c.out),
        Command::Converge(c) => cmd_converge(&load_config(&c)?, &c.out),
    }
}

pub fn cmd_estimate(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let problem = Problem::build(cfg)?;
    let samples = collect_gradients(
        problem.functional.as_dyn(),
        &problem.measure,
        cfg.estimator.samples,
        cfg.estimator_seed(),
    )?;
    let est = eigendecompose(samples, cfg.estimator.rank_tol)?;
    let mut o = Outputs::new(out)?;
    let path = o.path("estimate.json");
    let side = o.path("estimate.samples.json");
    write_estimate(&path, &est, Some(&side))?;
    let spectrum = o.path("spectrum.csv");
    let rows = est
        .eigenvalues()
        .iter()
        .take(10)
        .enumerate()
        .map(|(i, v)| format!("{},{}", i + 1, csv::join(&[*v])));
    csv::write(&spectrum, "index,eigenvalue", rows)?;
    Ok(o.finish())
}

fn stored_dataset(estimate: &Path, dim: usize) -> CliResult<(StoredEstimate, ReducedDataset)> {
    let est = read_estimate(estimate)?;
    if dim > est.rank() {
        return Err(Error::RankTooSmall {
            requested: dim,
            available: est.rank(),
        }
        .into());
    }
    let side = est
        .samples_path
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} has no gradient sample sidecar", estimate.display())))?;
    let samples = read_samples(&side, &est.space)?;
    let source = Provenance {
        seed: est.seed,
        b: est.b,
        functional: String::new(),
    };
    let data = ReducedDataset::project(
        samples.inputs(),
        samples.values().to_vec(),
        est.eigenfunctions.truncate(dim),
        source,
    )?;
    Ok((est, data))
}

pub fn cmd_project(cfg: &RunConfig, estimate: &Path, dim: usize, out: &Path) -> CliResult<Vec<PathBuf>> {
    if dim == 0 {
        return Err(CliError::Config("--dim must be at least 1".into()));
    }
    let (_, data) = stored_dataset(estimate, dim)?;
    let mut o = Outputs::new(out)?;
    data.write_scatter_csv(&o.path("scatter.csv"))?;
    if dim == 2 {
        let (surface, _) = gp_surface(&data, cfg.experiment.grid_res)?;
        surface.write_csv(&o.path("surface.csv"))?;
    }
    Ok(o.finish())
}

pub fn cmd_knn(cfg: &RunConfig, estimate: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let est = read_estimate(estimate)?;
    let dim = cfg.experiment.dim.min(est.rank());
    let side = est
        .samples_path
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} has no gradient sample sidecar", estimate.display())))?;
    let samples = read_samples(&side, &est.space)?;
    let ks = &cfg.experiment.k_range;
    let values = samples.values().to_vec();
    let l2 = KnnRegressor::from_fields(samples.inputs(), values.clone(), Metric::FullL2)?.loo_cv(ks)?;
    let sub = est.eigenfunctions.truncate(dim);
    let as_ = KnnRegressor::from_fields(samples.inputs(), values, Metric::ActiveSubspace(&sub))?.loo_cv(ks)?;
    let mut o = Outputs::new(out)?;
    let rows = ks
        .iter()
        .zip(l2.iter().zip(&as_))
        .map(|(k, (a, b))| format!("{k},{}", csv::join(&[*a, *b])));
    csv::write(&o.path("knn.csv"), "K,mse_l2,mse_as", rows)?;
    Ok(o.finish())
}

/// Seed of repetition `i` of an experiment named `tag`.
pub fn repetition_seed(seed: u64, tag: &str, i: usize) -> u64 {
    derive_seed(seed, &format!("{tag}-{i}"))
}

pub fn cmd_bo(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let problem = Problem::build(cfg)?;
    let x = &cfg.experiment;
    let seeds: Vec<u64> = (0..x.repetitions).map(|i| repetition_seed(cfg.seed, "bo", i)).collect();
    let cmp = compare_methods(
        problem.functional.as_dyn(),
        &problem.measure,
        &CompareConfig {
            r: x.r,
            n_init: x.n_init,
            n_seq: x.n_seq,
        },
        &seeds,
    )?;
    let mut o = Outputs::new(out)?;
    cmp.write_traces_csv(&o.path("bo_traces.csv"))?;
    cmp.write_summary_csv(&o.path("bo_summary.csv"))?;
    if let Some(t) = cmp.traces.iter().find(|t| t.error.is_some()) {
        eprintln!(
            "warning: trace for seed {} stopped early: {}",
            t.seed,
            t.error.as_deref().unwrap_or("")
        );
    }
    Ok(o.finish())
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let problem = Problem::build(cfg)?;
    let x = &cfg.experiment;
    let u = problem.measure.sample_one(derive_seed(cfg.seed, "gradcheck"), 0);
    let dirs = problem
        .measure
        .sample(x.gradcheck_directions, derive_seed(cfg.seed, "gradcheck-directions"));
    let rep = check_gradient(problem.functional.as_dyn(), &u, &dirs, x.gradcheck_step)?;
    let mut o = Outputs::new(out)?;
    let rows = (0..dirs.len()).map(|i| {
        format!(
            "{},{}",
            i,
            csv::join(&[rep.finite_difference[i], rep.directional[i], rep.relative_errors[i]])
        )
    });
    csv::write(
        &o.path("gradcheck.csv"),
        "direction,finite_difference,directional,relative_error",
        rows,
    )?;
    Ok(o.finish())
}

#[derive(Serialize)]
struct ConvergenceSummary<'a> {
    b_grid: &'a [usize],
    mean_errors: &'a [f64],
    slope: Option<f64>,
    intercept: Option<f64>,
    proxy: bool,
    reference_eigenvalues: &'a [f64],
}

pub fn cmd_converge(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let problem = Problem::build(cfg)?;
    let x = &cfg.experiment;
    let reference = match problem.functional.exact_operator(&problem.measure) {
        Some(op) => Reference::Exact(op?),
        None => Reference::Proxy,
    };
    let seeds: Vec<u64> = (0..x.converge_seeds)
        .map(|i| repetition_seed(cfg.seed, "converge", i))
        .collect();
    let rep = convergence_diagnostic(
        problem.functional.as_dyn(),
        &problem.measure,
        &x.b_grid,
        reference,
        &seeds,
    )?;
    let mut o = Outputs::new(out)?;
    let rows = rep.b_grid.iter().enumerate().map(|(k, b)| {
        let errs: Vec<f64> = rep.errors.iter().map(|e| e[k]).collect();
        let lo = errs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("{b},{}", csv::join(&[rep.mean_errors[k], lo, hi]))
    });
    csv::write(&o.path("convergence.csv"), "B,mean_error,min_error,max_error", rows)?;
    let summary = ConvergenceSummary {
        b_grid: &rep.b_grid,
        mean_errors: &rep.mean_errors,
        slope: rep.slope,
        intercept: rep.intercept,
        proxy: rep.proxy,
        reference_eigenvalues: &rep.reference_eigenvalues,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Other(e.into()))?;
    std::fs::write(o.path("convergence.json"), json).map_err(|e| CliError::Other(e.into()))?;
    Ok(o.finish())
}
