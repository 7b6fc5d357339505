//! Experiment orchestration: realization farming, counter aggregation,
//! per-radius analysis, regression across radii, convergence studies and
//! file output.

use crate::chain::{assemble, calibrate_ns, stationary, NsCalibration, StationaryDistribution, TransitionMatrix};
use crate::domain::{SimConfig, SubdomainKind, PARTICLE_COUNT, SUBDOMAINS};
use crate::dynamics::{derive_seed, run_realization_with};
use crate::fitstats::{
    fit_constrained, linregress, realization_mean_summary, truncnorm_pdf, FitOptions, NormalSummary,
    RegressionResult, TruncNormFit,
};
use crate::occupancy::{pool, Convention, CounterAccumulator, OccupancyCounters, OccupancyError, PooledProbabilities};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Largest tolerated fraction of failed realizations.
pub const MAX_FAILED_FRACTION: f64 = 1e-3;
/// Bins per kind in convergence-study histograms.
pub const CONVERGENCE_BINS: usize = 30;

pub const HISTOGRAMS_HEADER: [&str; 6] = ["radius", "kind", "state", "empirical_probability", "chain_pi", "fitted_density"];
pub const FITS_HEADER: [&str; 9] = ["radius", "kind", "model", "mu", "sigma", "sse", "slope", "intercept", "r2"];
pub const REGRESSION_HEADER: [&str; 6] = ["kind", "model", "slope", "intercept", "r2", "points"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] crate::domain::DomainError),
    #[error("{failed} of {total} realizations failed at radius {radius}; first: {first}")]
    TooManyFailures { radius: f64, failed: usize, total: usize, first: String },
    #[error("radius {radius}: {source}")]
    RareEvents { radius: f64, source: OccupancyError },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json error on {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Whole-experiment description; also the JSON config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    pub radius_list: Vec<f64>,
    pub ns_candidates: Vec<usize>,
    pub realization_sweep: Vec<usize>,
    pub output_dir: PathBuf,
    pub worker_count: usize,
    pub convention: Convention,
    pub fit: FitOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            radius_list: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            ns_candidates: (5..=16).collect(),
            realization_sweep: vec![500, 1000, 2000, 4000, 6000],
            output_dir: PathBuf::from("out"),
            worker_count: std::thread::available_parallelism().map_or(1, |n| n.get()),
            convention: Convention::FromState,
            fit: FitOptions::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
    }

    pub fn config_for(&self, radius: f64) -> SimConfig {
        SimConfig { radius, ..self.base.clone() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.radius_list.is_empty() {
            return Err(HarnessError::InvalidSpec("radius_list is empty".into()));
        }
        if self.worker_count == 0 {
            return Err(HarnessError::InvalidSpec("worker_count must be positive".into()));
        }
        if self.base.realizations == 0 {
            return Err(HarnessError::InvalidSpec("realizations must be positive".into()));
        }
        if let Some(&max) = self.realization_sweep.iter().max() {
            if max > self.base.realizations {
                return Err(HarnessError::InvalidSpec(format!(
                    "realization sweep reaches {max} but only {} realizations are run",
                    self.base.realizations
                )));
            }
        }
        for &r in &self.radius_list {
            self.config_for(r).validate()?;
        }
        Ok(())
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

/// Raw simulation output for one radius: merged counters (all states up to
/// the particle count) and per-realization time-averaged occupancy per subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusRun {
    pub radius: f64,
    pub radius_index: usize,
    pub counters: OccupancyCounters,
    pub subdomain_means: Vec<[f64; SUBDOMAINS]>,
    pub failures: Vec<RealizationFailure>,
}

impl RadiusRun {
    /// Per-realization mean occupancy of a kind (average over its subdomains).
    pub fn kind_means(&self, kind: SubdomainKind) -> Vec<f64> {
        let members = kind.members();
        self.subdomain_means
            .iter()
            .map(|m| members.iter().map(|&i| m[i - 1]).sum::<f64>() / members.len() as f64)
            .collect()
    }
}

pub fn realization_seed(base_seed: u64, radius_index: usize, realization_index: usize) -> u64 {
    derive_seed(base_seed, &[radius_index as u64, realization_index as u64])
}

fn simulate_one(config: &SimConfig, seed: u64) -> Result<(OccupancyCounters, [f64; SUBDOMAINS]), String> {
    let mut acc = CounterAccumulator::new(PARTICLE_COUNT);
    let mut sums = [0u64; SUBDOMAINS];
    let burn_in = config.burn_in;
    run_realization_with(config, seed, |k, _, eta| {
        if k >= burn_in {
            acc.push(eta);
        }
        if k > burn_in {
            for (s, &e) in sums.iter_mut().zip(eta) {
                *s += e as u64;
            }
        }
    })
    .map_err(|e| e.to_string())?;
    let n = (config.steps - burn_in) as f64;
    Ok((acc.finish(), sums.map(|s| s as f64 / n)))
}

/// Simulate every realization of one radius on the given pool.
fn simulate_radius(
    spec: &ExperimentSpec,
    pool: &rayon::ThreadPool,
    radius_index: usize,
    count: usize,
) -> Result<RadiusRun, HarnessError> {
    let radius = spec.radius_list[radius_index];
    let config = spec.config_for(radius);
    config.validate()?;
    let outcomes: Vec<_> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = realization_seed(config.base_seed, radius_index, i);
                (i, seed, simulate_one(&config, seed))
            })
            .collect()
    });

    let mut counters = OccupancyCounters::zero(PARTICLE_COUNT);
    let mut subdomain_means = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok((c, m)) => {
                counters = counters.merge(&c).expect("counters share a shape");
                subdomain_means.push(m);
            }
            Err(error) => failures.push(RealizationFailure { index, seed, error }),
        }
    }
    if failures.len() as f64 > MAX_FAILED_FRACTION * count as f64 {
        return Err(HarnessError::TooManyFailures {
            radius,
            failed: failures.len(),
            total: count,
            first: failures[0].error.clone(),
        });
    }
    counters.check_rare_events().map_err(|source| HarnessError::RareEvents { radius, source })?;
    Ok(RadiusRun { radius, radius_index, counters, subdomain_means, failures })
}

/// Analysis of one (radius, kind) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub radius: f64,
    pub kind: SubdomainKind,
    /// Pooled state-occupancy distribution of the simulation.
    pub empirical: Vec<f64>,
    pub matrix: TransitionMatrix,
    pub stationary: StationaryDistribution,
    pub continuous_fit: TruncNormFit,
    pub chain_fit: TruncNormFit,
    /// Mean over realizations of the time-averaged occupancy.
    pub eta_bar_mean: f64,
    pub summary: Option<NormalSummary>,
    /// Histogram of per-realization time-averaged occupancy.
    pub eta_bar_histogram: Vec<HistogramBin>,
}

impl CellResult {
    pub fn chain_mean(&self) -> f64 {
        self.stationary.mean()
    }

    pub fn empirical_mean(&self) -> f64 {
        self.empirical.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }

    /// Total variation distance between the chain's stationary vector and the empirical distribution.
    pub fn total_variation(&self) -> f64 {
        0.5 * self.stationary.pi.iter().zip(&self.empirical).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Complete(Box<CellResult>),
    Failed { radius: f64, kind: SubdomainKind, reason: String },
}

impl CellOutcome {
    pub fn complete(&self) -> Option<&CellResult> {
        match self {
            Self::Complete(c) => Some(c),
            Self::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

/// Equal-width histogram normalised to unit area over `[lo, hi]`.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let k = (((x - lo) / width) as isize).clamp(0, bins as isize - 1) as usize;
        counts[k] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lo: lo + k as f64 * width,
            hi: lo + (k + 1) as f64 * width,
            count,
            density: count as f64 / (n * width),
        })
        .collect()
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

fn analyse_cell(
    run: &RadiusRun,
    counters: &OccupancyCounters,
    pooled: &PooledProbabilities,
    kind: SubdomainKind,
    options: &FitOptions,
) -> Result<CellResult, String> {
    let ns = counters.n_states;
    let empirical = counters.empirical_distribution(kind);
    let matrix = assemble(pooled, kind).map_err(|e| format!("assemble: {e}"))?;
    let stationary = stationary(&matrix).map_err(|e| format!("stationary: {e}"))?;
    let chain_fit = fit_constrained(&stationary.pi, ns, options).map_err(|e| format!("chain fit: {e}"))?;
    let continuous_fit = fit_constrained(&empirical, ns, options).map_err(|e| format!("continuous fit: {e}"))?;
    let means = run.kind_means(kind);
    let eta_bar_mean = means.iter().sum::<f64>() / means.len().max(1) as f64;
    let (lo, hi) = min_max(&means);
    Ok(CellResult {
        radius: run.radius,
        kind,
        empirical,
        matrix,
        stationary,
        continuous_fit,
        chain_fit,
        eta_bar_mean,
        summary: realization_mean_summary(&means).ok(),
        eta_bar_histogram: histogram(&means, lo, hi, CONVERGENCE_BINS),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    pub run: RadiusRun,
    pub pooled: PooledProbabilities,
    pub cells: Vec<CellOutcome>,
}

impl RadiusResult {
    pub fn cell(&self, kind: SubdomainKind) -> Option<&CellResult> {
        self.cells[kind.ordinal()].complete()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Direct simulation data.
    Continuous,
    /// Markov chain surrogate.
    Chain,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Self::Continuous => "continuous",
            Self::Chain => "chain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub kind: SubdomainKind,
    pub model: Model,
    pub result: RegressionResult,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub radii: Vec<RadiusResult>,
    pub regressions: Vec<RegressionRow>,
    pub regression_failures: Vec<String>,
}

impl ExperimentResult {
    pub fn regression(&self, kind: SubdomainKind, model: Model) -> Option<&RegressionResult> {
        self.regressions.iter().find(|r| r.kind == kind && r.model == model).map(|r| &r.result)
    }

    pub fn radius(&self, radius: f64) -> Option<&RadiusResult> {
        self.radii.iter().find(|r| r.run.radius == radius)
    }
}

/// Analyse simulated runs: pool, assemble, solve, fit and regress.
pub fn analyse(spec: &ExperimentSpec, runs: Vec<RadiusRun>) -> ExperimentResult {
    let ns = spec.base.n_states;
    let radii: Vec<RadiusResult> = runs
        .into_iter()
        .map(|run| {
            let counters = run.counters.truncated(ns.min(run.counters.n_states));
            let pooled = pool(&counters, spec.convention);
            let cells = SubdomainKind::ALL
                .into_iter()
                .map(|kind| match analyse_cell(&run, &counters, &pooled, kind, &spec.fit) {
                    Ok(c) => CellOutcome::Complete(Box::new(c)),
                    Err(reason) => CellOutcome::Failed { radius: run.radius, kind, reason },
                })
                .collect();
            RadiusResult { run, pooled, cells }
        })
        .collect();

    let mut regressions = Vec::new();
    let mut regression_failures = Vec::new();
    for kind in SubdomainKind::ALL {
        for model in [Model::Continuous, Model::Chain] {
            let points: Vec<(f64, f64)> = radii
                .iter()
                .filter_map(|r| r.cell(kind))
                .map(|c| {
                    let y = match model {
                        Model::Continuous => c.eta_bar_mean,
                        Model::Chain => c.chain_mean(),
                    };
                    (c.radius, y)
                })
                .collect();
            match linregress(&points) {
                Ok(result) => regressions.push(RegressionRow { kind, model, result, points }),
                Err(e) => regression_failures.push(format!("{kind}/{}: {e}", model.name())),
            }
        }
    }
    ExperimentResult { spec: spec.clone(), radii, regressions, regression_failures }
}

/// Simulate every radius in the experiment without analysing.
pub fn simulate(spec: &ExperimentSpec) -> Result<Vec<RadiusRun>, HarnessError> {
    spec.validate()?;
    let pool = spec.thread_pool()?;
    (0..spec.radius_list.len())
        .map(|ri| {
            log::info!("radius {}: {} realizations", spec.radius_list[ri], spec.base.realizations);
            simulate_radius(spec, &pool, ri, spec.base.realizations)
        })
        .collect()
}

/// Simulate, analyse and (when `write` is set) emit all output files.
pub fn run_experiment(spec: &ExperimentSpec, write: bool) -> Result<ExperimentResult, HarnessError> {
    let runs = simulate(spec)?;
    let result = analyse(spec, runs);
    if write {
        emit_outputs(&result, &spec.output_dir)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub realizations: usize,
    pub kind: SubdomainKind,
    pub summary: Option<NormalSummary>,
    pub histogram: Vec<HistogramBin>,
}

/// Summaries over nested prefixes of one realization pool at the first radius.
pub fn convergence_study(spec: &ExperimentSpec) -> Result<Vec<ConvergenceRow>, HarnessError> {
    spec.validate()?;
    if spec.realization_sweep.is_empty() {
        return Err(HarnessError::InvalidSpec("realization_sweep is empty".into()));
    }
    let pool = spec.thread_pool()?;
    let max = *spec.realization_sweep.iter().max().unwrap_or(&0);
    let run = simulate_radius(spec, &pool, 0, max)?;
    Ok(convergence_from_run(&run, &spec.realization_sweep))
}

pub fn convergence_from_run(run: &RadiusRun, sweep: &[usize]) -> Vec<ConvergenceRow> {
    let mut rows = Vec::new();
    for kind in SubdomainKind::ALL {
        let all = run.kind_means(kind);
        let (lo, hi) = min_max(&all);
        for &count in sweep {
            let prefix = &all[..count.min(all.len())];
            rows.push(ConvergenceRow {
                realizations: count,
                kind,
                summary: realization_mean_summary(prefix).ok(),
                histogram: histogram(prefix, lo, hi, CONVERGENCE_BINS),
            });
        }
    }
    rows
}

/// N_s calibration for every kind at the first radius.
pub fn calibrate(spec: &ExperimentSpec) -> Result<Vec<NsCalibration>, HarnessError> {
    spec.validate()?;
    let pool = spec.thread_pool()?;
    let run = simulate_radius(spec, &pool, 0, spec.base.realizations)?;
    Ok(SubdomainKind::ALL
        .into_iter()
        .map(|kind| calibrate_ns(&run.counters, kind, &spec.ns_candidates, spec.convention, &spec.fit))
        .collect())
}

/// Floats in CSV output: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|source| HarnessError::Csv { path: path.to_path_buf(), source })
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let wrap = |source| HarnessError::Csv { path: path.to_path_buf(), source };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
}

/// Per-radius entry of `matrices.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub radius: f64,
    pub pooled: PooledProbabilities,
    pub matrices: Vec<TransitionMatrix>,
    pub stationary: Vec<StationaryDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RadiusDiagnostics {
    radius: f64,
    radius_index: usize,
    realizations: usize,
    total_steps: u64,
    rare_events: u64,
    rare_event_fraction: f64,
    rare_excluded: Vec<u64>,
    above_n_states: Vec<u64>,
    boundary_adjustments: Vec<(SubdomainKind, Vec<usize>)>,
    failed_realizations: Vec<RealizationFailure>,
    failed_cells: Vec<(SubdomainKind, String)>,
    small_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Diagnostics {
    base_seed: u64,
    seed_scheme: String,
    n_states: usize,
    convention: Convention,
    radii: Vec<RadiusDiagnostics>,
    regression_failures: Vec<String>,
}

/// Checkpoint file names for one radius.
pub fn checkpoint_paths(dir: &Path, radius: f64) -> (PathBuf, PathBuf) {
    (dir.join(format!("counters_R{radius}.json")), dir.join(format!("means_R{radius}.json")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeansCheckpoint {
    radius: f64,
    radius_index: usize,
    subdomain_means: Vec<[f64; SUBDOMAINS]>,
    failures: Vec<RealizationFailure>,
}

/// Load the runs written by [`emit_outputs`] for every radius in the spec.
pub fn load_checkpoints(spec: &ExperimentSpec, dir: &Path) -> Result<Vec<RadiusRun>, HarnessError> {
    spec.radius_list
        .iter()
        .map(|&radius| {
            let (cpath, mpath) = checkpoint_paths(dir, radius);
            let counters: OccupancyCounters = read_json(&cpath)?;
            let means: MeansCheckpoint = read_json(&mpath)?;
            Ok(RadiusRun {
                radius,
                radius_index: means.radius_index,
                counters,
                subdomain_means: means.subdomain_means,
                failures: means.failures,
            })
        })
        .collect()
}

/// Write histograms, matrices, fits, regression, diagnostics and per-radius checkpoints.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let spec = &result.spec;

    let mut hist_rows = Vec::new();
    let mut fit_rows = Vec::new();
    let mut matrices = Vec::new();
    let mut diag_radii = Vec::new();
    for r in &result.radii {
        let radius = r.run.radius;
        let mut entry = MatrixEntry { radius, pooled: r.pooled.clone(), matrices: Vec::new(), stationary: Vec::new() };
        let mut adjustments = Vec::new();
        let mut failed_cells = Vec::new();
        for outcome in &r.cells {
            let cell = match outcome {
                CellOutcome::Complete(c) => c,
                CellOutcome::Failed { kind, reason, .. } => {
                    failed_cells.push((*kind, reason.clone()));
                    continue;
                }
            };
            entry.matrices.push(cell.matrix.clone());
            entry.stationary.push(cell.stationary.clone());
            adjustments.push((cell.kind, cell.matrix.adjusted_rows.clone()));
            for j in 0..cell.empirical.len() {
                hist_rows.push(vec![
                    fmt_float(radius),
                    cell.kind.name().to_string(),
                    j.to_string(),
                    fmt_float(cell.empirical[j]),
                    fmt_float(cell.stationary.pi[j]),
                    fmt_float(truncnorm_pdf(j as f64, &cell.chain_fit.params)),
                ]);
            }
            for (model, fit) in [(Model::Continuous, &cell.continuous_fit), (Model::Chain, &cell.chain_fit)] {
                let reg = result.regression(cell.kind, model);
                let opt = |f: fn(&RegressionResult) -> f64| reg.map_or(String::new(), |g| fmt_float(f(g)));
                fit_rows.push(vec![
                    fmt_float(radius),
                    cell.kind.name().to_string(),
                    model.name().to_string(),
                    fmt_float(fit.params.mu),
                    fmt_float(fit.params.sigma),
                    fmt_float(fit.sse),
                    opt(|g| g.slope),
                    opt(|g| g.intercept),
                    opt(|g| g.r_squared),
                ]);
            }
        }
        matrices.push(entry);

        let c = &r.run.counters;
        let truncated = c.truncated(spec.base.n_states.min(c.n_states));
        diag_radii.push(RadiusDiagnostics {
            radius,
            radius_index: r.run.radius_index,
            realizations: r.run.subdomain_means.len(),
            total_steps: c.total_steps,
            rare_events: c.rare_events,
            rare_event_fraction: c.rare_event_fraction(),
            rare_excluded: c.rare_excluded.clone(),
            above_n_states: truncated.above_cap,
            boundary_adjustments: adjustments,
            failed_realizations: r.run.failures.clone(),
            failed_cells,
            small_sample: r.run.subdomain_means.len() < 2 || c.total_steps < 1000,
        });

        let (cpath, mpath) = checkpoint_paths(dir, radius);
        write_json(&cpath, &r.run.counters)?;
        write_json(
            &mpath,
            &MeansCheckpoint {
                radius,
                radius_index: r.run.radius_index,
                subdomain_means: r.run.subdomain_means.clone(),
                failures: r.run.failures.clone(),
            },
        )?;
    }

    let reg_rows = result
        .regressions
        .iter()
        .map(|g| {
            vec![
                g.kind.name().to_string(),
                g.model.name().to_string(),
                fmt_float(g.result.slope),
                fmt_float(g.result.intercept),
                fmt_float(g.result.r_squared),
                g.points.len().to_string(),
            ]
        })
        .collect();

    write_rows(&dir.join("histograms.csv"), &HISTOGRAMS_HEADER, hist_rows)?;
    write_rows(&dir.join("fits.csv"), &FITS_HEADER, fit_rows)?;
    write_rows(&dir.join("regression.csv"), &REGRESSION_HEADER, reg_rows)?;
    write_json(&dir.join("matrices.json"), &matrices)?;
    write_json(
        &dir.join("diagnostics.json"),
        &Diagnostics {
            base_seed: spec.base.base_seed,
            seed_scheme: "splitmix64 chain over [base_seed, radius_index, realization_index]".into(),
            n_states: spec.base.n_states,
            convention: spec.convention,
            radii: diag_radii,
            regression_failures: result.regression_failures.clone(),
        },
    )?;
    Ok(())
}

pub fn emit_convergence(rows: &[ConvergenceRow], dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary = rows
        .iter()
        .map(|r| {
            let (m, s) = r.summary.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
            vec![r.realizations.to_string(), r.kind.name().to_string(), fmt_float(m), fmt_float(s)]
        })
        .collect();
    write_rows(&dir.join("convergence.csv"), &["realizations", "kind", "mean", "std"], summary)?;
    let bins = rows
        .iter()
        .flat_map(|r| {
            r.histogram.iter().map(move |b| {
                vec![
                    r.realizations.to_string(),
                    r.kind.name().to_string(),
                    fmt_float(b.lo),
                    fmt_float(b.hi),
                    b.count.to_string(),
                    fmt_float(b.density),
                ]
            })
        })
        .collect();
    write_rows(
        &dir.join("convergence_histograms.csv"),
        &["realizations", "kind", "bin_lo", "bin_hi", "count", "density"],
        bins,
    )
}

pub fn emit_calibration(cals: &[NsCalibration], dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let rows = cals
        .iter()
        .flat_map(|c| {
            c.table.iter().map(move |t| {
                vec![
                    c.kind.name().to_string(),
                    t.n_states.to_string(),
                    fmt_float(t.mu),
                    fmt_float(t.sigma),
                    (t.n_states == c.chosen).to_string(),
                ]
            })
        })
        .collect();
    write_rows(&dir.join("calibrate_ns.csv"), &["kind", "n_states", "mu", "sigma", "chosen"], rows)?;
    write_json(&dir.join("calibrate_ns.json"), &cals)
}
