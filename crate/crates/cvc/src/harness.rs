//! Monte Carlo experiments on the hierarchical generator and repeated holdout
//! evaluation on clustered data.

use std::fmt;
use std::str::FromStr;

use cvc_core::covmodel::{self, ClusterDesign, CovarianceSpec, Latent, LatentSet};
use cvc_core::estimators::{self, CvEstimate};
use cvc_core::linalg;
use cvc_core::predictors::{self, CovarianceSystem, Dataset, FittedPredictor, FoldAssignment, PredictorSpec};
use cvc_core::scenario::PredictionScenario;
use cvc_core::sim::{self, substream, LatentRecord, SimDesign, COVARIATES};
use cvc_core::varest::{self, FitOptions, Method};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};
use crate::stats::{sample_sd, MeanSe};

const ROLE_DATA: u64 = 0;
const ROLE_FOLDS: u64 = 1;
const ROLE_FIT: u64 = 2;
const ROLE_TARGETS: u64 = 3;
const ROLE_PAIR: u64 = 4;
const ROLE_SPLIT: u64 = 5;

/// Smallest number of `(T_tr, T_te)` pairs accepted for a generalization error estimate.
pub const MIN_PAIRS: usize = 100;

/// Number of folds, or leave-one-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldCount {
    Loo,
    K(usize),
}

impl FoldCount {
    pub fn assign(self, n: usize, seed: u64) -> cvc_core::Result<FoldAssignment> {
        match self {
            FoldCount::Loo => predictors::loo_folds(n),
            FoldCount::K(k) => predictors::make_folds(n, k, seed),
        }
    }
}

impl fmt::Display for FoldCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldCount::Loo => f.write_str("loo"),
            FoldCount::K(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for FoldCount {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("loo") {
            return Ok(FoldCount::Loo);
        }
        s.parse::<usize>()
            .map(FoldCount::K)
            .map_err(|_| RunError::config(format!("fold count must be `loo` or an integer, got `{s}`")))
    }
}

/// A named subset of design columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub columns: Vec<usize>,
}

/// The simulation's nested models `m1..=m8`, selected by index.
pub fn nested_models(indices: &[usize]) -> Vec<ModelSpec> {
    indices
        .iter()
        .map(|&m| ModelSpec {
            name: format!("m{m}"),
            columns: sim::nested_columns(m),
        })
        .collect()
}

/// Whether the covariance parameters are the generating truth or fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Known,
    Estimated,
}

impl fmt::Display for Variance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variance::Known => "known",
            Variance::Estimated => "estimated",
        })
    }
}

/// One experiment on the hierarchical generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimExperiment {
    pub design: SimDesign,
    pub models: Vec<ModelSpec>,
    pub predictors: Vec<PredictorSpec>,
    pub scenario: PredictionScenario,
    pub folds: FoldCount,
    pub replications: usize,
    /// Fitting method for the estimated-variance variant; `None` runs the known variant only.
    pub estimate: Option<Method>,
    /// Also compute the in-sample comparators (Altman's estimator and GCV).
    pub comparators: bool,
    /// Pairs for the generalization error of the density experiment.
    pub gen_pairs: usize,
    /// Test targets per pair, or per replication in the selection experiment.
    pub targets: usize,
    pub seed: u64,
}

impl SimExperiment {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.models.is_empty() {
            return Err(RunError::config("at least one model is required"));
        }
        if self.predictors.is_empty() {
            return Err(RunError::config("at least one predictor is required"));
        }
        for m in &self.models {
            if m.columns.is_empty() || m.columns.iter().any(|&c| c >= COVARIATES) {
                return Err(RunError::config(format!(
                    "model `{}` has columns outside 0..{COVARIATES}",
                    m.name
                )));
            }
        }
        if self.replications == 0 {
            return Err(RunError::config("replications must be positive"));
        }
        if self.targets == 0 {
            return Err(RunError::config("targets must be positive"));
        }
        if let FoldCount::K(k) = self.folds {
            if k < 2 || k > self.design.n() {
                return Err(cvc_core::Error::FoldCount { k, n: self.design.n() }.into());
            }
        }
        self.scenario.shared_components(&self.design.truth())?;
        Ok(())
    }

    fn variants(&self) -> Vec<Variance> {
        match self.estimate {
            Some(_) => vec![Variance::Known, Variance::Estimated],
            None => vec![Variance::Known],
        }
    }
}

/// Monte Carlo generalization error per model, with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenError {
    pub per_model: Vec<MeanSe>,
    pub failures: usize,
}

fn collect<T>(results: Vec<cvc_core::Result<T>>) -> Result<(Vec<T>, usize)> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut first = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                first.get_or_insert(e);
            }
        }
    }
    let failed = total - ok.len();
    if failed * 100 > total {
        let first = first.expect("a failure was recorded");
        return Err(RunError::TooManyFailures { failed, total, first });
    }
    Ok((ok, failed))
}

fn model_x(x: &DMatrix<f64>, rows: Option<&[usize]>, columns: &[usize]) -> DMatrix<f64> {
    match rows {
        Some(rows) => DMatrix::from_fn(rows.len(), columns.len(), |i, j| x[(rows[i], columns[j])]),
        None => x.select_columns(columns),
    }
}

/// Target position: time cycles through `1..=R` from a random offset so
/// every time point is represented, cluster and subcluster are uniform.
fn target_slot<R: Rng + ?Sized>(design: &SimDesign, t: usize, offset: usize, rng: &mut R) -> usize {
    let k = (t + offset) % design.per_subcluster;
    let i = rng.random_range(0..design.clusters);
    let j = rng.random_range(0..design.subclusters);
    design.index(i, j, k)
}

struct Target {
    x: [f64; COVARIATES],
    y: f64,
    /// Covariance with every observation of the full sample.
    cross: DVector<f64>,
}

fn draw_targets<R: Rng + ?Sized>(
    design: &SimDesign,
    cluster_design: &ClusterDesign,
    record: &LatentRecord,
    shared: LatentSet,
    count: usize,
    rng: &mut R,
) -> Vec<Target> {
    let truth = design.truth();
    let signal = shared.difference(LatentSet::of(&[Latent::Noise]));
    let offset = rng.random_range(0..design.per_subcluster);
    (0..count)
        .map(|t| {
            let slot = target_slot(design, t, offset, rng);
            let (x, y) = sim::draw_target(design, record, shared, slot, rng);
            let cross = DVector::from_fn(design.n(), |j, _| truth.entry(cluster_design, signal, j, slot));
            Target { x, y, cross }
        })
        .collect()
}

fn squared_errors(
    fits: &[FittedPredictor],
    models: &[ModelSpec],
    targets: &[Target],
    rows: Option<&[usize]>,
) -> Vec<f64> {
    let mut sums = vec![0.0; models.len()];
    for target in targets {
        let cross = match rows {
            Some(rows) => linalg::select_entries(&target.cross, rows),
            None => target.cross.clone(),
        };
        for ((fit, model), sum) in fits.iter().zip(models).zip(sums.iter_mut()) {
            let xs: Vec<f64> = model.columns.iter().map(|&c| target.x[c]).collect();
            let r = target.y - fit.predict(&xs, &cross);
            *sum += r * r;
        }
    }
    sums.iter().map(|s| s / targets.len() as f64).collect()
}

/// Generalization error of each model under `scenario`.
///
/// Each pair draws a sample `T`, drops one random observation to form
/// `T_tr`, fits every model with the true covariance and scores `targets`
/// test points drawn under the scenario. All models see the same draws.
pub fn approximate_generalization_error(
    design: &SimDesign,
    pred: &PredictorSpec,
    models: &[ModelSpec],
    scenario: &PredictionScenario,
    pairs: usize,
    targets: usize,
    seed: u64,
) -> Result<GenError> {
    if pairs < MIN_PAIRS {
        return Err(RunError::config(format!(
            "at least {MIN_PAIRS} pairs are required, got {pairs}"
        )));
    }
    if targets == 0 {
        return Err(RunError::config("targets must be positive"));
    }
    let truth = design.truth();
    let shared = scenario.shared_components(&truth)?;
    let cluster_design = design.cluster_design()?;
    let n = design.n();
    let results: Vec<cvc_core::Result<Vec<f64>>> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, p as u64, ROLE_PAIR);
            let (data, record) = sim::generate_hierarchical(design, &mut rng)?;
            let dropped = rng.random_range(0..n);
            let rows: Vec<usize> = (0..n).filter(|&i| i != dropped).collect();
            let system = if pred.needs_covariance() {
                CovarianceSystem::new(&truth, &cluster_design.subset(&rows))?
            } else {
                CovarianceSystem::identity(rows.len())
            };
            let y = linalg::select_entries(data.y(), &rows);
            let fits = models
                .iter()
                .map(|m| FittedPredictor::fit(pred, &model_x(data.x(), Some(&rows), &m.columns), &y, &system))
                .collect::<cvc_core::Result<Vec<_>>>()?;
            let tests = draw_targets(design, &cluster_design, &record, shared, targets, &mut rng);
            Ok(squared_errors(&fits, models, &tests, Some(&rows)))
        })
        .collect();
    let (values, failures) = collect(results)?;
    let per_model = (0..models.len())
        .map(|m| MeanSe::from_values(&values.iter().map(|v| v[m]).collect::<Vec<_>>()))
        .collect();
    Ok(GenError { per_model, failures })
}

/// Means and spreads of one model's estimator values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub cv: MeanSe,
    pub correction: MeanSe,
    pub cv_c: MeanSe,
    pub cv_sd: Option<f64>,
    pub cv_c_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub altman: Option<MeanSe>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcv: Option<MeanSe>,
}

/// Per-replication estimates of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub model: String,
    pub cv: Vec<f64>,
    pub correction: Vec<f64>,
    pub cv_c: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub altman: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcv: Option<Vec<f64>>,
    /// Monte Carlo generalization error of the model's predictor.
    pub gen_error: Option<MeanSe>,
    pub summary: Summary,
}

impl ModelResult {
    fn new(
        model: String,
        estimates: &[CvEstimate],
        altman: Option<Vec<f64>>,
        gcv: Option<Vec<f64>>,
        gen_error: Option<MeanSe>,
    ) -> Self {
        let cv: Vec<f64> = estimates.iter().map(|e| e.cv).collect();
        let correction: Vec<f64> = estimates.iter().map(|e| e.correction).collect();
        let cv_c: Vec<f64> = estimates.iter().map(|e| e.cv_c).collect();
        let summary = Summary {
            cv: MeanSe::from_values(&cv),
            correction: MeanSe::from_values(&correction),
            cv_c: MeanSe::from_values(&cv_c),
            cv_sd: sample_sd(&cv),
            cv_c_sd: sample_sd(&cv_c),
            altman: altman.as_deref().map(MeanSe::from_values),
            gcv: gcv.as_deref().map(MeanSe::from_values),
        };
        Self {
            model,
            cv,
            correction,
            cv_c,
            altman,
            gcv,
            gen_error,
            summary,
        }
    }
}

/// Results of one predictor under one variance variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub predictor: String,
    pub variance: Variance,
    pub models: Vec<ModelResult>,
}

/// How often the criteria pick the model with the lowest generalization error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub predictor: String,
    pub variance: Variance,
    pub oracle_model: String,
    pub cv_rate: f64,
    pub cv_c_rate: f64,
    /// Model picked by each criterion, per replication.
    pub cv_choice: Vec<usize>,
    pub cv_c_choice: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub replications: usize,
    pub failures: usize,
    pub series: Vec<Series>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub agreement: Vec<Agreement>,
}

impl ExperimentReport {
    pub fn series(&self, predictor: &PredictorSpec, variance: Variance) -> Option<&Series> {
        let name = predictor.to_string();
        self.series
            .iter()
            .find(|s| s.predictor == name && s.variance == variance)
    }

    pub fn agreement(&self, predictor: &PredictorSpec, variance: Variance) -> Option<&Agreement> {
        let name = predictor.to_string();
        self.agreement
            .iter()
            .find(|a| a.predictor == name && a.variance == variance)
    }
}

/// What one replication produced.
struct Replicate {
    /// Indexed by `(predictor, variant, model)`.
    estimates: Vec<CvEstimate>,
    /// Known-variance comparators, indexed by `(predictor, model)`.
    altman: Vec<f64>,
    gcv: Vec<f64>,
    /// Conditional generalization error, indexed by `(predictor, model)`.
    oracle: Vec<f64>,
}

fn replicate(exp: &SimExperiment, rep: usize, with_oracle: bool) -> cvc_core::Result<Replicate> {
    let design = &exp.design;
    let truth = design.truth();
    let mut rng = substream(exp.seed, rep as u64, ROLE_DATA);
    let (data, record) = sim::generate_hierarchical(design, &mut rng)?;
    let n = data.len();
    let fold_seed = substream(exp.seed, rep as u64, ROLE_FOLDS).next_u64();
    let folds = exp.folds.assign(n, fold_seed)?;

    let mut specs = vec![truth];
    if let Some(method) = exp.estimate {
        let options = FitOptions {
            method,
            seed: substream(exp.seed, rep as u64, ROLE_FIT).next_u64(),
            ..FitOptions::default()
        };
        specs.push(varest::fit_variance_components(&data, &truth, &options)?.spec);
    }

    let models: Vec<DMatrix<f64>> = exp.models.iter().map(|m| model_x(data.x(), None, &m.columns)).collect();
    let mut estimates = Vec::with_capacity(exp.predictors.len() * specs.len() * models.len());
    let mut altman = Vec::new();
    let mut gcv = Vec::new();
    for pred in &exp.predictors {
        for (v, spec) in specs.iter().enumerate() {
            let shared = exp.scenario.shared_components(spec)?;
            let system = CovarianceSystem::new(spec, data.design())?;
            let conditional = covmodel::conditional_covariance(spec, data.design(), shared)?;
            for x in &models {
                let h = predictors::cv_hat_matrix_with(pred, x, &folds, &system)?;
                estimates.push(estimators::estimate_from_parts(
                    &h,
                    data.y(),
                    &conditional,
                    exp.scenario,
                )?);
                if exp.comparators && v == 0 {
                    let model_data = Dataset::new(data.y().clone(), x.clone(), data.design().clone())?;
                    let full = predictors::full_hat_matrix(pred, &model_data, spec)?;
                    altman.push(estimators::altman_estimator(&full, system.v(), data.y())?);
                    gcv.push(estimators::gcv(&full, data.y())?);
                }
            }
        }
    }

    let mut oracle = Vec::new();
    if with_oracle {
        let shared = exp.scenario.shared_components(&truth)?;
        let mut target_rng = substream(exp.seed, rep as u64, ROLE_TARGETS);
        let targets = draw_targets(design, data.design(), &record, shared, exp.targets, &mut target_rng);
        let system = CovarianceSystem::new(&truth, data.design())?;
        for pred in &exp.predictors {
            let fits = models
                .iter()
                .map(|x| FittedPredictor::fit(pred, x, data.y(), &system))
                .collect::<cvc_core::Result<Vec<_>>>()?;
            oracle.extend(squared_errors(&fits, &exp.models, &targets, None));
        }
    }
    Ok(Replicate {
        estimates,
        altman,
        gcv,
        oracle,
    })
}

fn run_replications(exp: &SimExperiment, with_oracle: bool) -> Result<(Vec<Replicate>, usize)> {
    exp.validate()?;
    let results: Vec<_> = (0..exp.replications)
        .into_par_iter()
        .map(|r| replicate(exp, r, with_oracle))
        .collect();
    collect(results)
}

fn build_series(exp: &SimExperiment, reps: &[Replicate], gen: &[Option<Vec<MeanSe>>]) -> Vec<Series> {
    let variants = exp.variants();
    let nm = exp.models.len();
    let mut series = Vec::new();
    for (p, pred) in exp.predictors.iter().enumerate() {
        for (v, &variance) in variants.iter().enumerate() {
            let models = exp
                .models
                .iter()
                .enumerate()
                .map(|(m, model)| {
                    let idx = (p * variants.len() + v) * nm + m;
                    let est: Vec<CvEstimate> = reps.iter().map(|r| r.estimates[idx]).collect();
                    let comparators = exp.comparators && v == 0;
                    let altman = comparators.then(|| reps.iter().map(|r| r.altman[p * nm + m]).collect());
                    let gcv = comparators.then(|| reps.iter().map(|r| r.gcv[p * nm + m]).collect());
                    let gen_error = gen[p].as_ref().map(|g| g[m]);
                    ModelResult::new(model.name.clone(), &est, altman, gcv, gen_error)
                })
                .collect();
            series.push(Series {
                predictor: pred.to_string(),
                variance,
                models,
            });
        }
    }
    series
}

/// Distribution of CV and CV_c over replications, with the generalization
/// error of every model estimated from independent pairs.
pub fn run_density_experiment(exp: &SimExperiment) -> Result<ExperimentReport> {
    exp.validate()?;
    let mut gen = Vec::with_capacity(exp.predictors.len());
    let mut failures = 0;
    for (p, pred) in exp.predictors.iter().enumerate() {
        let seed = substream(exp.seed, p as u64, ROLE_PAIR).next_u64();
        let g = approximate_generalization_error(
            &exp.design,
            pred,
            &exp.models,
            &exp.scenario,
            exp.gen_pairs,
            exp.targets,
            seed,
        )?;
        failures += g.failures;
        gen.push(Some(g.per_model));
    }
    let (reps, failed) = run_replications(exp, false)?;
    Ok(ExperimentReport {
        experiment: "density".into(),
        seed: exp.seed,
        replications: reps.len(),
        failures: failures + failed,
        series: build_series(exp, &reps, &gen),
        agreement: Vec::new(),
    })
}

/// Agreement of `argmin CV` and `argmin CV_c` with the model of lowest
/// generalization error.
///
/// Every replication scores its models on `targets` common test points,
/// which estimates each model's generalization error; the oracle is the
/// model with the smallest average over replications.
pub fn run_selection_experiment(exp: &SimExperiment) -> Result<ExperimentReport> {
    let (reps, failures) = run_replications(exp, true)?;
    let variants = exp.variants();
    let nm = exp.models.len();
    let mut gen = Vec::new();
    let mut oracle_model = Vec::new();
    for p in 0..exp.predictors.len() {
        let per_model: Vec<MeanSe> = (0..nm)
            .map(|m| MeanSe::from_values(&reps.iter().map(|r| r.oracle[p * nm + m]).collect::<Vec<_>>()))
            .collect();
        let means: Vec<f64> = per_model.iter().map(|g| g.mean).collect();
        oracle_model.push(estimators::argmin(&means)?);
        gen.push(Some(per_model));
    }
    let series = build_series(exp, &reps, &gen);
    let mut agreement = Vec::new();
    for (p, pred) in exp.predictors.iter().enumerate() {
        for (v, &variance) in variants.iter().enumerate() {
            let s = &series[p * variants.len() + v];
            let mut cv_choice = Vec::with_capacity(reps.len());
            let mut cv_c_choice = Vec::with_capacity(reps.len());
            for r in 0..reps.len() {
                let cv: Vec<f64> = s.models.iter().map(|m| m.cv[r]).collect();
                let cv_c: Vec<f64> = s.models.iter().map(|m| m.cv_c[r]).collect();
                cv_choice.push(estimators::argmin(&cv)?);
                cv_c_choice.push(estimators::argmin(&cv_c)?);
            }
            let rate = |c: &[usize]| c.iter().filter(|&&m| m == oracle_model[p]).count() as f64 / c.len() as f64;
            agreement.push(Agreement {
                predictor: pred.to_string(),
                variance,
                oracle_model: exp.models[oracle_model[p]].name.clone(),
                cv_rate: rate(&cv_choice),
                cv_c_rate: rate(&cv_c_choice),
                cv_choice,
                cv_c_choice,
            });
        }
    }
    Ok(ExperimentReport {
        experiment: "selection".into(),
        seed: exp.seed,
        replications: reps.len(),
        failures,
        series,
        agreement,
    })
}

/// Repeated holdout on a clustered dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSettings {
    pub models: Vec<ModelSpec>,
    pub predictor: PredictorSpec,
    /// Covariance family; its values seed the fit, or are used as is without one.
    pub family: CovarianceSpec,
    pub fit: Option<Method>,
    pub scenario: PredictionScenario,
    pub folds: FoldCount,
    pub runs: usize,
    /// Outer clusters drawn into each training set.
    pub train_clusters: usize,
    pub seed: u64,
}

/// Mean with a two-standard-error interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    /// `None` when fewer than two runs make the interval undefined.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    fn from_values(values: &[f64]) -> Self {
        let s = MeanSe::from_values(values);
        Self {
            mean: s.mean,
            lower: s.se.map(|se| s.mean - 2.0 * se),
            upper: s.se.map(|se| s.mean + 2.0 * se),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutModel {
    pub model: String,
    pub cv: Vec<f64>,
    pub correction: Vec<f64>,
    pub cv_c: Vec<f64>,
    pub test_error: Vec<f64>,
    pub cv_mean: Interval,
    pub cv_c_mean: Interval,
    pub test_error_mean: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutReport {
    pub seed: u64,
    pub runs: usize,
    pub models: Vec<HoldoutModel>,
    /// The fitted covariance of every run.
    pub fitted: Vec<String>,
}

/// The columns used by any model, in ascending order.
fn union_columns(models: &[ModelSpec]) -> Vec<usize> {
    let mut cols: Vec<usize> = models.iter().flat_map(|m| m.columns.iter().copied()).collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// Train on random whole clusters, score CV and CV_c there and the test
/// error on the remaining clusters.
///
/// When a fitting method is set, the covariance is refitted on each training
/// set using the union of the models' columns. Test predictions use the
/// scenario's cross covariance between training and test rows.
pub fn repeated_holdout_evaluation(data: &Dataset, settings: &HoldoutSettings) -> Result<HoldoutReport> {
    if settings.runs == 0 {
        return Err(RunError::config("runs must be positive"));
    }
    if settings.models.is_empty() {
        return Err(RunError::config("at least one model is required"));
    }
    let p = data.x().ncols();
    for m in &settings.models {
        if m.columns.is_empty() || m.columns.iter().any(|&c| c >= p) {
            return Err(RunError::config(format!(
                "model `{}` has columns outside 0..{p}",
                m.name
            )));
        }
    }
    let clusters = data.design().outer_clusters()?;
    if settings.train_clusters < 1 || settings.train_clusters >= clusters.len() {
        return Err(RunError::config(format!(
            "cannot train on {} of {} clusters and keep a test set",
            settings.train_clusters,
            clusters.len()
        )));
    }
    settings.scenario.shared_components(&settings.family)?;
    let union = union_columns(&settings.models);

    let run = |r: usize| -> cvc_core::Result<(Vec<CvEstimate>, Vec<f64>, CovarianceSpec)> {
        let mut rng = substream(settings.seed, r as u64, ROLE_SPLIT);
        let mut order: Vec<usize> = (0..clusters.len()).collect();
        order.shuffle(&mut rng);
        let mut train: Vec<usize> = order[..settings.train_clusters]
            .iter()
            .flat_map(|&c| clusters[c].clone())
            .collect();
        train.sort_unstable();
        let mut in_train = vec![false; data.len()];
        for &i in &train {
            in_train[i] = true;
        }
        let test: Vec<usize> = (0..data.len()).filter(|&i| !in_train[i]).collect();
        let train_data = data.subset(&train)?;

        let spec = match settings.fit {
            Some(method) => {
                let options = FitOptions {
                    method,
                    seed: rng.next_u64(),
                    ..FitOptions::default()
                };
                varest::fit_variance_components(&train_data.with_columns(&union)?, &settings.family, &options)?.spec
            }
            None => settings.family,
        };
        let shared = settings.scenario.shared_components(&spec)?;
        let signal = shared.difference(LatentSet::of(&[Latent::Noise]));
        let design = train_data.design();
        let system = CovarianceSystem::new(&spec, design)?;
        let conditional = covmodel::conditional_covariance(&spec, design, shared)?;
        let folds = settings.folds.assign(train.len(), rng.next_u64())?;
        let cross: Vec<DVector<f64>> = if settings.predictor.uses_cross_covariance() {
            test.iter()
                .map(|&t| DVector::from_fn(train.len(), |j, _| spec.entry(data.design(), signal, train[j], t)))
                .collect()
        } else {
            Vec::new()
        };
        let empty = DVector::zeros(0);

        let mut estimates = Vec::with_capacity(settings.models.len());
        let mut errors = Vec::with_capacity(settings.models.len());
        for m in &settings.models {
            let x = train_data.x().select_columns(&m.columns);
            let h = predictors::cv_hat_matrix_with(&settings.predictor, &x, &folds, &system)?;
            estimates.push(estimators::estimate_from_parts(
                &h,
                train_data.y(),
                &conditional,
                settings.scenario,
            )?);
            let fit = FittedPredictor::fit(&settings.predictor, &x, train_data.y(), &system)?;
            let mut sum = 0.0;
            for (i, &t) in test.iter().enumerate() {
                let xs: Vec<f64> = m.columns.iter().map(|&c| data.x()[(t, c)]).collect();
                let r = data.y()[t] - fit.predict(&xs, cross.get(i).unwrap_or(&empty));
                sum += r * r;
            }
            errors.push(sum / test.len() as f64);
        }
        Ok((estimates, errors, spec))
    };

    let results: Vec<_> = (0..settings.runs).into_par_iter().map(run).collect();
    let mut done = Vec::with_capacity(results.len());
    for r in results {
        done.push(r?);
    }
    let models = settings
        .models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let cv: Vec<f64> = done.iter().map(|d| d.0[m].cv).collect();
            let correction: Vec<f64> = done.iter().map(|d| d.0[m].correction).collect();
            let cv_c: Vec<f64> = done.iter().map(|d| d.0[m].cv_c).collect();
            let test_error: Vec<f64> = done.iter().map(|d| d.1[m]).collect();
            HoldoutModel {
                model: model.name.clone(),
                cv_mean: Interval::from_values(&cv),
                cv_c_mean: Interval::from_values(&cv_c),
                test_error_mean: Interval::from_values(&test_error),
                cv,
                correction,
                cv_c,
                test_error,
            }
        })
        .collect();
    Ok(HoldoutReport {
        seed: settings.seed,
        runs: settings.runs,
        models,
        fitted: done.iter().map(|d| crate::config::format_covariance(&d.2)).collect(),
    })
}
