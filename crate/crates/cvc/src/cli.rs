//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use cvc_core::covmodel::CovarianceSpec;
use cvc_core::estimators::{self, CvEstimate};
use cvc_core::predictors::{Dataset, PredictorSpec};
use cvc_core::scenario::PredictionScenario;
use cvc_core::varest::{self, FitOptions};
use serde_json::{json, Value};

use crate::config::{self, DesignConfig, ExperimentConfig, ExperimentKind};
use crate::dataio::{self, TableSchema, INTERCEPT};
use crate::error::{Result, RunError};
use crate::harness::{self, ExperimentReport, FoldCount, HoldoutSettings, ModelSpec};
use crate::report::{self, RunStamp};
use crate::standin::{ClusteredStandIn, SpatialStandIn};

#[derive(Debug, Parser)]
#[command(name = "cvc", version, about = "Bias-corrected cross-validation for correlated data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation experiment described by a JSON configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output prefix; `.json` and per-series `.csv` files are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// CV and CV_c of one model on one dataset.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compare models by CV and CV_c, optionally against repeated holdout.
    Select {
        #[command(flatten)]
        data: DataArgs,
        /// Model as `name=col+col+...` over the schema's fixed columns; repeatable.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Repeat the comparison on random training clusters and score the held-out ones.
        #[arg(long)]
        holdout_runs: Option<usize>,
        /// Clusters per training set in holdout runs.
        #[arg(long)]
        train_clusters: Option<usize>,
        /// Output prefix for the holdout `.json` and `.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Run the experiment behind one of the simulation figures.
    ReproduceFigure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=4))]
        figure: u8,
        /// Sample sizes (multiples of 50); defaults to 300, 400 and 500 for figure 2 and 400 otherwise.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Pairs for the generalization error (figures 1 to 3).
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        /// Test points per pair, or per replication for figure 4.
        #[arg(long, default_value_t = 50)]
        targets: usize,
        #[arg(long)]
        seed: u64,
        /// Skip the estimated-variance variant.
        #[arg(long)]
        no_estimate: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Print a fold assignment as `index,fold` lines.
    Folds {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: String,
        #[arg(long)]
        seed: u64,
    },
    /// Write a synthetic stand-in dataset and its schema.
    Standin {
        #[arg(value_enum)]
        kind: StandInKind,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema_out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StandInKind {
    Clustered,
    Spatial,
}

#[derive(Debug, clap::Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Covariance, e.g. `diagonal:sigma2=1` or `clustered:sigma2_b=2,sigma2_eps=1`.
    #[arg(long)]
    cov: String,
    /// ols, gls, ridge:<lambda>, blup or gpr.
    #[arg(long)]
    pred: String,
    /// all-shared, all-new or share:{u,b,s,eps}.
    #[arg(long)]
    scenario: String,
    /// Number of folds or `loo`.
    #[arg(long)]
    k: String,
    #[arg(long)]
    seed: u64,
    /// Fit the covariance parameters first (`ml` or `reml`), starting from `--cov`.
    #[arg(long)]
    fit: Option<String>,
    /// Add an intercept column even if the schema does not.
    #[arg(long)]
    intercept: bool,
}

/// Parsed data-facing arguments.
struct Prepared {
    data: Dataset,
    schema: TableSchema,
    cov: CovarianceSpec,
    pred: PredictorSpec,
    scenario: PredictionScenario,
    folds: FoldCount,
    echo: Value,
}

impl DataArgs {
    fn prepare(&self) -> Result<Prepared> {
        let mut schema = TableSchema::load(&self.schema)?;
        schema.intercept |= self.intercept;
        let data = dataio::load_csv(&self.data, &schema)?;
        let mut cov = config::parse_covariance(&self.cov)?;
        let pred = config::parse_predictor(&self.pred)?;
        let scenario = config::parse_scenario(&self.scenario)?;
        let folds: FoldCount = self.k.parse()?;
        if let Some(method) = &self.fit {
            let options = FitOptions {
                method: config::parse_method(method)?,
                seed: self.seed,
                ..FitOptions::default()
            };
            cov = varest::fit_variance_components(&data, &cov, &options)?.spec;
        }
        let echo = json!({
            "data": self.data.display().to_string(),
            "schema": schema,
            "cov": self.cov,
            "fitted_cov": config::format_covariance(&cov),
            "pred": pred.to_string(),
            "scenario": scenario.to_string(),
            "k": folds,
            "seed": self.seed,
            "fit": self.fit,
        });
        Ok(Prepared {
            data,
            schema,
            cov,
            pred,
            scenario,
            folds,
            echo,
        })
    }
}

fn estimate(p: &Prepared, columns: &[usize]) -> Result<CvEstimate> {
    let data = p.data.with_columns(columns)?;
    let folds = p.folds.assign(data.len(), p.echo["seed"].as_u64().unwrap_or(0))?;
    Ok(estimators::cvc_score(&data, &p.pred, &folds, &p.cov, &p.scenario)?)
}

fn parse_models(specs: &[String], schema: &TableSchema) -> Result<Vec<ModelSpec>> {
    let names = schema.design_columns();
    if specs.is_empty() {
        return Ok(vec![ModelSpec {
            name: "full".into(),
            columns: (0..names.len()).collect(),
        }]);
    }
    specs
        .iter()
        .map(|s| {
            let (name, cols) = s
                .split_once('=')
                .ok_or_else(|| RunError::config(format!("model `{s}` is not name=col+col")))?;
            let mut columns = Vec::new();
            if schema.intercept {
                columns.push(0);
            }
            for c in cols.split('+').map(str::trim).filter(|c| !c.is_empty()) {
                let i = schema
                    .design_index(c)
                    .ok_or_else(|| RunError::config(format!("model `{name}` uses unknown column `{c}`")))?;
                if !columns.contains(&i) {
                    columns.push(i);
                }
            }
            columns.sort_unstable();
            Ok(ModelSpec {
                name: name.trim().to_string(),
                columns,
            })
        })
        .collect()
}

fn stamp(start: Instant, disabled: bool) -> Option<RunStamp> {
    (!disabled).then(|| RunStamp::since(start))
}

fn print_experiment(report: &ExperimentReport) {
    for s in &report.series {
        println!("{} ({} variance)", s.predictor, s.variance);
        println!(
            "  {:<8} {:>10} {:>10} {:>10} {:>10} {:>16}",
            "model", "CV", "CV_c", "sd(CV_c)", "corr", "gen. error"
        );
        for m in &s.models {
            let gen = m
                .gen_error
                .map_or_else(|| "-".to_string(), |g| format!("{:.3} ± {:.3}", g.mean, g.se_or_zero()));
            println!(
                "  {:<8} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>16}",
                m.model,
                m.summary.cv.mean,
                m.summary.cv_c.mean,
                m.summary.cv_c_sd.unwrap_or(f64::NAN),
                m.summary.correction.mean,
                gen
            );
        }
    }
    for a in &report.agreement {
        println!(
            "agreement with oracle {} ({} {}): CV {:.3}, CV_c {:.3}",
            a.oracle_model, a.predictor, a.variance, a.cv_rate, a.cv_c_rate
        );
    }
}

fn run_config(cfg: &ExperimentConfig, prefix: &Path, no_timestamp: bool) -> Result<()> {
    let start = Instant::now();
    let exp = cfg.to_experiment()?;
    let report = match cfg.experiment {
        ExperimentKind::Density => harness::run_density_experiment(&exp)?,
        ExperimentKind::Selection => harness::run_selection_experiment(&exp)?,
    };
    let echo = serde_json::to_value(cfg).expect("configuration serializes");
    let paths = report::write_experiment(prefix, &echo, &report, stamp(start, no_timestamp))?;
    print_experiment(&report);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Configuration of a figure experiment at one sample size.
pub fn figure_config(
    figure: u8,
    n: usize,
    reps: usize,
    pairs: usize,
    targets: usize,
    seed: u64,
    estimate: bool,
) -> Result<ExperimentConfig> {
    if n == 0 || n % 50 != 0 {
        return Err(RunError::config(format!(
            "n = {n} is not a positive multiple of 50 (clusters of 50)"
        )));
    }
    let (experiment, models, predictors, scenario, comparators) = match figure {
        1 | 2 => (
            ExperimentKind::Density,
            vec![8],
            vec!["gls".to_string()],
            "all-new",
            true,
        ),
        3 => (
            ExperimentKind::Density,
            vec![8],
            vec!["blup".to_string(), "gls".to_string()],
            "share:u",
            false,
        ),
        4 => (
            ExperimentKind::Selection,
            (1..=8).collect(),
            vec!["blup".to_string(), "gls".to_string()],
            "share:u",
            false,
        ),
        f => return Err(RunError::config(format!("there is no figure {f}"))),
    };
    Ok(ExperimentConfig {
        experiment,
        design: DesignConfig::standard(n / 50),
        models,
        predictors,
        scenario: scenario.to_string(),
        k: FoldCount::Loo,
        replications: reps,
        estimate: estimate.then(|| "reml".to_string()),
        comparators,
        gen_pairs: pairs,
        targets,
        seed,
    })
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            out,
            no_timestamp,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let prefix = out.unwrap_or_else(|| config.with_extension(""));
            run_config(&cfg, &prefix, no_timestamp)
        }
        Command::Evaluate { data } => {
            let p = data.prepare()?;
            let columns: Vec<usize> = (0..p.data.x().ncols()).collect();
            let e = estimate(&p, &columns)?;
            let mut record = p.echo.clone();
            record["n"] = json!(p.data.len());
            record["cv"] = json!(e.cv);
            record["correction"] = json!(e.correction);
            record["cv_c"] = json!(e.cv_c);
            println!("{record}");
            println!("n = {}, K = {}, {} under {}", p.data.len(), e.k, p.pred, p.scenario);
            println!(
                "CV = {:.6}  correction = {:.6}  CV_c = {:.6}",
                e.cv, e.correction, e.cv_c
            );
            Ok(())
        }
        Command::Select {
            data,
            models,
            holdout_runs,
            train_clusters,
            out,
            no_timestamp,
        } => {
            let start = Instant::now();
            let p = data.prepare()?;
            let models = parse_models(&models, &p.schema)?;
            let estimates = models
                .iter()
                .map(|m| estimate(&p, &m.columns))
                .collect::<Result<Vec<_>>>()?;
            let best = estimators::select_model(&estimates)?;
            let cv: Vec<f64> = estimates.iter().map(|e| e.cv).collect();
            let by_cv = estimators::argmin(&cv)?;
            println!("{:<12} {:>12} {:>12} {:>12}", "model", "CV", "correction", "CV_c");
            for (m, e) in models.iter().zip(&estimates) {
                println!("{:<12} {:>12.6} {:>12.6} {:>12.6}", m.name, e.cv, e.correction, e.cv_c);
            }
            println!("selected by CV_c: {}", models[best].name);
            println!("selected by CV: {}", models[by_cv].name);
            let Some(runs) = holdout_runs else {
                return Ok(());
            };
            let clusters = p.data.design().outer_clusters()?.len();
            let settings = HoldoutSettings {
                models: models.clone(),
                predictor: p.pred,
                family: p.cov,
                fit: data.fit.as_deref().map(config::parse_method).transpose()?,
                scenario: p.scenario,
                folds: p.folds,
                runs,
                train_clusters: train_clusters.unwrap_or(clusters / 2),
                seed: data.seed,
            };
            let report = harness::repeated_holdout_evaluation(&p.data, &settings)?;
            println!("repeated holdout over {runs} runs (mean [two-SE interval])");
            println!("{:<12} {:>28} {:>28} {:>28}", "model", "CV", "CV_c", "test error");
            let show = |i: &harness::Interval| match (i.lower, i.upper) {
                (Some(l), Some(u)) => format!("{:.4} [{:.4}, {:.4}]", i.mean, l, u),
                _ => format!("{:.4} [undefined]", i.mean),
            };
            for m in &report.models {
                println!(
                    "{:<12} {:>28} {:>28} {:>28}",
                    m.model,
                    show(&m.cv_mean),
                    show(&m.cv_c_mean),
                    show(&m.test_error_mean)
                );
            }
            let pick = |f: &dyn Fn(&harness::HoldoutModel) -> f64| -> Result<String> {
                let v: Vec<f64> = report.models.iter().map(f).collect();
                Ok(report.models[estimators::argmin(&v)?].model.clone())
            };
            println!(
                "holdout selection: CV {}, CV_c {}, test error {}",
                pick(&|m| m.cv_mean.mean)?,
                pick(&|m| m.cv_c_mean.mean)?,
                pick(&|m| m.test_error_mean.mean)?
            );
            if let Some(prefix) = out {
                let mut echo = p.echo.clone();
                echo["models"] = serde_json::to_value(&models).expect("models serialize");
                echo["holdout_runs"] = json!(runs);
                echo["train_clusters"] = json!(settings.train_clusters);
                for path in report::write_holdout(&prefix, &echo, &report, stamp(start, no_timestamp))? {
                    println!("wrote {}", path.display());
                }
            }
            Ok(())
        }
        Command::ReproduceFigure {
            figure,
            n,
            reps,
            pairs,
            targets,
            seed,
            no_estimate,
            out_dir,
            no_timestamp,
        } => {
            let sizes = match (n.is_empty(), figure) {
                (false, _) => n,
                (true, 2) => vec![300, 400, 500],
                (true, _) => vec![400],
            };
            for n in sizes {
                let cfg = figure_config(figure, n, reps, pairs, targets, seed, !no_estimate)?;
                println!("figure {figure}, n = {n}");
                run_config(&cfg, &out_dir.join(format!("figure{figure}_n{n}")), no_timestamp)?;
            }
            Ok(())
        }
        Command::Folds { n, k, seed } => {
            let folds = k.parse::<FoldCount>()?.assign(n, seed)?;
            println!("index,fold");
            for (i, f) in folds.fold_of().iter().enumerate() {
                println!("{i},{f}");
            }
            Ok(())
        }
        Command::Standin {
            kind,
            seed,
            out,
            schema_out,
        } => {
            let (data, schema) = match kind {
                StandInKind::Clustered => (ClusteredStandIn::default().generate(seed)?, ClusteredStandIn::schema()),
                StandInKind::Spatial => (SpatialStandIn::default().generate(seed)?, SpatialStandIn::schema()),
            };
            dataio::write_csv(&out, &data, &schema)?;
            let text = serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n";
            std::fs::write(&schema_out, text).map_err(|e| RunError::io(&schema_out, e))?;
            println!(
                "wrote {} rows to {} ({} design columns incl. {INTERCEPT})",
                data.len(),
                out.display(),
                data.x().ncols()
            );
            Ok(())
        }
    }
}

/// Run the CLI on `args` (program name first) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
