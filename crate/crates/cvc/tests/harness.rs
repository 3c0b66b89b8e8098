use cvc::harness::{
    approximate_generalization_error, nested_models, run_density_experiment, run_selection_experiment, FoldCount,
    ModelSpec, SimExperiment, Variance,
};
use cvc::oracle::mc_wcv_oracle;
use cvc_core::covmodel::{ClusterDesign, CovarianceSpec};
use cvc_core::estimators::cvc_score;
use cvc_core::predictors::{loo_folds, make_folds, Dataset, PredictorSpec};
use cvc_core::scenario::PredictionScenario;
use cvc_core::sim::{normal, substream, SimDesign};
use cvc_core::varest::Method;
use nalgebra::{DMatrix, DVector};

fn small_design() -> SimDesign {
    SimDesign {
        clusters: 2,
        subclusters: 2,
        per_subcluster: 5,
        ..SimDesign::standard(2)
    }
}

fn small_experiment() -> SimExperiment {
    SimExperiment {
        design: small_design(),
        models: nested_models(&[1, 3]),
        predictors: vec![PredictorSpec::Gls],
        scenario: PredictionScenario::all_new(),
        folds: FoldCount::Loo,
        replications: 6,
        estimate: None,
        comparators: true,
        gen_pairs: 100,
        targets: 4,
        seed: 31,
    }
}

#[test]
fn iid_generalization_error_has_a_closed_form() {
    // intercept-only OLS on n − 1 iid unit-variance points: 1 + 1/(n − 1)
    let design = SimDesign {
        clusters: 2,
        subclusters: 2,
        per_subcluster: 5,
        beta: 0.0,
        sigma2_u: 0.0,
        sigma_b: [[0.0, 0.0], [0.0, 0.0]],
        sigma2_eps: 1.0,
    };
    let model = [ModelSpec {
        name: "mean".into(),
        columns: vec![0],
    }];
    let g = approximate_generalization_error(
        &design,
        &PredictorSpec::Ols,
        &model,
        &PredictionScenario::all_new(),
        2000,
        10,
        4,
    )
    .unwrap();
    let n = design.n() as f64;
    let expected = 1.0 + 1.0 / (n - 1.0);
    let est = g.per_model[0];
    assert_eq!(g.failures, 0);
    assert!(
        (est.mean - expected).abs() < 3.0 * est.se.unwrap(),
        "{} vs {expected}",
        est.mean
    );
}

#[test]
fn too_few_pairs_are_rejected() {
    let r = approximate_generalization_error(
        &small_design(),
        &PredictorSpec::Gls,
        &nested_models(&[1]),
        &PredictionScenario::all_new(),
        50,
        4,
        1,
    );
    assert!(r.is_err());
}

#[test]
fn one_replication_gives_arrays_of_length_one() {
    let exp = SimExperiment {
        replications: 1,
        ..small_experiment()
    };
    let report = run_density_experiment(&exp).unwrap();
    assert_eq!(report.replications, 1);
    for s in &report.series {
        for m in &s.models {
            assert_eq!(m.cv.len(), 1);
            assert_eq!(m.cv_c.len(), 1);
            assert!(m.summary.cv_sd.is_none());
            assert!(m.summary.cv.se.is_none());
        }
    }
}

#[test]
fn density_report_layout() {
    let exp = SimExperiment {
        estimate: Some(Method::Reml),
        ..small_experiment()
    };
    let report = run_density_experiment(&exp).unwrap();
    assert_eq!(report.failures, 0);
    assert_eq!(report.series.len(), 2);
    let known = report.series(&PredictorSpec::Gls, Variance::Known).unwrap();
    let estimated = report.series(&PredictorSpec::Gls, Variance::Estimated).unwrap();
    assert!(known
        .models
        .iter()
        .all(|m| m.gen_error.is_some() && m.altman.is_some() && m.gcv.is_some()));
    assert!(estimated.models.iter().all(|m| m.altman.is_none()));
    for m in &known.models {
        for r in 0..m.cv.len() {
            assert!((m.cv_c[r] - m.cv[r] - m.correction[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn single_model_always_agrees_with_the_oracle() {
    let exp = SimExperiment {
        models: nested_models(&[2]),
        ..small_experiment()
    };
    let report = run_selection_experiment(&exp).unwrap();
    let a = report.agreement(&PredictorSpec::Gls, Variance::Known).unwrap();
    assert_eq!(a.cv_rate, 1.0);
    assert_eq!(a.cv_c_rate, 1.0);
    assert_eq!(a.oracle_model, "m2");
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let exp = small_experiment();
    let a = run_density_experiment(&exp).unwrap();
    let b = run_density_experiment(&exp).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| run_density_experiment(&exp)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let other = run_density_experiment(&SimExperiment { seed: 32, ..exp }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn invalid_experiments_are_rejected() {
    let base = small_experiment();
    assert!(run_density_experiment(&SimExperiment {
        replications: 0,
        ..base.clone()
    })
    .is_err());
    assert!(run_density_experiment(&SimExperiment {
        models: vec![],
        ..base.clone()
    })
    .is_err());
    assert!(run_density_experiment(&SimExperiment {
        folds: FoldCount::K(1),
        ..base.clone()
    })
    .is_err());
    let bad = ModelSpec {
        name: "x".into(),
        columns: vec![12],
    };
    assert!(run_density_experiment(&SimExperiment {
        models: vec![bad],
        ..base
    })
    .is_err());
}

fn clustered(sizes: &[usize], seed: u64) -> (ClusterDesign, DMatrix<f64>) {
    let labels: Vec<u32> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c as u32, s))
        .collect();
    let n = labels.len();
    let design = ClusterDesign::new(n).with_level("cluster", labels).unwrap();
    let mut rng = substream(seed, 0, 7);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { normal(&mut rng) });
    (design, x)
}

#[test]
fn oracle_bias_vanishes_for_independent_errors() {
    let (design, x) = clustered(&[4, 4, 4], 1);
    let spec = CovarianceSpec::Diagonal { sigma2_eps: 2.0 };
    let folds = make_folds(12, 3, 5).unwrap();
    let bias = mc_wcv_oracle(
        &spec,
        &design,
        &x,
        &PredictorSpec::Ols,
        &folds,
        &PredictionScenario::all_new(),
        20000,
        2,
    )
    .unwrap();
    assert!(
        bias.mean.abs() < 3.0 * bias.se.unwrap(),
        "{} ± {}",
        bias.mean,
        bias.se.unwrap()
    );
}

#[test]
fn oracle_bias_matches_the_correction() {
    let (design, x) = clustered(&[3, 4, 5], 2);
    let spec = CovarianceSpec::ClusteredRandomIntercept {
        sigma2_b: 2.0,
        sigma2_eps: 1.0,
    };
    let folds = loo_folds(12).unwrap();
    for scenario in [PredictionScenario::all_new(), "share:u".parse().unwrap()] {
        let bias = mc_wcv_oracle(&spec, &design, &x, &PredictorSpec::Gls, &folds, &scenario, 20000, 3).unwrap();
        let data = Dataset::new(DVector::zeros(12), x.clone(), design.clone()).unwrap();
        let analytic = cvc_score(&data, &PredictorSpec::Gls, &folds, &spec, &scenario)
            .unwrap()
            .correction;
        let se = bias.se.unwrap();
        assert!(
            (bias.mean - analytic).abs() < 3.0 * se,
            "{scenario}: {} ± {se} vs {analytic}",
            bias.mean
        );
    }
}
