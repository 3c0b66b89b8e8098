mod common;

use common::*;
use cvc_core::covmodel::{self, ClusterDesign, CovarianceSpec, Latent, LatentSet};
use cvc_core::estimators::{
    altman_estimator, compound_symmetry_inverse_weight, conditional_correction, cv_score, cvc_correction, cvc_score,
    expected_optimism, gcv, select_model, wcv_gls_compound_symmetry, CvEstimate,
};
use cvc_core::linalg;
use cvc_core::predictors::{
    cv_hat_matrix, full_hat_matrix, h_te_rows, loo_folds, make_folds, predictor_row, Dataset, PredictorSpec,
};
use cvc_core::scenario::PredictionScenario;
use cvc_core::sim::{draw_correlated, normal};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn hier_data(seed: u64, p: usize) -> Dataset {
    let design = hier_design(2, 2, 3);
    let n = design.len();
    let mut r = rng(seed);
    Dataset::new(random_y(n, &mut r), random_x(n, p, &mut r), design).unwrap()
}

fn share_u() -> PredictionScenario {
    PredictionScenario::sharing(LatentSet::of(&[Latent::HighLevel]))
}

#[test]
fn diagonal_covariance_leaves_cv_unchanged() {
    let design = hier_design(2, 3, 3);
    let n = design.len();
    let mut r = rng(1);
    let data = Dataset::new(random_y(n, &mut r), random_x(n, 3, &mut r), design).unwrap();
    let spec = CovarianceSpec::Diagonal { sigma2_eps: 1.7 };
    let v = covmodel::build_covariance(&spec, data.design()).unwrap();
    let preds = [
        PredictorSpec::Ols,
        PredictorSpec::Gls,
        PredictorSpec::Ridge { lambda: 0.3 },
        PredictorSpec::Blup,
    ];
    for k in [2, 5, n] {
        let folds = make_folds(n, k, 4).unwrap();
        for pred in preds {
            for scenario in [PredictionScenario::all_new(), PredictionScenario::all_shared()] {
                let est = cvc_score(&data, &pred, &folds, &spec, &scenario).unwrap();
                assert_eq!(est.correction, 0.0, "{pred} K={k} {scenario}");
                assert_eq!(est.cv_c, est.cv);
                let h = cv_hat_matrix(&pred, &data, &folds, &spec).unwrap();
                let rows = h_te_rows(&pred, &data, &folds, &spec, &scenario).unwrap();
                assert_eq!(cvc_correction(&h, &v, &rows).unwrap(), 0.0);
            }
        }
    }
}

#[test]
fn cv_equals_the_literal_fold_loop() {
    let design = ClusterDesign::new(8);
    let spec = CovarianceSpec::CompoundSymmetry {
        sigma2_eps: 1.0,
        rho: 0.6,
    };
    let mut r = rng(2);
    let data = Dataset::new(random_y(8, &mut r), random_x(8, 2, &mut r), design).unwrap();
    let v = covmodel::build_covariance(&spec, data.design()).unwrap();
    let folds = make_folds(8, 3, 5).unwrap();
    let mut total = 0.0;
    for members in folds.folds() {
        let rest: Vec<usize> = (0..8).filter(|i| !members.contains(i)).collect();
        let v_tr = linalg::select_block(&v, &rest, &rest);
        let x_tr = linalg::select_rows(data.x(), &rest);
        let y_tr = linalg::select_entries(data.y(), &rest);
        for &k in &members {
            let zero = DVector::zeros(rest.len());
            let h = predictor_row(&PredictorSpec::Gls, &x_tr, &v_tr, &data.x().row(k).transpose(), &zero).unwrap();
            total += (data.y()[k] - h.dot(&y_tr)).powi(2);
        }
    }
    let h = cv_hat_matrix(&PredictorSpec::Gls, &data, &folds, &spec).unwrap();
    assert!((cv_score(&h, data.y()).unwrap() - total / 8.0).abs() < 1e-12);
}

#[test]
fn all_shared_correction_vanishes() {
    let spec = hier_spec();
    let data = hier_data(3, 2);
    let v = covmodel::build_covariance(&spec, data.design()).unwrap();
    for folds in [loo_folds(data.len()).unwrap(), make_folds(data.len(), 4, 3).unwrap()] {
        for pred in [PredictorSpec::Gls, PredictorSpec::Blup, PredictorSpec::Ols] {
            let h = cv_hat_matrix(&pred, &data, &folds, &spec).unwrap();
            let rows = h_te_rows(&pred, &data, &folds, &spec, &PredictionScenario::all_shared()).unwrap();
            assert!(cvc_correction(&h, &v, &rows).unwrap().abs() < 1e-10);
            let est = cvc_score(&data, &pred, &folds, &spec, &PredictionScenario::all_shared()).unwrap();
            assert!(est.correction.abs() < 1e-10);
        }
    }
}

#[test]
fn compound_symmetry_closed_form_matches_dense_route() {
    let mut r = rng(4);
    let x = random_x(10, 2, &mut r);
    let (sigma2, rho) = (1.3, 0.7);
    let spec = CovarianceSpec::CompoundSymmetry {
        sigma2_eps: sigma2,
        rho,
    };
    let data = Dataset::new(random_y(10, &mut r), x.clone(), ClusterDesign::new(10)).unwrap();
    let folds = loo_folds(10).unwrap();
    let h = cv_hat_matrix(&PredictorSpec::Gls, &data, &folds, &spec).unwrap();
    let v = covmodel::build_covariance(&spec, data.design()).unwrap();
    let rows = h_te_rows(
        &PredictorSpec::Gls,
        &data,
        &folds,
        &spec,
        &PredictionScenario::all_new(),
    )
    .unwrap();
    let dense = cvc_correction(&h, &v, &rows).unwrap();
    let closed = wcv_gls_compound_symmetry(&x, sigma2, rho).unwrap();
    assert!((dense - closed).abs() < 1e-8, "{dense} vs {closed}");
    assert_eq!(wcv_gls_compound_symmetry(&x, sigma2, 0.0).unwrap(), 0.0);
}

#[test]
fn compound_symmetry_inverse_identity() {
    let (sigma2, rho) = (1.0, 0.4);
    for m in 2..=20 {
        // complement of one point inside an m-point system has m - 1 points
        let size = m - 1;
        let v = DMatrix::from_fn(size, size, |a, b| rho + if a == b { sigma2 } else { 0.0 });
        let lhs = v.try_inverse().unwrap() * DVector::from_element(size, rho);
        let w = rho / (sigma2 + rho * (m - 1) as f64);
        assert!((lhs.add_scalar(-w)).amax() < 1e-10, "m={m}");
        assert_eq!(compound_symmetry_inverse_weight(m - 1, sigma2, rho), w);
    }
}

#[test]
fn new_realization_correction_is_full_trace() {
    let spec = hier_spec();
    let data = hier_data(5, 3);
    let folds = make_folds(data.len(), 3, 8).unwrap();
    let h = cv_hat_matrix(&PredictorSpec::Gls, &data, &folds, &spec).unwrap();
    let v = covmodel::build_covariance(&spec, data.design()).unwrap();
    let est = cvc_score(
        &data,
        &PredictorSpec::Gls,
        &folds,
        &spec,
        &PredictionScenario::all_new(),
    )
    .unwrap();
    let trace: f64 = (0..data.len()).map(|i| (h.matrix().row(i) * v.column(i))[0]).sum();
    assert!((est.correction - 2.0 * trace / data.len() as f64).abs() < 1e-12);
    assert!(est.correction > 0.0);
}

#[test]
fn expected_optimism_with_iid_noise() {
    let mut r = rng(6);
    let data = Dataset::new(random_y(9, &mut r), random_x(9, 3, &mut r), ClusterDesign::new(9)).unwrap();
    let spec = CovarianceSpec::Diagonal { sigma2_eps: 2.0 };
    let h = full_hat_matrix(&PredictorSpec::Ols, &data, &spec).unwrap();
    let v = DMatrix::identity(9, 9) * 2.0;
    let w = expected_optimism(&h, &v).unwrap();
    assert!((w - 2.0 * 2.0 / 9.0 * h.trace()).abs() < 1e-12);
    assert!((w - 2.0 * 2.0 * 3.0 / 9.0).abs() < 1e-10);
    assert_eq!(expected_optimism(&DMatrix::zeros(9, 9), &v).unwrap(), 0.0);
}

#[test]
fn expected_optimism_matches_its_simulated_definition() {
    let mut r = rng(7);
    let n = 6;
    let h = DMatrix::from_fn(n, n, |_, _| 0.3 * normal(&mut r));
    let a = DMatrix::from_fn(n, n, |_, _| normal(&mut r));
    let v = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
    let root = linalg::psd_sqrt(&v);
    let draws = 100_000;
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y = draw_correlated(&root, &mut r);
        let fresh = draw_correlated(&root, &mut r);
        let fit = &h * &y;
        values.push(((&fresh - &fit).norm_squared() - (&y - &fit).norm_squared()) / n as f64);
    }
    let mean = values.iter().sum::<f64>() / draws as f64;
    let sd = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    let w = expected_optimism(&h, &v).unwrap();
    assert!((mean - w).abs() < 3.0 * sd / (draws as f64).sqrt(), "{mean} vs {w}");
}

#[test]
fn altman_reduces_to_gcv_with_identity_covariance() {
    let mut r = rng(8);
    let data = Dataset::new(random_y(7, &mut r), random_x(7, 2, &mut r), ClusterDesign::new(7)).unwrap();
    let h = full_hat_matrix(
        &PredictorSpec::Ridge { lambda: 0.5 },
        &data,
        &CovarianceSpec::Diagonal { sigma2_eps: 1.0 },
    )
    .unwrap();
    let a = altman_estimator(&h, &DMatrix::identity(7, 7), data.y()).unwrap();
    assert!((a - gcv(&h, data.y()).unwrap()).abs() < 1e-14);
}

fn estimates(values: &[f64]) -> Vec<CvEstimate> {
    values
        .iter()
        .map(|&v| CvEstimate::new(v, 0.0, 2, PredictionScenario::all_new()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn theorem_and_conditional_forms_agree_for_gls(seed in any::<u64>(), k in prop::sample::select(vec![3usize, 4, 6, 12])) {
        let spec = hier_spec();
        let data = hier_data(seed, 2);
        let folds = if k == 12 { loo_folds(12).unwrap() } else { make_folds(12, k, seed).unwrap() };
        let v = covmodel::build_covariance(&spec, data.design()).unwrap();
        let h = cv_hat_matrix(&PredictorSpec::Gls, &data, &folds, &spec).unwrap();
        for (scenario, given) in [
            (PredictionScenario::all_new(), LatentSet::empty()),
            (share_u(), LatentSet::of(&[Latent::HighLevel])),
            (PredictionScenario::sharing(LatentSet::of(&[Latent::HighLevel, Latent::LowLevel])),
             LatentSet::of(&[Latent::HighLevel, Latent::LowLevel])),
        ] {
            let rows = h_te_rows(&PredictorSpec::Gls, &data, &folds, &spec, &scenario).unwrap();
            let theorem = cvc_correction(&h, &v, &rows).unwrap();
            let cond = covmodel::conditional_covariance(&spec, data.design(), given).unwrap();
            let conditional = conditional_correction(&h, &cond).unwrap();
            prop_assert!((theorem - conditional).abs() < 1e-8, "{} vs {}", theorem, conditional);
        }
    }

    #[test]
    fn correction_ignores_the_response(seed in any::<u64>()) {
        let spec = hier_spec();
        let data = hier_data(seed, 2);
        let folds = make_folds(12, 4, seed).unwrap();
        let other = data.with_response(random_y(12, &mut rng(seed ^ 0xabc))).unwrap();
        for pred in [PredictorSpec::Gls, PredictorSpec::Blup] {
            let a = cvc_score(&data, &pred, &folds, &spec, &share_u()).unwrap();
            let b = cvc_score(&other, &pred, &folds, &spec, &share_u()).unwrap();
            prop_assert_eq!(a.correction.to_bits(), b.correction.to_bits());
        }
    }

    #[test]
    fn scaling_response_and_covariance_scales_every_score(seed in any::<u64>(), c in 0.2f64..5.0) {
        let spec = hier_spec();
        let scaled = CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u: 9.0 * c * c,
            sigma_b: [[9.0 * c * c, 0.0], [0.0, c * c]],
            sigma2_eps: c * c,
        };
        let data = hier_data(seed, 2);
        let folds = make_folds(12, 3, seed).unwrap();
        let bigger = data.with_response(data.y() * c).unwrap();
        for pred in [PredictorSpec::Gls, PredictorSpec::Blup] {
            let a = cvc_score(&data, &pred, &folds, &spec, &share_u()).unwrap();
            let b = cvc_score(&bigger, &pred, &folds, &scaled, &share_u()).unwrap();
            let c2 = c * c;
            prop_assert!((b.cv - c2 * a.cv).abs() <= 1e-9 * (1.0 + b.cv.abs()));
            prop_assert!((b.correction - c2 * a.correction).abs() <= 1e-9 * (1.0 + b.correction.abs()));
            prop_assert!((b.cv_c - c2 * a.cv_c).abs() <= 1e-9 * (1.0 + b.cv_c.abs()));
            prop_assert_eq!(a.cv_c, a.cv + a.correction);
        }
    }

    #[test]
    fn selection_ignores_a_common_shift(values in prop::collection::vec(-50.0f64..50.0, 1..10), shift in -10.0f64..10.0) {
        let base = select_model(&estimates(&values)).unwrap();
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let moved = select_model(&estimates(&shifted)).unwrap();
        // a shift can only merge near-ties through rounding
        prop_assert!(moved == base || (shifted[moved] - shifted[base]).abs() < 1e-12);
    }
}
