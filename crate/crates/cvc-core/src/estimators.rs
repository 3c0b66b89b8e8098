//! CV, its bias correction and the in-sample comparators.

use nalgebra::{DMatrix, DVector};

use crate::covmodel::{self, CovarianceSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::predictors::{self, CovarianceSystem, CvHatMatrix, Dataset, FoldAssignment, HteRow, PredictorSpec};
use crate::scenario::PredictionScenario;

/// Denominators closer to zero than this are rejected.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// CV, its correction and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvEstimate {
    pub cv: f64,
    pub correction: f64,
    pub cv_c: f64,
    pub k: usize,
    pub scenario: PredictionScenario,
}

impl CvEstimate {
    pub fn new(cv: f64, correction: f64, k: usize, scenario: PredictionScenario) -> Self {
        Self {
            cv,
            correction,
            cv_c: cv + correction,
            k,
            scenario,
        }
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, context: &'static str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            found: m.nrows(),
        });
    }
    Ok(())
}

/// `(1/n) ‖y − H_cv y‖²`.
pub fn cv_score(h: &CvHatMatrix, y: &DVector<f64>) -> Result<f64> {
    let n = h.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "response length",
            expected: n,
            found: y.len(),
        });
    }
    let r = y - h.matrix() * y;
    Ok(r.norm_squared() / n as f64)
}

/// `(2/n) [tr(H_cv V) − Σ_i h_te,i · c_te,i]`, summing one target row per
/// observation so that each fold contributes in proportion to its size.
pub fn cvc_correction(h: &CvHatMatrix, v: &DMatrix<f64>, hte: &[HteRow]) -> Result<f64> {
    let n = h.len();
    check_square(v, n, "covariance")?;
    if hte.len() != n {
        return Err(Error::DimensionMismatch {
            context: "target rows",
            expected: n,
            found: hte.len(),
        });
    }
    let mut cross = 0.0;
    for row in hte {
        if row.weights.len() != n || row.cross_cov.len() != n {
            return Err(Error::DimensionMismatch {
                context: "target row",
                expected: n,
                found: row.weights.len(),
            });
        }
        cross += row.weights.dot(&row.cross_cov);
    }
    Ok(2.0 / n as f64 * (linalg::trace_product(h.matrix(), v) - cross))
}

/// `(2/n) tr(H_cv C)` for the conditional covariance `C = Cov(y, y | shared)`.
pub fn conditional_correction(h: &CvHatMatrix, conditional: &DMatrix<f64>) -> Result<f64> {
    let n = h.len();
    check_square(conditional, n, "conditional covariance")?;
    Ok(2.0 / n as f64 * linalg::trace_product(h.matrix(), conditional))
}

/// CV and CV_c from a prepared `H_cv` and conditional covariance.
pub fn estimate_from_parts(
    h: &CvHatMatrix,
    y: &DVector<f64>,
    conditional: &DMatrix<f64>,
    scenario: PredictionScenario,
) -> Result<CvEstimate> {
    let cv = cv_score(h, y)?;
    let correction = conditional_correction(h, conditional)?;
    Ok(CvEstimate::new(cv, correction, h.folds().k(), scenario))
}

/// CV and CV_c for one dataset, predictor and scenario.
///
/// The correction is computed as `(2/n) tr(H_cv Cov(y, y | shared))`, which
/// reduces to `(2/n) tr(H_cv V)` when nothing is shared and to zero when
/// everything is.
pub fn cvc_score(
    data: &Dataset,
    pred: &PredictorSpec,
    folds: &FoldAssignment,
    cov: &CovarianceSpec,
    scenario: &PredictionScenario,
) -> Result<CvEstimate> {
    let shared = scenario.shared_components(cov)?;
    let h = predictors::cv_hat_matrix(pred, data, folds, cov)?;
    let conditional = covmodel::conditional_covariance(cov, data.design(), shared)?;
    estimate_from_parts(&h, data.y(), &conditional, *scenario)
}

/// Same as [`cvc_score`] with a prepared covariance system.
pub fn cvc_score_with(
    data: &Dataset,
    pred: &PredictorSpec,
    folds: &FoldAssignment,
    system: &CovarianceSystem,
    conditional: &DMatrix<f64>,
    scenario: PredictionScenario,
) -> Result<CvEstimate> {
    let h = predictors::cv_hat_matrix_with(pred, data.x(), folds, system)?;
    estimate_from_parts(&h, data.y(), conditional, scenario)
}

/// Weight `ρ / (σ² + ρ m)` with `V_m⁻¹ (ρ 1) = weight · 1` for the
/// `m × m` compound-symmetry matrix `σ² I + ρ 1 1ᵀ`.
pub fn compound_symmetry_inverse_weight(m: usize, sigma2_eps: f64, rho: f64) -> f64 {
    rho / (sigma2_eps + rho * m as f64)
}

/// LOO GLS correction under compound symmetry for new realizations, from
/// the closed-form inverse of `V_{-k}`:
/// `(2/n) ρ/(σ²+ρ(n−1)) Σ_k x_kᵀ (X_{-k}ᵀ V_{-k}⁻¹ X_{-k})⁻¹ X_{-k}ᵀ 1`.
pub fn wcv_gls_compound_symmetry(x: &DMatrix<f64>, sigma2_eps: f64, rho: f64) -> Result<f64> {
    CovarianceSpec::CompoundSymmetry { sigma2_eps, rho }.validate()?;
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::FoldCount { k: n, n });
    }
    let weight = compound_symmetry_inverse_weight(n - 1, sigma2_eps, rho);
    if weight == 0.0 {
        return Ok(0.0);
    }
    let gram = x.transpose() * x;
    let total = DVector::from_fn(p, |j, _| x.column(j).sum());
    let mut acc = 0.0;
    for k in 0..n {
        let x_k = x.row(k).transpose();
        let s = &total - &x_k;
        // σ² A_{-k} = X_{-k}ᵀX_{-k} − w s sᵀ with w = ρ/(σ²+ρ(n−1))
        let a = (&gram - &x_k * x_k.transpose() - weight * &s * s.transpose()) / sigma2_eps;
        let chol = linalg::normal_factor(&a)?;
        acc += x_k.dot(&chol.solve(&s));
    }
    Ok(2.0 / n as f64 * weight * acc)
}

/// In-sample expected optimism `(2/n) tr(H V)`.
pub fn expected_optimism(h: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let n = h.nrows();
    check_square(h, n, "hat matrix")?;
    check_square(v, n, "covariance")?;
    Ok(2.0 / n as f64 * linalg::trace_product(h, v))
}

fn deflated_rss(h: &DMatrix<f64>, y: &DVector<f64>, effective: f64) -> Result<f64> {
    let n = h.nrows();
    check_square(h, n, "hat matrix")?;
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "response length",
            expected: n,
            found: y.len(),
        });
    }
    let denom = 1.0 - effective / n as f64;
    if !(denom.abs() > DENOMINATOR_FLOOR) {
        return Err(Error::DegenerateDenominator(denom));
    }
    let r = y - h * y;
    Ok(r.norm_squared() / n as f64 / (denom * denom))
}

/// `(‖y − H y‖²/n) / (1 − tr(H V)/n)²`.
pub fn altman_estimator(h: &DMatrix<f64>, v: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_square(v, h.nrows(), "covariance")?;
    deflated_rss(h, y, linalg::trace_product(h, v))
}

/// Generalized cross-validation `(‖y − H y‖²/n) / (1 − tr(H)/n)²`.
pub fn gcv(h: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    deflated_rss(h, y, h.trace())
}

/// Index of the smallest value; ties go to the earliest index.
pub fn argmin(values: &[f64]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v < values[b]) => {}
            _ if v.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best.ok_or(Error::EmptyModelList)
}

/// Model with the smallest CV_c.
pub fn select_model(estimates: &[CvEstimate]) -> Result<usize> {
    let values: alloc::vec::Vec<f64> = estimates.iter().map(|e| e.cv_c).collect();
    argmin(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::ClusterDesign;
    use crate::predictors::loo_folds;
    use alloc::vec;

    #[test]
    fn two_point_cv() {
        let h = CvHatMatrix::from_parts(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            loo_folds(2).unwrap(),
        )
        .unwrap();
        assert_eq!(cv_score(&h, &DVector::from_vec(vec![1.0, 3.0])).unwrap(), 4.0);
        assert_eq!(cv_score(&h, &DVector::from_vec(vec![2.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn select_model_ties_and_order() {
        let s = PredictionScenario::all_new();
        let e = |v| CvEstimate::new(v, 0.0, 2, s);
        assert_eq!(select_model(&[e(5.0), e(4.0), e(6.0)]).unwrap(), 1);
        assert_eq!(select_model(&[e(4.0), e(4.0)]).unwrap(), 0);
        assert_eq!(select_model(&[]).unwrap_err(), Error::EmptyModelList);
    }

    #[test]
    fn zero_hat_comparators() {
        let h = DMatrix::zeros(3, 3);
        let y = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        assert_eq!(gcv(&h, &y).unwrap(), 3.0);
        assert_eq!(altman_estimator(&h, &DMatrix::identity(3, 3), &y).unwrap(), 3.0);
        assert_eq!(expected_optimism(&h, &DMatrix::identity(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_denominator() {
        let h = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(gcv(&h, &y), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn closed_form_inverse_weight() {
        // V_2 = I + 11ᵀ; V_2⁻¹ 1 = 1/3 · 1
        assert!((compound_symmetry_inverse_weight(2, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            wcv_gls_compound_symmetry(&DMatrix::from_element(4, 1, 1.0), 1.0, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn diagonal_correction_vanishes() {
        let n = 5;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(n, |i, _| (i * i) as f64);
        let data = Dataset::new(y, x, ClusterDesign::new(n)).unwrap();
        let spec = CovarianceSpec::Diagonal { sigma2_eps: 2.0 };
        let e = cvc_score(
            &data,
            &PredictorSpec::Gls,
            &loo_folds(n).unwrap(),
            &spec,
            &PredictionScenario::all_new(),
        )
        .unwrap();
        assert_eq!(e.correction, 0.0);
        assert_eq!(e.cv_c, e.cv);
    }
}
