//! Monte Carlo reference value for the CV bias of a linear predictor.

use cvc_core::covmodel::{self, ClusterDesign, CovarianceSpec, Latent, LatentSet};
use cvc_core::linalg;
use cvc_core::predictors::{self, CovarianceSystem, FoldAssignment, PredictorSpec};
use cvc_core::scenario::PredictionScenario;
use cvc_core::sim::{draw_correlated, normal, substream};
use cvc_core::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::stats::MeanSe;

/// Smallest replication count accepted by [`mc_wcv_oracle`].
pub const MIN_REPS: usize = 100;

/// Simulated `E[(y_te − ŷ_te)²] − E[CV]` at fixed covariates.
///
/// Each replication draws every latent component of `spec` jointly for the
/// `n` observations and scores CV. For each observation `k` it then draws
/// one target at `k`'s design position: components in the scenario's shared
/// set keep their realization at `k`, the others are redrawn with their
/// marginal variance, and the noise is always fresh. The target is predicted
/// by its scenario weight row from the complement of `k`'s fold. The
/// replication value is the mean squared target error minus CV.
#[allow(clippy::too_many_arguments)]
pub fn mc_wcv_oracle(
    spec: &CovarianceSpec,
    design: &ClusterDesign,
    x: &DMatrix<f64>,
    pred: &PredictorSpec,
    folds: &FoldAssignment,
    scenario: &PredictionScenario,
    reps: usize,
    seed: u64,
) -> Result<MeanSe> {
    if reps < MIN_REPS {
        return Err(Error::InvalidParameter {
            name: "reps",
            value: reps as f64,
        });
    }
    let n = x.nrows();
    let shared = scenario.shared_components(spec)?;
    let system = CovarianceSystem::new(spec, design)?;
    let h = predictors::cv_hat_matrix_with(pred, x, folds, &system)?;
    let rows = predictors::h_te_rows_with(pred, x, design, folds, spec, &system, scenario)?;
    let components: Vec<(Latent, DMatrix<f64>, DVector<f64>)> = spec
        .components()
        .iter()
        .map(|c| {
            let cov = covmodel::component_covariance(spec, design, LatentSet::of(&[c]))?;
            Ok((c, linalg::psd_sqrt(&cov), cov.diagonal()))
        })
        .collect::<Result<_>>()?;
    let mean = x * DVector::from_element(x.ncols(), 1.0);

    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, rep as u64, 0);
            let draws: Vec<DVector<f64>> = components
                .iter()
                .map(|(_, root, _)| draw_correlated(root, &mut rng))
                .collect();
            let y = draws.iter().fold(mean.clone(), |acc, d| acc + d);
            let cv = (&y - h.matrix() * &y).norm_squared() / n as f64;
            let mut err = 0.0;
            for (k, row) in rows.iter().enumerate() {
                let mut y_te = mean[k];
                for ((c, _, var), d) in components.iter().zip(&draws) {
                    y_te += if *c != Latent::Noise && shared.contains(*c) {
                        d[k]
                    } else {
                        var[k].max(0.0).sqrt() * normal(&mut rng)
                    };
                }
                let r = y_te - row.weights.dot(&y);
                err += r * r;
            }
            err / n as f64 - cv
        })
        .collect();
    Ok(MeanSe::from_values(&values))
}
