use cvc_core::covmodel::{build_covariance, Latent, LatentSet};
use cvc_core::sim::{draw_target, generate_hierarchical, nested_columns, substream, SimDesign, COVARIATES};
use nalgebra::DVector;

/// Residual `y − Xβ` of a generated sample.
fn residual(design: &SimDesign, seed: u64, rep: u64) -> DVector<f64> {
    let (data, _) = generate_hierarchical(design, &mut substream(seed, rep, 0)).unwrap();
    let beta = DVector::from_element(COVARIATES, design.beta);
    data.y() - data.x() * beta
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn empirical_covariance_matches_the_model() {
    let design = SimDesign {
        clusters: 2,
        subclusters: 2,
        per_subcluster: 3,
        ..SimDesign::standard(2)
    };
    let v = build_covariance(&design.truth(), &design.cluster_design().unwrap()).unwrap();
    let reps = 4000;
    let draws: Vec<DVector<f64>> = (0..reps).map(|r| residual(&design, 17, r)).collect();
    let last = design.n() - 1;
    // diagonal, same subcluster, same cluster only, different clusters, a late-time pair
    for (a, b) in [(0, 0), (0, 2), (1, 4), (0, last), (2, 2), (4, 5)] {
        let products: Vec<f64> = draws.iter().map(|d| d[a] * d[b]).collect();
        let (mean, se) = mean_and_se(&products);
        assert!(
            (mean - v[(a, b)]).abs() < 3.0 * se,
            "({a},{b}): {mean} vs {} (se {se})",
            v[(a, b)]
        );
    }
}

#[test]
fn noiseless_design_is_the_fixed_part() {
    let design = SimDesign {
        sigma2_u: 0.0,
        sigma_b: [[0.0, 0.0], [0.0, 0.0]],
        sigma2_eps: 0.0,
        ..SimDesign::standard(2)
    };
    assert!(residual(&design, 3, 0).amax() < 1e-12);
}

#[test]
fn shared_targets_keep_their_realizations() {
    let design = SimDesign::standard(2);
    let mut rng = substream(5, 0, 0);
    let (_, record) = generate_hierarchical(&design, &mut rng).unwrap();
    let shared = LatentSet::of(&[Latent::HighLevel, Latent::LowLevel]);
    let slot = design.index(1, 3, 4);
    // with ε and the covariate noise removed, the target is fully determined
    let quiet = SimDesign {
        sigma2_eps: 0.0,
        ..design
    };
    let (x, y) = draw_target(&quiet, &record, shared, slot, &mut substream(5, 1, 0));
    let b = record.b[design.subclusters + 3];
    let expected = design.beta * x.iter().sum::<f64>() + record.u[1] + b[0] + 5.0 * b[1];
    assert!((y - expected).abs() < 1e-12);
    assert_eq!(x[1], 5.0);
}

#[test]
fn standard_sizes() {
    assert_eq!(SimDesign::standard(6).n(), 300);
    assert_eq!(SimDesign::standard(8).n(), 400);
    assert_eq!(SimDesign::standard(10).n(), 500);
    assert_eq!(nested_columns(8), (0..COVARIATES).collect::<Vec<_>>());
}
