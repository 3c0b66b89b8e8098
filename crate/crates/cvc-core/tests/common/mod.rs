#![allow(dead_code)]

use cvc_core::covmodel::{ClusterDesign, CovarianceSpec};
use cvc_core::sim::{normal, substream};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    substream(seed, 0, 7)
}

/// `i` clusters of `j` subclusters with `r` time points each.
pub fn hier_design(i: usize, j: usize, r: usize) -> ClusterDesign {
    let (mut outer, mut inner, mut time) = (Vec::new(), Vec::new(), Vec::new());
    for a in 0..i {
        for b in 0..j {
            for k in 1..=r {
                outer.push(a as u32);
                inner.push((a * j + b) as u32);
                time.push(k as f64);
            }
        }
    }
    ClusterDesign::new(outer.len())
        .with_level("cluster", outer)
        .unwrap()
        .with_level("subcluster", inner)
        .unwrap()
        .with_time(time)
        .unwrap()
}

pub fn clustered_design(sizes: &[usize]) -> ClusterDesign {
    let labels: Vec<u32> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat(c as u32).take(s))
        .collect();
    ClusterDesign::new(labels.len()).with_level("cluster", labels).unwrap()
}

pub fn hier_spec() -> CovarianceSpec {
    CovarianceSpec::HierarchicalRandomSlope {
        sigma2_u: 9.0,
        sigma_b: [[9.0, 0.0], [0.0, 1.0]],
        sigma2_eps: 1.0,
    }
}

/// Intercept plus `p - 1` standard normal columns.
pub fn random_x(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal(rng) })
}

pub fn random_y(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
