//! Synthetic hierarchical data: clusters of subclusters observed over time,
//! with a random cluster intercept and random subcluster intercept and slope.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covmodel::{ClusterDesign, CovarianceSpec, Latent, LatentSet};
use crate::error::{Error, Result};
use crate::predictors::Dataset;

/// Number of covariates: intercept, time, and seven cluster-correlated ones.
pub const COVARIATES: usize = 9;

const CORRELATED: usize = COVARIATES - 2;

/// Independent RNG stream for `(master seed, replication, role)`.
pub fn substream(master: u64, replication: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replication.wrapping_mul(16).wrapping_add(role));
    rng
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw `R z` with `z` standard normal, so the result has covariance `R Rᵀ`.
pub fn draw_correlated<R: Rng + ?Sized>(root: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| normal(rng));
    root * z
}

/// Hierarchical simulation design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDesign {
    pub clusters: usize,
    pub subclusters: usize,
    pub per_subcluster: usize,
    /// Common coefficient of all nine covariates.
    pub beta: f64,
    pub sigma2_u: f64,
    pub sigma_b: [[f64; 2]; 2],
    pub sigma2_eps: f64,
}

impl SimDesign {
    /// Five subclusters of ten observations per cluster, unit-scale covariates,
    /// `σ_u² = 9`, `Σ_b = diag(9, 1)`, `σ_ε² = 1`, coefficients 0.1.
    pub fn standard(clusters: usize) -> Self {
        Self {
            clusters,
            subclusters: 5,
            per_subcluster: 10,
            beta: 0.1,
            sigma2_u: 9.0,
            sigma_b: [[9.0, 0.0], [0.0, 1.0]],
            sigma2_eps: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.clusters * self.subclusters * self.per_subcluster
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.subclusters == 0 || self.per_subcluster == 0 {
            return Err(Error::InvalidDesign(alloc::string::String::from(
                "all counts must be positive",
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "beta",
                value: self.beta,
            });
        }
        // variances of zero are allowed here for noiseless checks
        for (name, v) in [("sigma2_u", self.sigma2_u), ("sigma2_eps", self.sigma2_eps)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter { name, value: v });
            }
        }
        let probe = CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u: 0.0,
            sigma_b: self.sigma_b,
            sigma2_eps: 1.0,
        };
        probe.validate()
    }

    /// The covariance model the generator follows.
    pub fn truth(&self) -> CovarianceSpec {
        CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u: self.sigma2_u,
            sigma_b: self.sigma_b,
            sigma2_eps: self.sigma2_eps,
        }
    }

    /// Observation `(i, j, k)` with `k` counted from zero.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.subclusters + j) * self.per_subcluster + k
    }

    /// `(cluster, subcluster, time)` of an observation; time runs `1..=R`.
    pub fn position(&self, obs: usize) -> (usize, usize, f64) {
        let k = obs % self.per_subcluster;
        let sub = obs / self.per_subcluster;
        (sub / self.subclusters, sub % self.subclusters, (k + 1) as f64)
    }

    pub fn cluster_design(&self) -> Result<ClusterDesign> {
        self.validate()?;
        let n = self.n();
        let pos: Vec<_> = (0..n).map(|o| self.position(o)).collect();
        ClusterDesign::new(n)
            .with_level("cluster", pos.iter().map(|p| p.0 as u32).collect())?
            .with_level(
                "subcluster",
                pos.iter().map(|p| (p.0 * self.subclusters + p.1) as u32).collect(),
            )?
            .with_time(pos.iter().map(|p| p.2).collect())
    }

    fn slope_root(&self) -> [[f64; 2]; 2] {
        // lower Cholesky factor of Σ_b, tolerating a singular matrix
        let a = self.sigma_b[0][0].max(0.0);
        let l00 = libm::sqrt(a);
        let l10 = if l00 > 0.0 { self.sigma_b[1][0] / l00 } else { 0.0 };
        let l11 = libm::sqrt((self.sigma_b[1][1] - l10 * l10).max(0.0));
        [[l00, 0.0], [l10, l11]]
    }

    fn draw_b<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let l = self.slope_root();
        let (z0, z1) = (normal(rng), normal(rng));
        [l[0][0] * z0, l[1][0] * z0 + l[1][1] * z1]
    }
}

/// Latent draws behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    /// Cluster intercepts `u_i`.
    pub u: Vec<f64>,
    /// Subcluster intercept and slope `b_ij`, indexed by `i * J + j`.
    pub b: Vec<[f64; 2]>,
    /// Cluster-level covariate shifts `η_i`, one per correlated covariate.
    pub eta: Vec<[f64; CORRELATED]>,
}

fn response(design: &SimDesign, x: &[f64], u: f64, b: [f64; 2], eps: f64) -> f64 {
    let fixed: f64 = x.iter().sum::<f64>() * design.beta;
    fixed + u + b[0] + x[1] * b[1] + eps
}

fn covariates<R: Rng + ?Sized>(time: f64, eta: &[f64; CORRELATED], rng: &mut R) -> [f64; COVARIATES] {
    let mut x = [0.0; COVARIATES];
    x[0] = 1.0;
    x[1] = time;
    for r in 0..CORRELATED {
        x[2 + r] = eta[r] + normal(rng);
    }
    x
}

/// Draw one training sample. Returns the data (all nine covariates) and the
/// latent realizations needed to draw targets that share some of them.
pub fn generate_hierarchical<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<(Dataset, LatentRecord)> {
    let cluster_design = design.cluster_design()?;
    let (i_n, j_n) = (design.clusters, design.subclusters);
    let su = libm::sqrt(design.sigma2_u);
    let se = libm::sqrt(design.sigma2_eps);
    let u: Vec<f64> = (0..i_n).map(|_| su * normal(rng)).collect();
    let b: Vec<[f64; 2]> = (0..i_n * j_n).map(|_| design.draw_b(rng)).collect();
    let eta: Vec<[f64; CORRELATED]> = (0..i_n).map(|_| core::array::from_fn(|_| normal(rng))).collect();
    let n = design.n();
    let mut x = DMatrix::zeros(n, COVARIATES);
    let mut y = DVector::zeros(n);
    for obs in 0..n {
        let (i, j, t) = design.position(obs);
        let row = covariates(t, &eta[i], rng);
        for (c, v) in row.iter().enumerate() {
            x[(obs, c)] = *v;
        }
        y[obs] = response(design, &row, u[i], b[i * j_n + j], se * normal(rng));
    }
    let data = Dataset::new(y, x, cluster_design)?;
    Ok((data, LatentRecord { u, b, eta }))
}

/// A new observation at the design position of `slot`.
///
/// Components in `shared` keep the training realization of the slot's
/// cluster (`u`, together with the covariate shifts `η`) or subcluster (`b`);
/// the rest are redrawn. Observation-level covariate noise and `ε` are
/// always fresh.
pub fn draw_target<R: Rng + ?Sized>(
    design: &SimDesign,
    record: &LatentRecord,
    shared: LatentSet,
    slot: usize,
    rng: &mut R,
) -> ([f64; COVARIATES], f64) {
    let (i, j, t) = design.position(slot);
    let keep_u = shared.contains(Latent::HighLevel);
    let u = if keep_u {
        record.u[i]
    } else {
        libm::sqrt(design.sigma2_u) * normal(rng)
    };
    let b = if shared.contains(Latent::LowLevel) {
        record.b[i * design.subclusters + j]
    } else {
        design.draw_b(rng)
    };
    let eta = if keep_u {
        record.eta[i]
    } else {
        core::array::from_fn(|_| normal(rng))
    };
    let x = covariates(t, &eta, rng);
    let y = response(design, &x, u, b, libm::sqrt(design.sigma2_eps) * normal(rng));
    (x, y)
}

/// Columns of the `m`-th nested model (`m = 1..=8`): intercept, time and the
/// first `m − 1` correlated covariates.
pub fn nested_columns(m: usize) -> Vec<usize> {
    (0..(m + 1).min(COVARIATES)).collect()
}
