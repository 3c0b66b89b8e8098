//! Variance-component estimation by Gaussian ML or REML.
//!
//! Fixed effects are profiled out by GLS at every candidate parameter
//! vector. The likelihood is accumulated over mutually uncorrelated blocks,
//! so clustered designs only ever factor cluster-sized matrices.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covmodel::{self, ClusterDesign, CovarianceSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{self, NelderMeadOptions};
use crate::predictors::Dataset;

/// Lower bound applied to every parameter during the search.
const PARAMETER_FLOOR: f64 = 1e-12;

/// Fitted variances below this fraction of the total variance are reported as zero.
const BOUNDARY_FRACTION: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Ml,
    #[default]
    Reml,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ml => "ml",
            Method::Reml => "reml",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(Method::Ml),
            "reml" => Ok(Method::Reml),
            other => Err(Error::UnknownParameter(other.to_string())),
        }
    }
}

/// Search coordinates for the simplex optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coordinates {
    #[default]
    Log,
    /// Parameters scaled by their initial values, searched linearly.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    /// Parameters held at their template values.
    pub fixed: Vec<String>,
    pub coordinates: Coordinates,
    /// Number of seeded starting points (the moment estimate plus perturbations).
    pub starts: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::Reml,
            fixed: Vec::new(),
            coordinates: Coordinates::Log,
            starts: 3,
            tolerance: 1e-9,
            max_iterations: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: CovarianceSpec,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub method: Method,
    /// Parameters reported as zero because the fit reached the boundary.
    pub at_boundary: Vec<&'static str>,
}

/// Parameter names of a covariance variant, in vector order.
pub fn parameter_names(spec: &CovarianceSpec) -> &'static [&'static str] {
    match spec {
        CovarianceSpec::Diagonal { .. } => &["sigma2_eps"],
        CovarianceSpec::CompoundSymmetry { .. } => &["sigma2_eps", "rho"],
        CovarianceSpec::ClusteredRandomIntercept { .. } => &["sigma2_b", "sigma2_eps"],
        CovarianceSpec::HierarchicalRandomSlope { .. } => &["sigma2_u", "sigma_b00", "sigma_b11", "sigma2_eps"],
        CovarianceSpec::ExponentialKernelNugget { .. } => &["amplitude", "lengthscale", "sigma2_nugget"],
    }
}

pub fn parameters(spec: &CovarianceSpec) -> Vec<f64> {
    match *spec {
        CovarianceSpec::Diagonal { sigma2_eps } => alloc::vec![sigma2_eps],
        CovarianceSpec::CompoundSymmetry { sigma2_eps, rho } => alloc::vec![sigma2_eps, rho],
        CovarianceSpec::ClusteredRandomIntercept { sigma2_b, sigma2_eps } => alloc::vec![sigma2_b, sigma2_eps],
        CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u,
            sigma_b,
            sigma2_eps,
        } => {
            alloc::vec![sigma2_u, sigma_b[0][0], sigma_b[1][1], sigma2_eps]
        }
        CovarianceSpec::ExponentialKernelNugget {
            amplitude,
            lengthscale,
            sigma2_nugget,
        } => {
            alloc::vec![amplitude, lengthscale, sigma2_nugget]
        }
    }
}

/// Replace the parameters of `spec` (the slope covariance's off-diagonal is kept).
pub fn with_parameters(spec: &CovarianceSpec, p: &[f64]) -> CovarianceSpec {
    match *spec {
        CovarianceSpec::Diagonal { .. } => CovarianceSpec::Diagonal { sigma2_eps: p[0] },
        CovarianceSpec::CompoundSymmetry { .. } => CovarianceSpec::CompoundSymmetry {
            sigma2_eps: p[0],
            rho: p[1],
        },
        CovarianceSpec::ClusteredRandomIntercept { .. } => CovarianceSpec::ClusteredRandomIntercept {
            sigma2_b: p[0],
            sigma2_eps: p[1],
        },
        CovarianceSpec::HierarchicalRandomSlope { sigma_b, .. } => CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u: p[0],
            sigma_b: [[p[1], sigma_b[0][1]], [sigma_b[1][0], p[2]]],
            sigma2_eps: p[3],
        },
        CovarianceSpec::ExponentialKernelNugget { .. } => CovarianceSpec::ExponentialKernelNugget {
            amplitude: p[0],
            lengthscale: p[1],
            sigma2_nugget: p[2],
        },
    }
}

fn is_noise(name: &str) -> bool {
    matches!(name, "sigma2_eps" | "sigma2_nugget")
}

fn is_variance(name: &str) -> bool {
    name != "lengthscale"
}

/// Profiled Gaussian log-likelihood over uncorrelated blocks.
struct Likelihood<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    design: &'a ClusterDesign,
    blocks: Vec<Vec<usize>>,
    x_blocks: Vec<DMatrix<f64>>,
    y_blocks: Vec<DVector<f64>>,
    method: Method,
}

impl<'a> Likelihood<'a> {
    fn new(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        design: &'a ClusterDesign,
        family: &CovarianceSpec,
        method: Method,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || design.len() != n {
            return Err(Error::DimensionMismatch {
                context: "likelihood inputs",
                expected: n,
                found: x.nrows(),
            });
        }
        family.check_design(design)?;
        let blocks = covmodel::independent_blocks(family, design)?;
        let x_blocks = blocks.iter().map(|b| linalg::select_rows(x, b)).collect();
        let y_blocks = blocks.iter().map(|b| linalg::select_entries(y, b)).collect();
        Ok(Self {
            x,
            y,
            design,
            blocks,
            x_blocks,
            y_blocks,
            method,
        })
    }

    fn evaluate(&self, spec: &CovarianceSpec) -> Option<f64> {
        let n = self.y.len();
        let p = self.x.ncols();
        let comps = spec.components();
        let mut log_det = 0.0;
        let mut xtvx = DMatrix::zeros(p, p);
        let mut xtvy = DVector::zeros(p);
        let mut ytvy = 0.0;
        for ((block, xb), yb) in self.blocks.iter().zip(&self.x_blocks).zip(&self.y_blocks) {
            let m = block.len();
            let mut v = DMatrix::zeros(m, m);
            for a in 0..m {
                for b in a..m {
                    let e = spec.entry(self.design, comps, block[a], block[b]);
                    v[(a, b)] = e;
                    v[(b, a)] = e;
                }
            }
            let chol = Cholesky::new(v)?;
            log_det += linalg::log_det(&chol);
            let vx = chol.solve(xb);
            let vy = chol.solve(yb);
            xtvx += xb.transpose() * &vx;
            xtvy += xb.transpose() * &vy;
            ytvy += yb.dot(&vy);
        }
        let (quad, log_det_a) = if p == 0 {
            (ytvy, 0.0)
        } else {
            let chol = Cholesky::new(xtvx)?;
            let beta = chol.solve(&xtvy);
            (ytvy - xtvy.dot(&beta), linalg::log_det(&chol))
        };
        let ll = match self.method {
            Method::Ml => -0.5 * (n as f64 * libm::log(2.0 * PI) + log_det + quad),
            Method::Reml => -0.5 * ((n - p) as f64 * libm::log(2.0 * PI) + log_det + log_det_a + quad),
        };
        ll.is_finite().then_some(ll)
    }
}

/// Profiled log-likelihood of `data` under `spec`.
pub fn log_likelihood(data: &Dataset, spec: &CovarianceSpec, method: Method) -> Result<f64> {
    log_likelihood_parts(data.x(), data.y(), data.design(), spec, method)
}

/// As [`log_likelihood`], also accepting a design with no fixed-effect columns.
pub fn log_likelihood_parts(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    design: &ClusterDesign,
    spec: &CovarianceSpec,
    method: Method,
) -> Result<f64> {
    spec.validate()?;
    Likelihood::new(x, y, design, spec, method)?
        .evaluate(spec)
        .ok_or(Error::NotPositiveDefinite)
}

fn residual_variance(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (n, p) = x.shape();
    if p == 0 {
        return y.norm_squared() / n as f64;
    }
    let a = x.transpose() * x;
    let rss = match Cholesky::new(a) {
        Some(chol) => (y - x * chol.solve(&x.tr_mul(y))).norm_squared(),
        None => y.norm_squared(),
    };
    rss / (n - p).max(1) as f64
}

/// Mean diagonal contribution of each parameter at unit value.
fn unit_contribution(spec: &CovarianceSpec, design: &ClusterDesign, name: &str) -> f64 {
    match (spec, name) {
        (CovarianceSpec::HierarchicalRandomSlope { .. }, "sigma_b11") => {
            let t = design.time().unwrap_or(&[]);
            let m = t.iter().map(|v| v * v).sum::<f64>() / t.len().max(1) as f64;
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
        _ => 1.0,
    }
}

fn mean_distance(design: &ClusterDesign) -> f64 {
    let Some(z) = design.coords() else { return 1.0 };
    // a prefix of the sample is enough for a starting value
    let m = z.len().min(200);
    let (mut sum, mut count) = (0.0, 0usize);
    for a in 0..m {
        for b in (a + 1)..m {
            let d = libm::hypot(z[a][0] - z[b][0], z[a][1] - z[b][1]);
            if d > 0.0 {
                sum += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

/// Method-of-moments starting point: the OLS residual variance split
/// equally over the free variance parameters.
fn moment_start(
    family: &CovarianceSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    design: &ClusterDesign,
    free: &[usize],
) -> Vec<f64> {
    let names = parameter_names(family);
    let mut params = parameters(family);
    let total = residual_variance(x, y).max(PARAMETER_FLOOR);
    let fixed_share: f64 = (0..names.len())
        .filter(|i| !free.contains(i) && is_variance(names[*i]))
        .map(|i| params[i] * unit_contribution(family, design, names[i]))
        .sum();
    let remaining = (total - fixed_share).max(0.1 * total);
    let free_variances = free.iter().filter(|&&i| is_variance(names[i])).count().max(1);
    for &i in free {
        params[i] = if is_variance(names[i]) {
            remaining / free_variances as f64 / unit_contribution(family, design, names[i])
        } else {
            mean_distance(design)
        };
    }
    params
}

/// Fit the free parameters of `family` to `data`.
pub fn fit_variance_components(data: &Dataset, family: &CovarianceSpec, options: &FitOptions) -> Result<FitResult> {
    fit_variance_components_parts(data.x(), data.y(), data.design(), family, options)
}

/// As [`fit_variance_components`], also accepting a design with no fixed-effect columns.
pub fn fit_variance_components_parts(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    design: &ClusterDesign,
    family: &CovarianceSpec,
    options: &FitOptions,
) -> Result<FitResult> {
    let names = parameter_names(family);
    for f in &options.fixed {
        if !names.contains(&f.as_str()) {
            return Err(Error::UnknownParameter(f.clone()));
        }
    }
    let free: Vec<usize> = (0..names.len())
        .filter(|&i| !options.fixed.iter().any(|f| f == names[i]))
        .collect();
    let likelihood = Likelihood::new(x, y, design, family, options.method)?;
    if free.is_empty() {
        family.validate()?;
        let ll = likelihood.evaluate(family).ok_or(Error::NotPositiveDefinite)?;
        return Ok(FitResult {
            spec: *family,
            log_likelihood: ll,
            converged: true,
            iterations: 0,
            method: options.method,
            at_boundary: Vec::new(),
        });
    }
    let n = y.len();
    if n <= x.ncols() + free.len() {
        return Err(Error::InvalidDataset(alloc::format!(
            "{n} observations cannot identify {} fixed effects and {} variance parameters",
            x.ncols(),
            free.len()
        )));
    }

    let start = moment_start(family, x, y, design, &free);
    let template = with_parameters(family, &start);
    let scale: Vec<f64> = free.iter().map(|&i| start[i]).collect();
    let to_params = |theta: &[f64]| -> Vec<f64> {
        let mut p = parameters(&template);
        for (j, &i) in free.iter().enumerate() {
            let v = match options.coordinates {
                Coordinates::Log => libm::exp(theta[j]),
                Coordinates::Raw => theta[j] * scale[j],
            };
            p[i] = v.max(PARAMETER_FLOOR);
        }
        p
    };
    let objective = |theta: &[f64]| -> f64 {
        let spec = with_parameters(family, &to_params(theta));
        if spec.validate().is_err() {
            return f64::INFINITY;
        }
        likelihood.evaluate(&spec).map_or(f64::INFINITY, |ll| -ll)
    };
    let origin: Vec<f64> = match options.coordinates {
        Coordinates::Log => scale.iter().map(|s| libm::log(*s)).collect(),
        Coordinates::Raw => alloc::vec![1.0; free.len()],
    };
    let nm = NelderMeadOptions {
        tolerance: options.tolerance,
        max_iterations: options.max_iterations,
        initial_step: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut iterations = 0;
    let mut best: Option<optim::Minimum> = None;
    for s in 0..options.starts.max(1) {
        let x0: Vec<f64> = origin
            .iter()
            .map(|&o| {
                if s == 0 {
                    return o;
                }
                let shift: f64 = rng.random_range(-1.0..1.0);
                match options.coordinates {
                    Coordinates::Log => o + shift,
                    Coordinates::Raw => o * libm::exp(shift),
                }
            })
            .collect();
        let m = optim::nelder_mead(&objective, &x0, &nm);
        iterations += m.iterations;
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    let polish = optim::nelder_mead(&objective, &best.x, &nm);
    iterations += polish.iterations;
    let final_min = if polish.value <= best.value {
        polish.clone()
    } else {
        best
    };
    if !final_min.value.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }

    let mut params = to_params(&final_min.x);
    let fitted = with_parameters(family, &params);
    let total = covariance_mean_diagonal(&fitted, design);
    let mut at_boundary = Vec::new();
    for &i in &free {
        let name = names[i];
        if is_variance(name)
            && !is_noise(name)
            && params[i] * unit_contribution(family, design, name) < BOUNDARY_FRACTION * total
        {
            params[i] = 0.0;
            at_boundary.push(name);
        }
    }
    let spec = with_parameters(family, &params);
    let log_likelihood = likelihood.evaluate(&spec).ok_or(Error::NotPositiveDefinite)?;
    Ok(FitResult {
        spec,
        log_likelihood,
        converged: polish.converged,
        iterations,
        method: options.method,
        at_boundary,
    })
}

fn covariance_mean_diagonal(spec: &CovarianceSpec, design: &ClusterDesign) -> f64 {
    let comps = spec.components();
    let n = design.len();
    (0..n).map(|i| spec.entry(design, comps, i, i)).sum::<f64>() / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_free_parameters_returns_template() {
        let n = 6;
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |i, _| i as f64);
        let data = Dataset::new(y, x, ClusterDesign::new(n)).unwrap();
        let spec = CovarianceSpec::Diagonal { sigma2_eps: 2.0 };
        let opts = FitOptions {
            fixed: vec!["sigma2_eps".into()],
            ..Default::default()
        };
        let fit = fit_variance_components(&data, &spec, &opts).unwrap();
        assert_eq!(fit.spec, spec);
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn unknown_fixed_name() {
        let n = 4;
        let data = Dataset::new(
            DVector::zeros(n),
            DMatrix::from_element(n, 1, 1.0),
            ClusterDesign::new(n),
        )
        .unwrap();
        let opts = FitOptions {
            fixed: vec!["tau".into()],
            ..Default::default()
        };
        assert_eq!(
            fit_variance_components(&data, &CovarianceSpec::Diagonal { sigma2_eps: 1.0 }, &opts).unwrap_err(),
            Error::UnknownParameter("tau".into())
        );
    }

    #[test]
    fn parameter_vector_round_trip() {
        let spec = CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u: 9.0,
            sigma_b: [[9.0, 0.5], [0.5, 1.0]],
            sigma2_eps: 1.0,
        };
        assert_eq!(with_parameters(&spec, &parameters(&spec)), spec);
        assert_eq!(parameter_names(&spec).len(), parameters(&spec).len());
    }
}
