//! Structural covariance models.
//!
//! Every supported model is a sum of independent latent contributions
//! (cluster effects, subcluster effects, a spatial field, observation noise).
//! Full, conditional and cross covariances are all assembled from the same
//! per-component entry function, so conditioning on a component simply drops
//! its term.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scenario::PredictionScenario;

/// Latent source of covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Latent {
    /// High-level cluster effects `u`.
    HighLevel,
    /// Low-level (subcluster) effects `b`.
    LowLevel,
    /// Spatial random field `s`.
    Spatial,
    /// Observation noise `eps`.
    Noise,
}

impl Latent {
    pub const ALL: [Latent; 4] = [Latent::HighLevel, Latent::LowLevel, Latent::Spatial, Latent::Noise];

    pub fn symbol(self) -> &'static str {
        match self {
            Latent::HighLevel => "u",
            Latent::LowLevel => "b",
            Latent::Spatial => "s",
            Latent::Noise => "eps",
        }
    }

    pub fn from_symbol(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(Latent::HighLevel),
            "b" => Ok(Latent::LowLevel),
            "s" => Ok(Latent::Spatial),
            "eps" | "e" | "epsilon" => Ok(Latent::Noise),
            other => Err(Error::UnknownComponentName(String::from(other))),
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Latent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A set of latent components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct LatentSet(u8);

impl LatentSet {
    pub const fn empty() -> Self {
        LatentSet(0)
    }

    pub fn of(items: &[Latent]) -> Self {
        items.iter().fold(Self::empty(), |s, &c| s.with(c))
    }

    pub fn with(self, c: Latent) -> Self {
        LatentSet(self.0 | c.bit())
    }

    pub fn contains(self, c: Latent) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn union(self, other: Self) -> Self {
        LatentSet(self.0 | other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        LatentSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Latent> {
        Latent::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    name: String,
    labels: Vec<u32>,
}

/// Grouping, time and location metadata for `n` observations.
///
/// Levels are ordered outermost first; labels of an inner level must be
/// nested within the enclosing level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDesign {
    n: usize,
    levels: Vec<Level>,
    time: Option<Vec<f64>>,
    coords: Option<Vec<[f64; 2]>>,
}

impl ClusterDesign {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            levels: Vec::new(),
            time: None,
            coords: None,
        }
    }

    pub fn with_level(mut self, name: impl Into<String>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "cluster level labels",
                expected: self.n,
                found: labels.len(),
            });
        }
        let name = name.into();
        if let Some(outer) = self.levels.last() {
            let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
            for (obs, (&inner, &out)) in labels.iter().zip(&outer.labels).enumerate() {
                let prev = *parent.entry(inner).or_insert(out);
                if prev != out {
                    return Err(Error::InvalidDesign(format!(
                        "level `{name}` label {inner} at observation {obs} is not nested in level `{}`",
                        outer.name
                    )));
                }
            }
        }
        self.levels.push(Level { name, labels });
        Ok(self)
    }

    pub fn with_time(mut self, time: Vec<f64>) -> Result<Self> {
        if time.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "time values",
                expected: self.n,
                found: time.len(),
            });
        }
        if let Some(bad) = time.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "time",
                value: *bad,
            });
        }
        self.time = Some(time);
        Ok(self)
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "coordinates",
                expected: self.n,
                found: coords.len(),
            });
        }
        if let Some(bad) = coords.iter().flatten().find(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "coordinate",
                value: *bad,
            });
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_name(&self, level: usize) -> &str {
        &self.levels[level].name
    }

    pub fn labels(&self, level: usize) -> &[u32] {
        &self.levels[level].labels
    }

    pub fn time(&self) -> Option<&[f64]> {
        self.time.as_deref()
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Restrict the design to the given observation indices (in order).
    pub fn subset(&self, rows: &[usize]) -> ClusterDesign {
        ClusterDesign {
            n: rows.len(),
            levels: self
                .levels
                .iter()
                .map(|l| Level {
                    name: l.name.clone(),
                    labels: rows.iter().map(|&r| l.labels[r]).collect(),
                })
                .collect(),
            time: self.time.as_ref().map(|t| rows.iter().map(|&r| t[r]).collect()),
            coords: self.coords.as_ref().map(|c| rows.iter().map(|&r| c[r]).collect()),
        }
    }

    /// Distinct labels of the outermost level, in order of first appearance.
    pub fn outer_clusters(&self) -> Result<Vec<Vec<usize>>> {
        let level = self.levels.first().ok_or(Error::MissingDesignField("cluster level"))?;
        Ok(group_by_label(&level.labels))
    }
}

fn group_by_label(labels: &[u32]) -> Vec<Vec<usize>> {
    let mut index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (obs, &l) in labels.iter().enumerate() {
        let g = *index.entry(l).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(obs);
    }
    groups
}

/// Parametric covariance model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceSpec {
    /// `sigma2_eps * I`.
    Diagonal { sigma2_eps: f64 },
    /// `sigma2_eps * I + rho * 1 1ᵀ`.
    CompoundSymmetry { sigma2_eps: f64, rho: f64 },
    /// Random intercept per outermost cluster.
    ClusteredRandomIntercept { sigma2_b: f64, sigma2_eps: f64 },
    /// Random intercept `u` per outer cluster plus a random intercept and
    /// time slope per subcluster with covariance `sigma_b`.
    HierarchicalRandomSlope {
        sigma2_u: f64,
        sigma_b: [[f64; 2]; 2],
        sigma2_eps: f64,
    },
    /// `amplitude * exp(-|z - z'| / lengthscale)` plus a nugget on the diagonal.
    ExponentialKernelNugget {
        amplitude: f64,
        lengthscale: f64,
        sigma2_nugget: f64,
    },
}

impl CovarianceSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceSpec::Diagonal { .. } => "diagonal",
            CovarianceSpec::CompoundSymmetry { .. } => "compound-symmetry",
            CovarianceSpec::ClusteredRandomIntercept { .. } => "clustered",
            CovarianceSpec::HierarchicalRandomSlope { .. } => "hierarchical",
            CovarianceSpec::ExponentialKernelNugget { .. } => "exponential",
        }
    }

    /// Latent components present under this variant.
    ///
    /// The compound-symmetry and single-level clustered models express their
    /// shared effect as the high-level component `u`.
    pub fn components(&self) -> LatentSet {
        use Latent::*;
        match self {
            CovarianceSpec::Diagonal { .. } => LatentSet::of(&[Noise]),
            CovarianceSpec::CompoundSymmetry { .. } => LatentSet::of(&[HighLevel, Noise]),
            CovarianceSpec::ClusteredRandomIntercept { .. } => LatentSet::of(&[HighLevel, Noise]),
            CovarianceSpec::HierarchicalRandomSlope { .. } => LatentSet::of(&[HighLevel, LowLevel, Noise]),
            CovarianceSpec::ExponentialKernelNugget { .. } => LatentSet::of(&[Spatial, Noise]),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        match *self {
            CovarianceSpec::Diagonal { sigma2_eps }
            | CovarianceSpec::CompoundSymmetry { sigma2_eps, .. }
            | CovarianceSpec::ClusteredRandomIntercept { sigma2_eps, .. }
            | CovarianceSpec::HierarchicalRandomSlope { sigma2_eps, .. } => sigma2_eps,
            CovarianceSpec::ExponentialKernelNugget { sigma2_nugget, .. } => sigma2_nugget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn nonneg(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, value: v })
            }
        }
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, value: v })
            }
        }
        match *self {
            CovarianceSpec::Diagonal { sigma2_eps } => positive("sigma2_eps", sigma2_eps),
            CovarianceSpec::CompoundSymmetry { sigma2_eps, rho } => {
                positive("sigma2_eps", sigma2_eps)?;
                nonneg("rho", rho)
            }
            CovarianceSpec::ClusteredRandomIntercept { sigma2_b, sigma2_eps } => {
                positive("sigma2_eps", sigma2_eps)?;
                nonneg("sigma2_b", sigma2_b)
            }
            CovarianceSpec::HierarchicalRandomSlope {
                sigma2_u,
                sigma_b,
                sigma2_eps,
            } => {
                positive("sigma2_eps", sigma2_eps)?;
                nonneg("sigma2_u", sigma2_u)?;
                nonneg("sigma_b[0][0]", sigma_b[0][0])?;
                nonneg("sigma_b[1][1]", sigma_b[1][1])?;
                if !sigma_b[0][1].is_finite() || sigma_b[0][1] != sigma_b[1][0] {
                    return Err(Error::InvalidParameter {
                        name: "sigma_b[0][1]",
                        value: sigma_b[0][1],
                    });
                }
                let det = sigma_b[0][0] * sigma_b[1][1] - sigma_b[0][1] * sigma_b[1][0];
                let scale = sigma_b[0][0] * sigma_b[1][1];
                if det < -linalg::PSD_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::NotPositiveSemidefinite {
                        min_eigenvalue: det,
                        max_eigenvalue: sigma_b[0][0].max(sigma_b[1][1]),
                    });
                }
                Ok(())
            }
            CovarianceSpec::ExponentialKernelNugget {
                amplitude,
                lengthscale,
                sigma2_nugget,
            } => {
                nonneg("amplitude", amplitude)?;
                positive("lengthscale", lengthscale)?;
                positive("sigma2_nugget", sigma2_nugget)
            }
        }
    }

    /// Check that `design` carries the fields this variant reads.
    pub fn check_design(&self, design: &ClusterDesign) -> Result<()> {
        match self {
            CovarianceSpec::Diagonal { .. } | CovarianceSpec::CompoundSymmetry { .. } => Ok(()),
            CovarianceSpec::ClusteredRandomIntercept { .. } => {
                if design.level_count() < 1 {
                    return Err(Error::MissingDesignField("cluster level"));
                }
                Ok(())
            }
            CovarianceSpec::HierarchicalRandomSlope { .. } => {
                if design.level_count() < 2 {
                    return Err(Error::MissingDesignField("subcluster level"));
                }
                if design.time().is_none() {
                    return Err(Error::MissingDesignField("time"));
                }
                Ok(())
            }
            CovarianceSpec::ExponentialKernelNugget { .. } => {
                if design.coords().is_none() {
                    return Err(Error::MissingDesignField("coordinates"));
                }
                Ok(())
            }
        }
    }

    /// `K_exp(d)` for the spatial variant, zero otherwise.
    pub fn kernel(&self, d: f64) -> f64 {
        match *self {
            CovarianceSpec::ExponentialKernelNugget {
                amplitude, lengthscale, ..
            } => amplitude * libm::exp(-d / lengthscale),
            _ => 0.0,
        }
    }

    /// Contribution of a single component to `Cov(y_a, y_b)`.
    ///
    /// The design must already have passed [`CovarianceSpec::check_design`].
    pub fn component_entry(&self, design: &ClusterDesign, c: Latent, a: usize, b: usize) -> f64 {
        let same_level = |level: usize| design.levels[level].labels[a] == design.levels[level].labels[b];
        match (*self, c) {
            (_, Latent::Noise) => {
                if a == b {
                    self.noise_variance()
                } else {
                    0.0
                }
            }
            (CovarianceSpec::CompoundSymmetry { rho, .. }, Latent::HighLevel) => rho,
            (CovarianceSpec::ClusteredRandomIntercept { sigma2_b, .. }, Latent::HighLevel) => {
                if same_level(0) {
                    sigma2_b
                } else {
                    0.0
                }
            }
            (CovarianceSpec::HierarchicalRandomSlope { sigma2_u, .. }, Latent::HighLevel) => {
                if same_level(0) {
                    sigma2_u
                } else {
                    0.0
                }
            }
            (CovarianceSpec::HierarchicalRandomSlope { sigma_b, .. }, Latent::LowLevel) => {
                if same_level(0) && same_level(1) {
                    let t = design.time.as_ref().expect("checked design");
                    let (ka, kb) = (t[a], t[b]);
                    sigma_b[0][0] + sigma_b[0][1] * kb + sigma_b[1][0] * ka + sigma_b[1][1] * ka * kb
                } else {
                    0.0
                }
            }
            (CovarianceSpec::ExponentialKernelNugget { .. }, Latent::Spatial) => {
                let z = design.coords.as_ref().expect("checked design");
                self.kernel(distance(z[a], z[b]))
            }
            _ => 0.0,
        }
    }

    /// Sum of the contributions of the components in `set` to `Cov(y_a, y_b)`.
    pub fn entry(&self, design: &ClusterDesign, set: LatentSet, a: usize, b: usize) -> f64 {
        set.iter().map(|c| self.component_entry(design, c, a, b)).sum()
    }

    fn check_components(&self, set: LatentSet) -> Result<()> {
        let have = self.components();
        match set.difference(have).iter().next() {
            Some(c) => Err(Error::UnknownComponent(c)),
            None => Ok(()),
        }
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn same_coords(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits()
}

fn symmetric_from(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = f(a, b);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

fn prepare(spec: &CovarianceSpec, design: &ClusterDesign) -> Result<()> {
    spec.validate()?;
    spec.check_design(design)
}

/// Covariance contributed by the components in `set` only.
pub fn component_covariance(spec: &CovarianceSpec, design: &ClusterDesign, set: LatentSet) -> Result<DMatrix<f64>> {
    prepare(spec, design)?;
    spec.check_components(set)?;
    Ok(symmetric_from(design.len(), |a, b| spec.entry(design, set, a, b)))
}

/// Full `Cov(y, y)` under `spec`, checked for positive semidefiniteness.
pub fn build_covariance(spec: &CovarianceSpec, design: &ClusterDesign) -> Result<DMatrix<f64>> {
    let v = component_covariance(spec, design, spec.components())?;
    for block in independent_blocks(spec, design)? {
        if block.len() > 1 {
            linalg::check_psd(&linalg::select_block(&v, &block, &block))?;
        }
    }
    Ok(v)
}

/// `K_exp(0)` minus the mean kernel value over unordered pairs of
/// observations at distinct coordinates.
pub fn colocation_excess(spec: &CovarianceSpec, design: &ClusterDesign) -> Result<f64> {
    prepare(spec, design)?;
    let z = design.coords().ok_or(Error::MissingDesignField("coordinates"))?;
    let (mut sum, mut count) = (0.0, 0usize);
    for a in 0..z.len() {
        for b in (a + 1)..z.len() {
            if !same_coords(z[a], z[b]) {
                sum += spec.kernel(distance(z[a], z[b]));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidDesign(String::from(
            "no pair of observations at distinct coordinates",
        )));
    }
    Ok(spec.kernel(0.0) - sum / count as f64)
}

/// `Cov(y, y | given)`: the covariance left after conditioning on the
/// components in `given`.
///
/// For the spatial model, conditioning on the field `s` keeps the excess
/// correlation of co-located observations: entry
/// `K_exp(0) - mean_{z_j != z_j'} K_exp(z_j - z_j')` for pairs with identical
/// coordinates and zero otherwise.
pub fn conditional_covariance(spec: &CovarianceSpec, design: &ClusterDesign, given: LatentSet) -> Result<DMatrix<f64>> {
    prepare(spec, design)?;
    spec.check_components(given)?;
    let remaining = spec.components().difference(given);
    let mut m = symmetric_from(design.len(), |a, b| spec.entry(design, remaining, a, b));
    if given.contains(Latent::Spatial) {
        let excess = colocation_excess(spec, design)?;
        let z = design.coords().expect("checked design");
        for a in 0..design.len() {
            for b in 0..design.len() {
                if same_coords(z[a], z[b]) {
                    m[(a, b)] += excess;
                }
            }
        }
    }
    Ok(m)
}

/// Cross covariance between every observation and observation `target`
/// under the scenario's shared components; entry `target` is zero.
pub(crate) fn cross_covariance_full(
    spec: &CovarianceSpec,
    design: &ClusterDesign,
    shared: LatentSet,
    target: usize,
) -> DVector<f64> {
    DVector::from_fn(design.len(), |j, _| {
        if j == target {
            0.0
        } else {
            spec.entry(design, shared, j, target)
        }
    })
}

/// `Cov(y_tr, y_te)` for the target observation `target`, where the training
/// rows are all other observations (length `n - 1`, in original order).
pub fn cross_covariance(
    spec: &CovarianceSpec,
    design: &ClusterDesign,
    scenario: &PredictionScenario,
    target: usize,
) -> Result<DVector<f64>> {
    prepare(spec, design)?;
    let shared = scenario.shared_components(spec)?;
    if target >= design.len() {
        return Err(Error::DimensionMismatch {
            context: "target index",
            expected: design.len(),
            found: target,
        });
    }
    let full = cross_covariance_full(spec, design, shared, target);
    let rows: Vec<usize> = (0..design.len()).filter(|&j| j != target).collect();
    Ok(linalg::select_entries(&full, &rows))
}

/// Partition of observations into groups that are mutually uncorrelated
/// under `spec`.
pub fn independent_blocks(spec: &CovarianceSpec, design: &ClusterDesign) -> Result<Vec<Vec<usize>>> {
    spec.check_design(design)?;
    let n = design.len();
    Ok(match spec {
        CovarianceSpec::Diagonal { .. } => (0..n).map(|i| vec![i]).collect(),
        CovarianceSpec::CompoundSymmetry { .. } | CovarianceSpec::ExponentialKernelNugget { .. } => {
            vec![(0..n).collect()]
        }
        CovarianceSpec::ClusteredRandomIntercept { .. } | CovarianceSpec::HierarchicalRandomSlope { .. } => {
            design.outer_clusters()?
        }
    })
}
