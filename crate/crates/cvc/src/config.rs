//! JSON experiment configuration and the textual covariance syntax.

use std::path::Path;

use cvc_core::covmodel::CovarianceSpec;
use cvc_core::predictors::PredictorSpec;
use cvc_core::scenario::PredictionScenario;
use cvc_core::sim::{SimDesign, COVARIATES};
use cvc_core::varest::{self, Method};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, RunError};
use crate::harness::{self, FoldCount, SimExperiment};

/// Parse `family:name=value,...`, e.g. `diagonal:sigma2=1` or
/// `hierarchical:sigma2_u=9,sigma_b00=9,sigma_b11=1,sigma2_eps=1`.
///
/// Parameter names are those reported by the fitting routines; `sigma2` is
/// accepted for the noise variance of every family and `sigma_b01` sets the
/// slope covariance's off-diagonal. Unset parameters default to 1 (0 for
/// `sigma_b01`).
pub fn parse_covariance(s: &str) -> Result<CovarianceSpec> {
    let s = s.trim();
    let (family, params) = s.split_once(':').unwrap_or((s, ""));
    let template = match family.trim() {
        "diagonal" | "iid" => CovarianceSpec::Diagonal { sigma2_eps: 1.0 },
        "compound-symmetry" | "cs" => CovarianceSpec::CompoundSymmetry {
            sigma2_eps: 1.0,
            rho: 1.0,
        },
        "clustered" | "random-intercept" => CovarianceSpec::ClusteredRandomIntercept {
            sigma2_b: 1.0,
            sigma2_eps: 1.0,
        },
        "hierarchical" => CovarianceSpec::HierarchicalRandomSlope {
            sigma2_u: 1.0,
            sigma_b: [[1.0, 0.0], [0.0, 1.0]],
            sigma2_eps: 1.0,
        },
        "exponential" | "exp" => CovarianceSpec::ExponentialKernelNugget {
            amplitude: 1.0,
            lengthscale: 1.0,
            sigma2_nugget: 1.0,
        },
        other => return Err(RunError::config(format!("unknown covariance family `{other}`"))),
    };
    let names = varest::parameter_names(&template);
    let mut values = varest::parameters(&template);
    let mut off_diagonal = 0.0;
    for item in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| RunError::config(format!("covariance parameter `{item}` is not name=value")))?;
        let name = name.trim();
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| RunError::config(format!("covariance parameter `{name}` has non-numeric value")))?;
        if name == "sigma_b01" && matches!(template, CovarianceSpec::HierarchicalRandomSlope { .. }) {
            off_diagonal = value;
            continue;
        }
        let name = match name {
            "sigma2" | "nugget" => names
                .iter()
                .copied()
                .find(|n| n.starts_with("sigma2_eps") || *n == "sigma2_nugget"),
            _ => names.iter().copied().find(|n| *n == name),
        }
        .ok_or_else(|| RunError::config(format!("`{name}` is not a parameter of `{}`", template.name())))?;
        let i = names.iter().position(|n| *n == name).expect("name was found");
        values[i] = value;
    }
    let mut spec = varest::with_parameters(&template, &values);
    if let CovarianceSpec::HierarchicalRandomSlope { sigma_b, .. } = &mut spec {
        sigma_b[0][1] = off_diagonal;
        sigma_b[1][0] = off_diagonal;
    }
    spec.validate()?;
    Ok(spec)
}

/// Inverse of [`parse_covariance`].
pub fn format_covariance(spec: &CovarianceSpec) -> String {
    let names = varest::parameter_names(spec);
    let values = varest::parameters(spec);
    let mut parts: Vec<String> = names.iter().zip(&values).map(|(n, v)| format!("{n}={v}")).collect();
    if let CovarianceSpec::HierarchicalRandomSlope { sigma_b, .. } = spec {
        if sigma_b[0][1] != 0.0 {
            parts.push(format!("sigma_b01={}", sigma_b[0][1]));
        }
    }
    format!("{}:{}", spec.name(), parts.join(","))
}

pub fn parse_predictor(s: &str) -> Result<PredictorSpec> {
    s.parse()
        .map_err(|_| RunError::config(format!("unknown predictor `{s}`")))
}

pub fn parse_scenario(s: &str) -> Result<PredictionScenario> {
    s.parse()
        .map_err(|e| RunError::config(format!("invalid scenario `{s}`: {e}")))
}

pub fn parse_method(s: &str) -> Result<Method> {
    s.parse()
        .map_err(|_| RunError::config(format!("unknown fitting method `{s}` (expected ml or reml)")))
}

impl Serialize for FoldCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FoldCount::Loo => s.serialize_str("loo"),
            FoldCount::K(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FoldCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) => Ok(FoldCount::K(k)),
            Raw::Name(s) => s.parse().map_err(|e: RunError| D::Error::custom(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Density,
    Selection,
}

/// Hierarchical design; everything but the cluster count defaults to the
/// standard design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub clusters: usize,
    #[serde(default = "default_subclusters")]
    pub subclusters: usize,
    #[serde(default = "default_per_subcluster")]
    pub per_subcluster: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_sigma2_u")]
    pub sigma2_u: f64,
    #[serde(default = "default_sigma_b")]
    pub sigma_b: [[f64; 2]; 2],
    #[serde(default = "default_sigma2_eps")]
    pub sigma2_eps: f64,
}

fn default_subclusters() -> usize {
    5
}
fn default_per_subcluster() -> usize {
    10
}
fn default_beta() -> f64 {
    0.1
}
fn default_sigma2_u() -> f64 {
    9.0
}
fn default_sigma_b() -> [[f64; 2]; 2] {
    [[9.0, 0.0], [0.0, 1.0]]
}
fn default_sigma2_eps() -> f64 {
    1.0
}
fn default_models() -> Vec<usize> {
    (1..=8).collect()
}
fn default_predictors() -> Vec<String> {
    vec!["gls".into()]
}
fn default_scenario() -> String {
    "all-new".into()
}
fn default_k() -> FoldCount {
    FoldCount::Loo
}
fn default_replications() -> usize {
    200
}
fn default_gen_pairs() -> usize {
    200
}
fn default_targets() -> usize {
    50
}

impl DesignConfig {
    pub fn standard(clusters: usize) -> Self {
        let d = SimDesign::standard(clusters);
        Self {
            clusters,
            subclusters: d.subclusters,
            per_subcluster: d.per_subcluster,
            beta: d.beta,
            sigma2_u: d.sigma2_u,
            sigma_b: d.sigma_b,
            sigma2_eps: d.sigma2_eps,
        }
    }

    pub fn to_design(&self) -> SimDesign {
        SimDesign {
            clusters: self.clusters,
            subclusters: self.subclusters,
            per_subcluster: self.per_subcluster,
            beta: self.beta,
            sigma2_u: self.sigma2_u,
            sigma_b: self.sigma_b,
            sigma2_eps: self.sigma2_eps,
        }
    }
}

/// Configuration of `cvc simulate`. The seed is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub design: DesignConfig,
    /// Nested model indices, `1..=8`.
    #[serde(default = "default_models")]
    pub models: Vec<usize>,
    #[serde(default = "default_predictors")]
    pub predictors: Vec<String>,
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default = "default_k")]
    pub k: FoldCount,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// `ml` or `reml` to add the estimated-variance variant.
    #[serde(default)]
    pub estimate: Option<String>,
    #[serde(default)]
    pub comparators: bool,
    #[serde(default = "default_gen_pairs")]
    pub gen_pairs: usize,
    #[serde(default = "default_targets")]
    pub targets: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| RunError::config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_experiment(&self) -> Result<SimExperiment> {
        if let Some(&m) = self.models.iter().find(|&&m| m == 0 || m >= COVARIATES) {
            return Err(RunError::config(format!(
                "model index {m} is outside 1..={}",
                COVARIATES - 1
            )));
        }
        let predictors = self
            .predictors
            .iter()
            .map(|p| parse_predictor(p))
            .collect::<Result<Vec<_>>>()?;
        let exp = SimExperiment {
            design: self.design.to_design(),
            models: harness::nested_models(&self.models),
            predictors,
            scenario: parse_scenario(&self.scenario)?,
            folds: self.k,
            replications: self.replications,
            estimate: self.estimate.as_deref().map(parse_method).transpose()?,
            comparators: self.comparators,
            gen_pairs: self.gen_pairs,
            targets: self.targets,
            seed: self.seed,
        };
        exp.validate()?;
        Ok(exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_round_trip() {
        for s in [
            "diagonal:sigma2_eps=1",
            "compound-symmetry:sigma2_eps=2,rho=0.5",
            "clustered:sigma2_b=3,sigma2_eps=1",
            "hierarchical:sigma2_u=9,sigma_b00=9,sigma_b11=1,sigma2_eps=1",
            "exponential:amplitude=1,lengthscale=0.2,sigma2_nugget=0.1",
        ] {
            let spec = parse_covariance(s).unwrap();
            assert_eq!(format_covariance(&spec), s);
        }
        assert_eq!(
            parse_covariance("diagonal:sigma2=1").unwrap(),
            CovarianceSpec::Diagonal { sigma2_eps: 1.0 }
        );
        assert!(parse_covariance("diagonal:rho=1").is_err());
        assert!(parse_covariance("wavelet").is_err());
        assert!(parse_covariance("diagonal:sigma2=-1").is_err());
    }

    #[test]
    fn config_requires_seed_and_fills_defaults() {
        let missing = r#"{"experiment": "density", "design": {"clusters": 2}}"#;
        assert!(ExperimentConfig::from_json(missing).is_err());
        let cfg =
            ExperimentConfig::from_json(r#"{"experiment": "density", "design": {"clusters": 2}, "k": 5, "seed": 3}"#)
                .unwrap();
        assert_eq!(cfg.k, FoldCount::K(5));
        assert_eq!(cfg.models.len(), 8);
        let exp = cfg.to_experiment().unwrap();
        assert_eq!(exp.design.n(), 100);
        let unknown = r#"{"experiment": "density", "design": {"clusters": 2}, "seed": 3, "colour": 1}"#;
        assert!(ExperimentConfig::from_json(unknown).is_err());
    }
}
