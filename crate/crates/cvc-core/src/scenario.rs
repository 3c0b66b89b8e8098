use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::covmodel::{CovarianceSpec, Latent, LatentSet};
use crate::error::{Error, Result};

/// Which latent realizations of the training data persist for the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    AllShared,
    AllNew,
    Components(LatentSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalShift {
    #[default]
    None,
    Shifted,
}

/// Relation between the training sample and the prediction target.
///
/// Targets are always assumed to share the training marginal distribution;
/// a declared marginal shift is rejected by every consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionScenario {
    pub sharing: Sharing,
    pub marginal_shift: MarginalShift,
}

impl PredictionScenario {
    pub fn all_shared() -> Self {
        Self {
            sharing: Sharing::AllShared,
            marginal_shift: MarginalShift::None,
        }
    }

    pub fn all_new() -> Self {
        Self {
            sharing: Sharing::AllNew,
            marginal_shift: MarginalShift::None,
        }
    }

    pub fn sharing(components: LatentSet) -> Self {
        Self {
            sharing: Sharing::Components(components),
            marginal_shift: MarginalShift::None,
        }
    }

    /// Resolve the set of shared components against a covariance model.
    pub fn shared_components(&self, spec: &CovarianceSpec) -> Result<LatentSet> {
        if self.marginal_shift != MarginalShift::None {
            return Err(Error::MarginalShift);
        }
        let available = spec.components();
        match self.sharing {
            Sharing::AllShared => Ok(available),
            Sharing::AllNew => Ok(LatentSet::empty()),
            Sharing::Components(set) => {
                for c in set.iter() {
                    if !available.contains(c) {
                        return Err(Error::UnknownComponent(c));
                    }
                }
                Ok(set)
            }
        }
    }

    /// True when some, but not all, components are shared.
    pub fn is_partial(&self, spec: &CovarianceSpec) -> Result<bool> {
        let shared = self.shared_components(spec)?;
        Ok(!shared.is_empty() && shared != spec.components())
    }
}

impl fmt::Display for PredictionScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sharing {
            Sharing::AllShared => f.write_str("all-shared"),
            Sharing::AllNew => f.write_str("all-new"),
            Sharing::Components(set) => {
                f.write_str("share:")?;
                for (i, c) in set.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(c.symbol())?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for PredictionScenario {
    type Err = Error;

    /// Accepts `all-shared`, `all-new` and `share:{u,b,...}` (braces optional).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "all-shared" => return Ok(Self::all_shared()),
            "all-new" => return Ok(Self::all_new()),
            _ => {}
        }
        let list = s
            .strip_prefix("share:")
            .ok_or_else(|| Error::UnknownComponentName(s.to_string()))?;
        let list = list.trim_start_matches('{').trim_end_matches('}');
        let mut set = LatentSet::empty();
        for name in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            set = set.with(Latent::from_symbol(name)?);
        }
        Ok(Self::sharing(set))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    #[test]
    fn parses_vocabulary() {
        assert_eq!(
            "all-new".parse::<PredictionScenario>().unwrap(),
            PredictionScenario::all_new()
        );
        let s: PredictionScenario = "share:{u}".parse().unwrap();
        assert_eq!(s, PredictionScenario::sharing(LatentSet::of(&[Latent::HighLevel])));
        let s: PredictionScenario = "share:u,b".parse().unwrap();
        assert_eq!(format!("{s}"), "share:u,b");
        assert!("share:z".parse::<PredictionScenario>().is_err());
        assert!("sometimes".parse::<PredictionScenario>().is_err());
    }

    #[test]
    fn rejects_components_missing_from_model() {
        let spec = CovarianceSpec::Diagonal { sigma2_eps: 1.0 };
        let s = PredictionScenario::sharing(LatentSet::of(&[Latent::HighLevel]));
        assert_eq!(
            s.shared_components(&spec).unwrap_err(),
            Error::UnknownComponent(Latent::HighLevel)
        );
    }

    #[test]
    fn marginal_shift_is_refused() {
        let mut s = PredictionScenario::all_new();
        s.marginal_shift = MarginalShift::Shifted;
        let spec = CovarianceSpec::Diagonal { sigma2_eps: 1.0 };
        assert_eq!(s.shared_components(&spec).unwrap_err(), Error::MarginalShift);
    }
}
