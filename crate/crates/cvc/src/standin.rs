//! Synthetic stand-ins for clustered and spatially clustered tabular data.

use cvc_core::covmodel::ClusterDesign;
use cvc_core::linalg;
use cvc_core::predictors::Dataset;
use cvc_core::sim::{draw_correlated, normal, substream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dataio::TableSchema;
use crate::error::Result;
use crate::harness::ModelSpec;

/// Customers with repeated transactions. The response depends on the
/// transaction-level `category` only; the six customer-level attributes are
/// pure noise that a customer effect makes look predictive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteredStandIn {
    pub clusters: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub sigma2_u: f64,
    pub sigma2_eps: f64,
}

impl Default for ClusteredStandIn {
    fn default() -> Self {
        Self {
            clusters: 120,
            min_size: 3,
            max_size: 12,
            sigma2_u: 4.0,
            sigma2_eps: 1.0,
        }
    }
}

const CUSTOMER_ATTRIBUTES: [&str; 6] = ["age", "gender", "occupation", "city", "stay", "marital"];

impl ClusteredStandIn {
    pub fn schema() -> TableSchema {
        let mut fixed = vec!["category".to_string()];
        fixed.extend(CUSTOMER_ATTRIBUTES.iter().map(|s| s.to_string()));
        TableSchema {
            response: "purchase".into(),
            fixed,
            clusters: vec!["customer".into()],
            coordinates: None,
            time: None,
            intercept: true,
        }
    }

    /// Category only, plus two customer attributes, plus all six.
    pub fn models() -> Vec<ModelSpec> {
        vec![
            ModelSpec {
                name: "model1".into(),
                columns: vec![0, 1],
            },
            ModelSpec {
                name: "model2".into(),
                columns: vec![0, 1, 2, 3],
            },
            ModelSpec {
                name: "model3".into(),
                columns: (0..8).collect(),
            },
        ]
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut rng = substream(seed, 0, 0);
        let (su, se) = (self.sigma2_u.sqrt(), self.sigma2_eps.sqrt());
        let mut rows: Vec<[f64; 8]> = Vec::new();
        let mut y = Vec::new();
        let mut labels = Vec::new();
        for c in 0..self.clusters {
            let size = rng.random_range(self.min_size..=self.max_size);
            let u = su * normal(&mut rng);
            let attrs: [f64; 6] = std::array::from_fn(|_| normal(&mut rng));
            for _ in 0..size {
                let category = rng.random_range(0..5) as f64;
                let mut row = [0.0; 8];
                row[0] = 1.0;
                row[1] = category;
                row[2..].copy_from_slice(&attrs);
                y.push(2.0 + 0.5 * category + u + se * normal(&mut rng));
                rows.push(row);
                labels.push(c as u32);
            }
        }
        let n = y.len();
        let x = DMatrix::from_fn(n, 8, |i, j| rows[i][j]);
        let design = ClusterDesign::new(n).with_level("customer", labels)?;
        Ok(Dataset::new(DVector::from_vec(y), x, design)?)
    }
}

/// Houses at shared locations: an exponential spatial field, an extra
/// location effect common to co-located houses, and noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialStandIn {
    pub locations: usize,
    pub max_per_location: usize,
    pub amplitude: f64,
    pub lengthscale: f64,
    pub sigma2_location: f64,
    pub sigma2_eps: f64,
}

impl Default for SpatialStandIn {
    fn default() -> Self {
        Self {
            locations: 150,
            max_per_location: 4,
            amplitude: 1.0,
            lengthscale: 0.3,
            sigma2_location: 0.5,
            sigma2_eps: 0.2,
        }
    }
}

impl SpatialStandIn {
    pub fn schema() -> TableSchema {
        TableSchema {
            response: "value".into(),
            fixed: vec!["income".into(), "rooms".into(), "age".into()],
            clusters: vec!["location".into()],
            coordinates: Some(["latitude".into(), "longitude".into()]),
            time: None,
            intercept: true,
        }
    }

    pub fn models() -> Vec<ModelSpec> {
        vec![
            ModelSpec {
                name: "model1".into(),
                columns: vec![0, 1],
            },
            ModelSpec {
                name: "model2".into(),
                columns: vec![0, 1, 2],
            },
            ModelSpec {
                name: "model3".into(),
                columns: vec![0, 1, 2, 3],
            },
        ]
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let mut rng = substream(seed, 0, 0);
        let sites: Vec<[f64; 2]> = (0..self.locations)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let k = DMatrix::from_fn(self.locations, self.locations, |a, b| {
            let d = ((sites[a][0] - sites[b][0]).powi(2) + (sites[a][1] - sites[b][1]).powi(2)).sqrt();
            self.amplitude * (-d / self.lengthscale).exp()
        });
        let field = draw_correlated(&linalg::psd_sqrt(&k), &mut rng);
        let (sl, se) = (self.sigma2_location.sqrt(), self.sigma2_eps.sqrt());
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut labels = Vec::new();
        let mut coords = Vec::new();
        for (l, site) in sites.iter().enumerate() {
            let size = rng.random_range(2..=self.max_per_location.max(2));
            let v = sl * normal(&mut rng);
            for _ in 0..size {
                let row = [1.0, normal(&mut rng), normal(&mut rng), normal(&mut rng)];
                y.push(1.0 + 0.8 * row[1] + 0.3 * row[2] + field[l] + v + se * normal(&mut rng));
                rows.push(row);
                labels.push(l as u32);
                coords.push(*site);
            }
        }
        let n = y.len();
        let x = DMatrix::from_fn(n, 4, |i, j| rows[i][j]);
        let design = ClusterDesign::new(n)
            .with_level("location", labels)?
            .with_coords(coords)?;
        Ok(Dataset::new(DVector::from_vec(y), x, design)?)
    }
}
