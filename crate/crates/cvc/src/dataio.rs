//! CSV ingestion and export of clustered datasets.

use std::collections::HashMap;
use std::path::Path;

use cvc_core::covmodel::ClusterDesign;
use cvc_core::predictors::Dataset;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

/// Name reported for the intercept column.
pub const INTERCEPT: &str = "(intercept)";

/// Which CSV columns make up a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub response: String,
    /// Fixed-effect columns, in design order.
    pub fixed: Vec<String>,
    /// Grouping columns, outermost first. Labels are opaque strings and an
    /// inner label is read relative to its enclosing labels.
    #[serde(default)]
    pub clusters: Vec<String>,
    #[serde(default)]
    pub coordinates: Option<[String; 2]>,
    #[serde(default)]
    pub time: Option<String>,
    /// Prepend a column of ones to the fixed effects.
    #[serde(default)]
    pub intercept: bool,
}

impl TableSchema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        let schema: TableSchema =
            serde_json::from_str(&text).map_err(|e| RunError::config(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.response.is_empty() {
            return Err(RunError::config("schema response column is empty"));
        }
        if self.fixed.is_empty() {
            return Err(RunError::config("schema needs at least one fixed-effect column"));
        }
        let names = self.columns();
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(RunError::config(format!("column `{a}` appears twice in the schema")));
            }
        }
        Ok(())
    }

    /// Every column the schema reads.
    pub fn columns(&self) -> Vec<&str> {
        let mut names = vec![self.response.as_str()];
        names.extend(self.fixed.iter().map(String::as_str));
        names.extend(self.clusters.iter().map(String::as_str));
        if let Some([a, b]) = &self.coordinates {
            names.push(a);
            names.push(b);
        }
        if let Some(t) = &self.time {
            names.push(t);
        }
        names
    }

    /// Names of the design columns, the intercept first when enabled.
    pub fn design_columns(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.fixed.len() + 1);
        if self.intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(self.fixed.iter().cloned());
        names
    }

    /// Index of a design column by name.
    pub fn design_index(&self, name: &str) -> Option<usize> {
        self.design_columns().iter().position(|c| c == name)
    }
}

fn numeric(path: &Path, row: usize, column: &str, field: &str) -> Result<f64> {
    let err = |message: &str| RunError::Row {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.to_string(),
    };
    if field.is_empty() {
        return Err(err("missing value"));
    }
    let v: f64 = field.parse().map_err(|_| err(&format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(err("value is not finite"));
    }
    Ok(v)
}

/// Read a header-led CSV file into a dataset. Rows are numbered from 1,
/// not counting the header.
pub fn load_csv(path: &Path, schema: &TableSchema) -> Result<Dataset> {
    schema.validate()?;
    let table_err = |message: String| RunError::Table {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| table_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| table_err(e.to_string()))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| table_err(format!("missing column `{name}`")))
    };
    let response = locate(&schema.response)?;
    let fixed = schema.fixed.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let clusters = schema.clusters.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let coords = schema
        .coordinates
        .as_ref()
        .map(|[a, b]| Ok::<_, RunError>([locate(a)?, locate(b)?]))
        .transpose()?;
    let time = schema.time.as_deref().map(locate).transpose()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut labels: Vec<Vec<u32>> = vec![Vec::new(); clusters.len()];
    let mut ids: Vec<HashMap<Vec<String>, u32>> = vec![HashMap::new(); clusters.len()];
    let mut coord_values = Vec::new();
    let mut times = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| table_err(format!("row {row}: {e}")))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        y.push(numeric(path, row, &schema.response, field(response))?);
        if schema.intercept {
            x.push(1.0);
        }
        for (name, &i) in schema.fixed.iter().zip(&fixed) {
            x.push(numeric(path, row, name, field(i))?);
        }
        let mut key = Vec::with_capacity(clusters.len());
        for (level, (name, &i)) in schema.clusters.iter().zip(&clusters).enumerate() {
            let label = field(i);
            if label.is_empty() {
                return Err(RunError::Row {
                    path: path.to_path_buf(),
                    row,
                    column: name.clone(),
                    message: "missing value".into(),
                });
            }
            key.push(label.to_string());
            let next = ids[level].len() as u32;
            labels[level].push(*ids[level].entry(key.clone()).or_insert(next));
        }
        if let (Some([a, b]), Some([ia, ib])) = (&schema.coordinates, coords) {
            coord_values.push([numeric(path, row, a, field(ia))?, numeric(path, row, b, field(ib))?]);
        }
        if let (Some(name), Some(i)) = (&schema.time, time) {
            times.push(numeric(path, row, name, field(i))?);
        }
    }
    let n = y.len();
    if n < 2 {
        return Err(table_err(format!("need at least 2 data rows, found {n}")));
    }
    let p = schema.design_columns().len();
    let mut design = ClusterDesign::new(n);
    for (name, l) in schema.clusters.iter().zip(labels) {
        design = design.with_level(name.clone(), l)?;
    }
    if schema.time.is_some() {
        design = design.with_time(times)?;
    }
    if schema.coordinates.is_some() {
        design = design.with_coords(coord_values)?;
    }
    Ok(Dataset::new(
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, p, &x),
        design,
    )?)
}

/// Write `data` under `schema`'s column names; cluster labels are written as
/// their numeric ids. The intercept column is omitted.
pub fn write_csv(path: &Path, data: &Dataset, schema: &TableSchema) -> Result<()> {
    schema.validate()?;
    let p = schema.design_columns().len();
    if data.x().ncols() != p {
        return Err(RunError::config(format!(
            "dataset has {} columns, schema describes {p}",
            data.x().ncols()
        )));
    }
    let design = data.design();
    if design.level_count() != schema.clusters.len() {
        return Err(RunError::config(
            "schema cluster columns do not match the design levels",
        ));
    }
    let io_err = |e: csv::Error| RunError::Table {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(schema.columns()).map_err(io_err)?;
    let skip = usize::from(schema.intercept);
    for i in 0..data.len() {
        let mut row = vec![data.y()[i].to_string()];
        row.extend((skip..p).map(|j| data.x()[(i, j)].to_string()));
        row.extend((0..design.level_count()).map(|l| design.labels(l)[i].to_string()));
        if schema.coordinates.is_some() {
            let c = design
                .coords()
                .ok_or(cvc_core::Error::MissingDesignField("coordinates"))?[i];
            row.push(c[0].to_string());
            row.push(c[1].to_string());
        }
        if schema.time.is_some() {
            row.push(design.time().ok_or(cvc_core::Error::MissingDesignField("time"))?[i].to_string());
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_rejects_duplicates() {
        let s = TableSchema {
            response: "y".into(),
            fixed: vec!["x".into(), "y".into()],
            clusters: vec![],
            coordinates: None,
            time: None,
            intercept: false,
        };
        assert!(s.validate().is_err());
    }
}
