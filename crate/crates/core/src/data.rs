//! Binary-response datasets and CSV ingestion.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column affine map applied during standardization: `x ↦ (x - mean)/sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: f64,
    pub sd: f64,
}

/// `n` observations of a binary response and `p` continuous covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u8>,
    /// Row-major `n × p`.
    x: Vec<f64>,
    p: usize,
    pub response_name: String,
    pub covariate_names: Vec<String>,
    pub scaling: Option<Vec<ColumnScaling>>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(y: Vec<u8>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        if rows.len() != n {
            return Err(Error::Data(format!("{} responses but {} covariate rows", n, rows.len())));
        }
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::Data("at least one covariate is required".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Data(format!("row {} has {} covariates, expected {p}", i + 1, rows[i].len())));
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("response in row {} is {}, expected 0 or 1", i + 1, y[i])));
        }
        if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("row {} has a non-finite covariate", i + 1)));
        }
        if n < p + 2 {
            return Err(Error::Data(format!("need at least p+2 = {} observations, got {n}", p + 2)));
        }
        Ok(Dataset {
            y,
            x: rows.into_iter().flatten().collect(),
            p,
            response_name: "y".into(),
            covariate_names: (1..=p).map(|j| format!("x{j}")).collect(),
            scaling: None,
            provenance: String::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn responses(&self) -> &[u8] {
        &self.y
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.y[i] == 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.p)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    /// Replaces the response vector, keeping covariates. Used when simulating data.
    pub fn with_responses(mut self, y: Vec<u8>) -> Result<Self> {
        if y.len() != self.n() || y.iter().any(|&v| v > 1) {
            return Err(Error::Data("replacement responses must be 0/1 with matching length".into()));
        }
        self.y = y;
        Ok(self)
    }

    /// Centers each covariate and scales it to unit sample SD.
    pub fn standardize(&mut self) -> Result<()> {
        let n = self.n() as f64;
        let mut scaling = Vec::with_capacity(self.p);
        for j in 0..self.p {
            let col = self.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::Data(format!(
                    "covariate '{}' is constant and cannot be standardized",
                    self.covariate_names[j]
                )));
            }
            scaling.push(ColumnScaling { mean, sd });
        }
        for row in self.x.chunks_exact_mut(self.p) {
            for (v, s) in row.iter_mut().zip(&scaling) {
                *v = (*v - s.mean) / s.sd;
            }
        }
        self.scaling = Some(scaling);
        Ok(())
    }

    /// `(min, max)` of each covariate.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        (0..self.p)
            .map(|j| {
                self.rows()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }
}

/// Dichotomization rule `column > value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub column: String,
    pub value: f64,
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (column, value) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Config(format!("threshold '{s}' must look like COLUMN:VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("threshold value '{value}' is not a number")))?;
        if column.trim().is_empty() {
            return Err(Error::Config(format!("threshold '{s}' names no column")));
        }
        Ok(Threshold {
            column: column.trim().to_string(),
            value,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Response column; defaults to the threshold column, then to the first column.
    pub response: Option<String>,
    /// Covariate columns; defaults to every other column.
    pub covariates: Option<Vec<String>>,
    pub threshold: Option<Threshold>,
    pub standardize: bool,
}

/// Reads a headered CSV of numeric cells.
pub fn ingest_csv(path: impl AsRef<Path>, options: &IngestOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found in {}", path.display())))
    };
    if let (Some(t), Some(r)) = (&options.threshold, &options.response) {
        if &t.column != r {
            return Err(Error::Config(format!(
                "threshold column '{}' differs from response '{r}'",
                t.column
            )));
        }
    }
    let response_name = options
        .threshold
        .as_ref()
        .map(|t| t.column.clone())
        .or_else(|| options.response.clone())
        .or_else(|| header.first().cloned())
        .ok_or_else(|| Error::Data("empty header".into()))?;
    let response_col = find(&response_name)?;
    let covariate_cols: Vec<usize> = match &options.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&c| c != response_col).collect(),
    };
    if covariate_cols.contains(&response_col) {
        return Err(Error::Config("the response cannot also be a covariate".into()));
    }

    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row_no}: {e}")))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(Error::Data(format!("missing value in row {row_no}, column '{}'", header[c])));
            }
            raw.parse::<f64>().map_err(|_| {
                Error::Data(format!("non-numeric value '{raw}' in row {row_no}, column '{}'", header[c]))
            })
        };
        let r = cell(response_col)?;
        let label = match &options.threshold {
            Some(t) => u8::from(r > t.value),
            None if r == 0.0 => 0,
            None if r == 1.0 => 1,
            None => {
                return Err(Error::Data(format!(
                    "response '{response_name}' in row {row_no} is {r}; use a threshold to dichotomize"
                )))
            }
        };
        y.push(label);
        rows.push(covariate_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?);
    }
    let mut data = Dataset::new(y, rows)?;
    data.response_name = response_name.clone();
    data.covariate_names = covariate_cols.iter().map(|&c| header[c].clone()).collect();
    data.provenance = match &options.threshold {
        Some(t) => format!("{} with {response_name} > {}", path.display(), t.value),
        None => path.display().to_string(),
    };
    if options.standardize {
        data.standardize()?;
    }
    Ok(data)
}
