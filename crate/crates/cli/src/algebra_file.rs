//! JSON algebra definitions.
//!
//! ```json
//! { "layer_dims": [4, 1], "brackets": [[1, 3, 5, 1], [2, 4, 5, 1]],
//!   "metric_higher_layers": "canonical" }
//! ```
//!
//! Indices are 1-based. `metric_higher_layers` is `"canonical"`,
//! `"identity"` (basis orthonormal on every layer, the default) or a list
//! of matrices, one per layer above the first.

use std::path::Path;

use carnot_core::{DMatrix, HigherMetric, StratifiedAlgebra};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The bundled definition of the second Heisenberg algebra.
pub const HEISENBERG_N2: &str = include_str!("../data/heisenberg_n2.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraFile {
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub brackets: Vec<(usize, usize, usize, f64)>,
    #[serde(default)]
    pub metric_higher_layers: MetricSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricSpec {
    Named(String),
    Blocks(Vec<Vec<Vec<f64>>>),
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec::Named("identity".into())
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    /// The file could not be read or is not valid JSON of the right shape.
    #[error("{0}")]
    Io(String),
    /// Well-formed JSON describing something that is not an algebra.
    #[error("{kind}: {detail}")]
    Invalid { kind: &'static str, detail: String },
}

impl AlgebraFile {
    pub fn read(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(|e| LoadError::Io(format!("malformed algebra file: {e}")))
    }

    pub fn build(&self) -> Result<StratifiedAlgebra, LoadError> {
        let invalid = |kind, detail: String| LoadError::Invalid { kind, detail };
        let metric = match &self.metric_higher_layers {
            MetricSpec::Named(s) => match s.as_str() {
                "canonical" => HigherMetric::Canonical,
                "identity" | "unit" => HigherMetric::Unit,
                other => return Err(invalid("Metric", format!("unknown metric option {other:?}"))),
            },
            MetricSpec::Blocks(blocks) => {
                let mut out = Vec::with_capacity(blocks.len());
                for (l, b) in blocks.iter().enumerate() {
                    let k = b.len();
                    if b.iter().any(|row| row.len() != k) {
                        return Err(invalid("Metric", format!("block for layer {} is not square", l + 2)));
                    }
                    out.push(DMatrix::from_fn(k, k, |i, j| b[i][j]));
                }
                HigherMetric::Blocks(out)
            }
        };
        let mut entries = Vec::with_capacity(self.brackets.len());
        for &(i, j, k, c) in &self.brackets {
            if i == 0 || j == 0 || k == 0 {
                return Err(invalid("IndexOutOfRange", format!("bracket entry [{i}, {j}, {k}, {c}] uses index 0; indices are 1-based")));
            }
            entries.push((i - 1, j - 1, k - 1, c));
        }
        StratifiedAlgebra::new(self.layer_dims.clone(), &entries, metric).map_err(|e| {
            let kind = match e {
                carnot_core::Error::IndexOutOfRange { .. } => "IndexOutOfRange",
                carnot_core::Error::MetricNotPositive => "Layer1Metric",
                carnot_core::Error::NotSurjective { .. } => "Generation",
                carnot_core::Error::DimensionMismatch { .. } => "Metric",
                _ => "InvalidAlgebra",
            };
            // report 1-based indices back to the user
            let detail = match e {
                carnot_core::Error::IndexOutOfRange { index, dim } => format!("index {} exceeds dimension {dim}", index + 1),
                other => other.to_string(),
            };
            invalid(kind, detail)
        })
    }
}

/// Reads and builds the algebra at `path`.
pub fn load(path: &Path) -> Result<StratifiedAlgebra, LoadError> {
    AlgebraFile::read(path)?.build()
}
