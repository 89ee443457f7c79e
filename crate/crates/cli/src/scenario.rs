//! Scenario files: a single JSON document describing one pipeline run.
//! Heavy field payloads live in separate files referenced by relative path.

use frobenius_core::report::SCHEMA_VERSION;
use frobenius_core::{Chart, Error, Grid, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Verify,
    Construct,
    Classify,
    Hessian,
    Bridge,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Verify => "verify",
            Mode::Construct => "construct",
            Mode::Classify => "classify",
            Mode::Hessian => "hessian",
            Mode::Bridge => "bridge",
        };
        f.write_str(s)
    }
}

/// Grid over the chart, in either of two shapes: a symmetric box
/// (`half_width` + `nodes_per_axis`) or an explicit per-axis box
/// (`min` + `max` + `nodes`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes_per_axis: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<usize>>,
}

impl GridSpec {
    pub fn build(&self, dim: usize) -> Result<Grid> {
        match (
            &self.half_width,
            &self.nodes_per_axis,
            &self.min,
            &self.max,
            &self.nodes,
        ) {
            (Some(half), Some(per), None, None, None) => Grid::symmetric(dim, *half, *per),
            (None, None, Some(min), Some(max), Some(nodes)) => {
                Grid::new(min.clone(), max.clone(), nodes.clone())
            }
            _ => Err(Error::Parse(
                "chart.grid: give either half_width + nodes_per_axis or min + max + nodes"
                    .into(),
            )),
        }
    }

    /// Replace the node counts so the spacing on every axis is as close to
    /// `h` as the box extents allow.
    pub fn with_spacing(&mut self, h: f64) -> Result<()> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::Parse(format!(
                "grid spacing override must be positive and finite, got {h}"
            )));
        }
        if let (Some(half), Some(per)) = (self.half_width, self.nodes_per_axis.as_mut()) {
            *per = ((2.0 * half / h).round() as usize).max(1) + 1;
            return Ok(());
        }
        if let (Some(min), Some(max), Some(nodes)) =
            (self.min.as_ref(), self.max.as_ref(), self.nodes.as_mut())
        {
            for axis in 0..nodes.len().min(min.len()).min(max.len()) {
                let extent = max[axis] - min[axis];
                nodes[axis] = ((extent / h).round() as usize).max(1) + 1;
            }
            return Ok(());
        }
        Err(Error::Parse(
            "chart.grid: give either half_width + nodes_per_axis or min + max + nodes".into(),
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub dimension: usize,
    pub kappa: f64,
    pub domain_radius: f64,
    pub grid: GridSpec,
}

impl ChartSpec {
    pub fn build(&self) -> Result<Chart> {
        Chart::new(self.dimension, self.kappa, self.domain_radius)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub rng_seed: u64,
}

/// Seed product at the grid base point: either the `n^3` coefficients of
/// `star` inline, flattened row-major over `(i, j, k)` with `k` the output
/// index, or a request to solve the seed algebra with a given RNG seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inline: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub mode: Mode,
    pub chart: ChartSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<SeedSpec>,
    /// Input field payload, relative to the scenario file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<BTreeMap<String, f64>>,
    /// Report destination, relative to the scenario file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Destination for a field payload produced by the run, relative to the
    /// scenario file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_field: Option<String>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema {} (this tool reads schema {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if let Some(seed) = &self.seed {
            match (&seed.inline, &seed.solver) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(Error::Parse(
                        "seed: give exactly one of inline or solver".into(),
                    ));
                }
            }
            if let Some(values) = &seed.inline {
                let n = self.chart.dimension;
                if values.len() != n * n * n {
                    return Err(Error::Parse(format!(
                        "seed.inline: expected {} values for dimension {n}, got {}",
                        n * n * n,
                        values.len()
                    )));
                }
            }
        }
        if let Some(tols) = &self.tolerances {
            for (name, value) in tols {
                if !value.is_finite() || *value <= 0.0 {
                    return Err(Error::Parse(format!(
                        "tolerances.{name}: must be positive and finite, got {value}"
                    )));
                }
            }
        }
        match self.mode {
            Mode::Construct => {
                if self.seed.is_none() {
                    return Err(Error::Parse("construct mode requires a seed".into()));
                }
                if self.field.is_some() {
                    return Err(Error::Parse(
                        "construct mode takes a seed, not an input field".into(),
                    ));
                }
            }
            _ => {
                if self.seed.is_none() && self.field.is_none() {
                    return Err(Error::Parse(format!(
                        "{} mode requires a field payload or a seed to construct one",
                        self.mode
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolve a path from the scenario file against the scenario's
    /// directory.
    pub fn resolve(base: &Path, relative: &str) -> PathBuf {
        let rel = Path::new(relative);
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base.parent().unwrap_or(Path::new(".")).join(rel)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(mode: &str) -> serde_json::Value {
        serde_json::json!({
            "schema": 1,
            "mode": mode,
            "chart": {
                "dimension": 2,
                "kappa": 1.0,
                "domain_radius": 1.2,
                "grid": {"half_width": 0.4, "nodes_per_axis": 11}
            },
            "seed": {"solver": {"rng_seed": 7}}
        })
    }

    #[test]
    fn round_trips_and_validates() {
        let v = minimal("construct");
        let s: Scenario = serde_json::from_value(v).unwrap();
        s.validate().unwrap();
        let grid = s.chart.grid.build(2).unwrap();
        assert_eq!(grid.nodes(), &[11, 11]);
        let back = serde_json::to_value(&s).unwrap();
        let s2: Scenario = serde_json::from_value(back).unwrap();
        assert_eq!(s2.mode, Mode::Construct);
    }

    #[test]
    fn rejects_double_seed_spec() {
        let mut v = minimal("construct");
        v["seed"] = serde_json::json!({"inline": vec![0.0; 8], "solver": {"rng_seed": 1}});
        let s: Scenario = serde_json::from_value(v).unwrap();
        let err = s.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_wrong_inline_length() {
        let mut v = minimal("construct");
        v["seed"] = serde_json::json!({"inline": vec![0.0; 7]});
        let s: Scenario = serde_json::from_value(v).unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        let mut v = minimal("verify");
        v["chart"]["curvature"] = serde_json::json!(1.0);
        assert!(serde_json::from_value::<Scenario>(v).is_err());
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let mut v = minimal("verify");
        v["tolerances"] = serde_json::json!({"hmf": 0.0});
        let s: Scenario = serde_json::from_value(v).unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn grid_spacing_override_recomputes_nodes() {
        let mut spec = GridSpec {
            half_width: Some(0.4),
            nodes_per_axis: Some(11),
            min: None,
            max: None,
            nodes: None,
        };
        spec.with_spacing(0.04).unwrap();
        assert_eq!(spec.nodes_per_axis, Some(21));
        let mut boxed = GridSpec {
            half_width: None,
            nodes_per_axis: None,
            min: Some(vec![-0.2, 0.0]),
            max: Some(vec![0.2, 0.4]),
            nodes: Some(vec![5, 5]),
        };
        boxed.with_spacing(0.1).unwrap();
        assert_eq!(boxed.nodes, Some(vec![5, 5]));
        boxed.with_spacing(0.05).unwrap();
        assert_eq!(boxed.nodes, Some(vec![9, 9]));
    }
}
