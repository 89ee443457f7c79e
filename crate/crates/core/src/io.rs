//! File formats for sampled fields and reports: a small JSON header next to
//! a raw little-endian binary payload, written atomically via a temp file in
//! the destination directory.

use crate::error::{Error, Result};
use crate::geometry::Chart;
use crate::hessian::{PotentialField, PotentialRole};
use crate::prolongation::ProductField;
use crate::report::SCHEMA_VERSION;
use crate::tensor::{Grid, GridField};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct ChartHeader {
    n: usize,
    kappa: f64,
    domain_radius: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    min: Vec<f64>,
    max: Vec<f64>,
    nodes: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    schema: u32,
    chart: ChartHeader,
    grid: GridHeader,
    rank: usize,
    margin: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    role: Option<PotentialRole>,
    /// Relative path of the binary payload, resolved against the header's
    /// parent directory.
    data: String,
}

/// Serialize a value as pretty JSON and move it into place atomically: the
/// bytes land in a temp file in the destination directory first, so readers
/// never observe a partial report.
pub fn atomic_write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    bytes.push(b'\n');
    atomic_write_bytes(path, &bytes)
}

fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn payload_name(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parse(format!("cannot derive payload name from {path:?}")))?;
    Ok(format!("{stem}.bin"))
}

fn write_field(
    path: &Path,
    chart: &Chart,
    field: &GridField,
    role: Option<PotentialRole>,
) -> Result<()> {
    let grid = &field.grid;
    let header = FieldHeader {
        schema: SCHEMA_VERSION,
        chart: ChartHeader {
            n: chart.dim(),
            kappa: chart.kappa(),
            domain_radius: chart.domain_radius(),
        },
        grid: GridHeader {
            min: grid.min().to_vec(),
            max: grid.max().to_vec(),
            nodes: grid.nodes().to_vec(),
        },
        rank: field.rank,
        margin: field.margin,
        role,
        data: payload_name(path)?,
    };
    let mut bin = Vec::with_capacity(field.raw_data().len() * 8);
    {
        let mut w = BufWriter::new(&mut bin);
        for v in field.raw_data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
    }
    let bin_path = path
        .parent()
        .map(|p| p.join(&header.data))
        .unwrap_or_else(|| Path::new(&header.data).to_path_buf());
    atomic_write_bytes(&bin_path, &bin)?;
    atomic_write_json(path, &header)
}

fn read_field(path: &Path) -> Result<(Chart, GridField, Option<PotentialRole>)> {
    let text = fs::read_to_string(path)?;
    let header: FieldHeader =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{path:?}: {e}")))?;
    if header.schema != SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "unsupported schema {} in {path:?} (tool speaks {SCHEMA_VERSION})",
            header.schema
        )));
    }
    let chart = Chart::new(header.chart.n, header.chart.kappa, header.chart.domain_radius)?;
    let grid = Grid::new(header.grid.min, header.grid.max, header.grid.nodes)?;
    let bin_path = path
        .parent()
        .map(|p| p.join(&header.data))
        .unwrap_or_else(|| Path::new(&header.data).to_path_buf());
    let bytes = fs::read(&bin_path)?;
    let expected = grid.total_nodes() * grid.dim().pow(header.rank as u32);
    if bytes.len() != expected * 8 {
        return Err(Error::Parse(format!(
            "payload {bin_path:?} holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    let mut field = GridField::zeros(grid, header.rank);
    field.margin = header.margin;
    for (slot, chunk) in field.raw_data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
        *slot = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
    }
    Ok((chart, field, header.role))
}

pub fn write_product_field(path: &Path, field: &ProductField) -> Result<()> {
    write_field(path, &field.chart, &field.star, None)
}

pub fn read_product_field(path: &Path) -> Result<ProductField> {
    let (chart, star, _) = read_field(path)?;
    if star.rank != 3 {
        return Err(Error::Parse(format!(
            "product field must have rank 3, found {}",
            star.rank
        )));
    }
    Ok(ProductField {
        chart,
        grid: star.grid.clone(),
        star,
    })
}

pub fn write_potential_field(path: &Path, field: &PotentialField) -> Result<()> {
    write_field(path, &field.chart, &field.phi, Some(field.role))
}

pub fn read_potential_field(path: &Path) -> Result<PotentialField> {
    let (chart, phi, role) = read_field(path)?;
    if phi.rank != 0 {
        return Err(Error::Parse(format!(
            "potential field must have rank 0, found {}",
            phi.rank
        )));
    }
    let role = role.ok_or_else(|| Error::Parse("potential file lacks a role".into()))?;
    Ok(PotentialField {
        chart,
        grid: phi.grid.clone(),
        phi,
        role,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample_product() -> ProductField {
        let chart = Chart::new(2, 1.0, 0.8).unwrap();
        let grid = Grid::symmetric(2, 0.1, 3).unwrap();
        let mut star = GridField::zeros(grid.clone(), 3);
        for (i, node) in grid.all_nodes().into_iter().enumerate() {
            let t = Tensor::from_fn(2, 3, |ix| {
                (i as f64) + 0.1 * (ix[0] as f64) - 0.3 * (ix[2] as f64)
            });
            star.set_tensor_at(&node, &t);
        }
        ProductField { chart, grid, star }
    }

    #[test]
    fn product_field_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.json");
        let field = sample_product();
        write_product_field(&path, &field).unwrap();
        assert!(dir.path().join("field.bin").is_file());
        let back = read_product_field(&path).unwrap();
        assert_eq!(back.star.raw_data(), field.star.raw_data());
        assert_eq!(back.grid.nodes(), field.grid.nodes());
        assert_eq!(back.chart.kappa(), 1.0);
    }

    #[test]
    fn potential_field_round_trips_with_role() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.json");
        let chart = Chart::new(2, 0.0, 2.0).unwrap();
        let grid = Grid::symmetric(2, 0.2, 4).unwrap();
        let mut phi = GridField::zeros(grid.clone(), 0);
        for v in phi.raw_data_mut() {
            *v = 0.25;
        }
        let field = PotentialField {
            chart,
            grid,
            phi,
            role: PotentialRole::FrobeniusPotential,
        };
        write_potential_field(&path, &field).unwrap();
        let back = read_potential_field(&path).unwrap();
        assert_eq!(back.role, PotentialRole::FrobeniusPotential);
        assert_eq!(back.phi.raw_data(), field.phi.raw_data());
    }

    #[test]
    fn truncated_payload_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.json");
        write_product_field(&path, &sample_product()).unwrap();
        let bin = dir.path().join("field.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        let err = read_product_field(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.json");
        write_product_field(&path, &sample_product()).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema\": 1", "\"schema\": 99");
        fs::write(&path, text).unwrap();
        let err = read_product_field(&path).unwrap_err();
        assert!(err.to_string().contains("schema"), "{err}");
    }

    #[test]
    fn atomic_json_ends_with_newline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        atomic_write_json(&path, &serde_json::json!({"a": 1})).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        assert!(!text.ends_with("\n\n"));
    }
}
