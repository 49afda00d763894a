//! File formats: bag CSVs, dataset manifests, and model persistence.
//!
//! * Bag file: CSV, one point per row, `d` numeric columns, no header.
//! * Manifest: CSV with header `bag_path,y_1,..,y_d`; the label columns are
//!   optional for prediction-only manifests.
//! * Model file: a flat versioned text file holding the kernel specs, the
//!   regularizer, the jitter, the dual matrix, and bag file references.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::bag::PointBag;
use crate::error::{Error, Result};
use crate::kernel::BaseKernel;
use crate::outer::OuterKernel;
use crate::regressor::{LabeledDataset, TrainedModel};

const MODEL_HEADER: &str = "MERR-MODEL v1";

/// Read one bag from a headerless numeric CSV file.
pub fn read_bag(path: &Path) -> Result<PointBag> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("bad number `{field}` in {}", path.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    PointBag::from_rows(&rows)
}

/// Write one bag as a headerless numeric CSV file.
pub fn write_bag(path: &Path, bag: &PointBag) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for point in bag.points() {
        writer.write_record(point.iter().map(|v| format_float(*v)))?;
    }
    writer.flush()?;
    Ok(())
}

/// A parsed manifest: bag paths resolved against the manifest directory,
/// plus labels when present.
pub struct Manifest {
    pub bag_paths: Vec<PathBuf>,
    pub labels: Option<DMatrix<f64>>,
}

/// Read a manifest. Label columns must be named `y_1..y_d` and are optional
/// as a group.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "bag_path" {
        return Err(Error::Parse(format!(
            "manifest {} must start with a `bag_path` column",
            path.display()
        )));
    }
    let label_dim = headers.len() - 1;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut bag_paths = Vec::new();
    let mut label_rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "manifest row has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        bag_paths.push(base_dir.join(&record[0]));
        if label_dim > 0 {
            let row = record
                .iter()
                .skip(1)
                .map(|field| {
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad label `{field}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            label_rows.push(row);
        }
    }
    if bag_paths.is_empty() {
        return Err(Error::Parse(format!("manifest {} has no rows", path.display())));
    }
    let labels = if label_dim > 0 {
        Some(DMatrix::from_fn(label_rows.len(), label_dim, |r, c| label_rows[r][c]))
    } else {
        None
    };
    Ok(Manifest { bag_paths, labels })
}

/// Write a manifest with labels.
pub fn write_manifest(path: &Path, bag_paths: &[String], labels: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["bag_path".to_string()];
    for j in 0..labels.ncols() {
        header.push(format!("y_{}", j + 1));
    }
    writer.write_record(&header)?;
    for (i, bag_path) in bag_paths.iter().enumerate() {
        let mut record = vec![bag_path.clone()];
        for j in 0..labels.ncols() {
            record.push(format_float(labels[(i, j)]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load a labeled dataset from a manifest. `label_bound` of `None` records
/// the largest observed label norm as the bound.
pub fn load_dataset(path: &Path, label_bound: Option<f64>) -> Result<LabeledDataset> {
    let manifest = read_manifest(path)?;
    let labels = manifest
        .labels
        .ok_or_else(|| Error::Parse(format!("manifest {} has no label columns", path.display())))?;
    let bags = manifest
        .bag_paths
        .iter()
        .map(|p| read_bag(p))
        .collect::<Result<Vec<_>>>()?;
    match label_bound {
        Some(bound) => LabeledDataset::new(bags, labels, bound),
        None => LabeledDataset::with_observed_bound(bags, labels),
    }
}

/// Load bags only (prediction-time manifests may omit labels).
pub fn load_bags(path: &Path) -> Result<Vec<PointBag>> {
    let manifest = read_manifest(path)?;
    manifest.bag_paths.iter().map(|p| read_bag(p)).collect()
}

/// Persist a fitted model together with references to its training bag
/// files. `bag_paths` must list one file per training bag, in order.
pub fn save_model(path: &Path, model: &TrainedModel, bag_paths: &[String]) -> Result<()> {
    if bag_paths.len() != model.train_bags().len() {
        return Err(Error::DimensionMismatch {
            left: bag_paths.len(),
            right: model.train_bags().len(),
        });
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{MODEL_HEADER}")?;
    writeln!(out, "base.family={}", model.base().family_name())?;
    writeln!(out, "base.bandwidth={}", format_float(model.base().bandwidth()))?;
    writeln!(out, "outer.family={}", model.outer().family_name())?;
    if let Some(theta) = model.outer().theta() {
        writeln!(out, "outer.theta={}", format_float(theta))?;
    }
    writeln!(out, "lambda={}", format_float(model.lambda()))?;
    writeln!(out, "jitter={}", format_float(model.jitter()))?;
    writeln!(out, "label_dim={}", model.label_dim())?;
    for bag_path in bag_paths {
        writeln!(out, "bag={bag_path}")?;
    }
    for i in 0..model.duals().nrows() {
        let row: Vec<String> =
            (0..model.duals().ncols()).map(|j| format_float(model.duals()[(i, j)])).collect();
        writeln!(out, "dual={}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Load a persisted model. Training bags are re-read from the referenced
/// files (resolved against the model file's directory when relative) and the
/// dual system is re-factorized.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::ModelFormat("empty model file".into()))?;
    if header.trim() != MODEL_HEADER {
        return Err(Error::ModelFormat(format!(
            "unsupported header `{}`; expected `{MODEL_HEADER}`",
            header.trim()
        )));
    }
    let mut base_family = None;
    let mut base_bandwidth = None;
    let mut outer_family = None;
    let mut outer_theta = None;
    let mut lambda = None;
    let mut label_dim = None;
    let mut bag_paths: Vec<String> = Vec::new();
    let mut dual_rows: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::ModelFormat(format!("bad line `{line}`")))?;
        match key {
            "base.family" => base_family = Some(value.to_string()),
            "base.bandwidth" => base_bandwidth = Some(parse_float(value)?),
            "outer.family" => outer_family = Some(value.to_string()),
            "outer.theta" => outer_theta = Some(parse_float(value)?),
            "lambda" => lambda = Some(parse_float(value)?),
            "jitter" => {} // informational; recomputed on load
            "label_dim" => {
                label_dim = Some(value.parse::<usize>().map_err(|_| {
                    Error::ModelFormat(format!("bad label_dim `{value}`"))
                })?)
            }
            "bag" => bag_paths.push(value.to_string()),
            "dual" => {
                dual_rows.push(
                    value
                        .split(',')
                        .map(parse_float)
                        .collect::<Result<Vec<f64>>>()?,
                );
            }
            other => return Err(Error::ModelFormat(format!("unknown key `{other}`"))),
        }
    }
    let base_family =
        base_family.ok_or_else(|| Error::ModelFormat("missing base.family".into()))?;
    let base_bandwidth =
        base_bandwidth.ok_or_else(|| Error::ModelFormat("missing base.bandwidth".into()))?;
    let outer_family =
        outer_family.ok_or_else(|| Error::ModelFormat("missing outer.family".into()))?;
    let lambda = lambda.ok_or_else(|| Error::ModelFormat("missing lambda".into()))?;
    let label_dim = label_dim.ok_or_else(|| Error::ModelFormat("missing label_dim".into()))?;
    if bag_paths.is_empty() || dual_rows.len() != bag_paths.len() {
        return Err(Error::ModelFormat(format!(
            "{} bag references but {} dual rows",
            bag_paths.len(),
            dual_rows.len()
        )));
    }
    if dual_rows.iter().any(|r| r.len() != label_dim) {
        return Err(Error::ModelFormat("dual row width differs from label_dim".into()));
    }

    let base = BaseKernel::from_name(&base_family, base_bandwidth)?;
    let outer = OuterKernel::from_name(&outer_family, outer_theta.unwrap_or(1.0))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let bags = bag_paths
        .iter()
        .map(|p| {
            let candidate = PathBuf::from(p);
            let resolved =
                if candidate.is_absolute() { candidate } else { base_dir.join(p) };
            read_bag(&resolved)
        })
        .collect::<Result<Vec<_>>>()?;
    let duals = DMatrix::from_fn(dual_rows.len(), label_dim, |r, c| dual_rows[r][c]);
    TrainedModel::from_parts(base, outer, lambda, bags, duals)
}

/// Shortest decimal representation that round-trips to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn parse_float(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{fit, predict};
    use approx::assert_relative_eq;

    #[test]
    fn bag_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bag.csv");
        let bag = PointBag::from_rows(&[
            vec![0.1, -2.5e-13],
            vec![std::f64::consts::PI, 1.0 / 3.0],
        ])
        .unwrap();
        write_bag(&path, &bag).unwrap();
        let back = read_bag(&path).unwrap();
        assert_eq!(bag, back);
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let bag = PointBag::from_scalars(&[1.0, 2.0]).unwrap();
        write_bag(&dir.path().join("b0.csv"), &bag).unwrap();
        write_bag(&dir.path().join("b1.csv"), &bag).unwrap();
        let labels = DMatrix::from_row_slice(2, 2, &[0.5, 1.5, -0.25, 0.75]);
        let manifest_path = dir.path().join("manifest.csv");
        write_manifest(&manifest_path, &["b0.csv".into(), "b1.csv".into()], &labels).unwrap();
        let data = load_dataset(&manifest_path, None).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.label_dim(), 2);
        assert_eq!(data.labels()[(1, 1)], 0.75);
    }

    #[test]
    fn manifest_requires_bag_path_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "path,y_1\nb0.csv,1.0\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn model_roundtrip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let bags = vec![
            PointBag::from_scalars(&[0.0, 0.5]).unwrap(),
            PointBag::from_scalars(&[1.0]).unwrap(),
            PointBag::from_scalars(&[-0.75, 0.2, 0.9]).unwrap(),
        ];
        let mut bag_paths = Vec::new();
        for (i, bag) in bags.iter().enumerate() {
            let name = format!("bag{i}.csv");
            write_bag(&dir.path().join(&name), bag).unwrap();
            bag_paths.push(name);
        }
        let labels = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -0.5, 0.25, 0.1, 0.9]);
        let data = LabeledDataset::with_observed_bound(bags.clone(), labels).unwrap();
        let base = BaseKernel::gaussian(0.8).unwrap();
        let outer = OuterKernel::cauchy(1.1).unwrap();
        let model = fit(&data, &base, &outer, 0.05).unwrap();

        let model_path = dir.path().join("model.merr");
        save_model(&model_path, &model, &bag_paths).unwrap();
        let loaded = load_model(&model_path).unwrap();

        assert_eq!(model.duals(), loaded.duals());
        let tests = vec![PointBag::from_scalars(&[0.3, -0.1]).unwrap()];
        let p0 = predict(&model, &tests).unwrap();
        let p1 = predict(&loaded, &tests).unwrap();
        for (a, b) in p0.iter().zip(p1.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn model_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.merr");
        std::fs::write(&path, "NOT-A-MODEL\n").unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }
}
