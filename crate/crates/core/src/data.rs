//! Labelled datasets: CSV ingestion and export, Gaussian blob generator,
//! pool/holdout splitting.
//!
//! Class labels are stored zero-based in order of first appearance; the
//! original label strings are kept in `class_names`.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Pass-through display columns, never used as features.
    pub metadata_names: Vec<String>,
    pub metadata: Vec<Vec<String>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            metadata_names: self.metadata_names.clone(),
            metadata: if self.metadata.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.metadata[i].clone()).collect()
            },
        }
    }

    /// Random disjoint split into `(pool, holdout)` with `holdout` rows held out.
    pub fn split(&self, holdout: usize, seed: u64) -> Result<(Self, Self)> {
        if holdout >= self.len() {
            return Err(Error::Config(format!(
                "holdout of {holdout} rows leaves no pool out of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (held, kept) = order.split_at(holdout);
        let mut held = held.to_vec();
        let mut kept = kept.to_vec();
        held.sort_unstable();
        kept.sort_unstable();
        Ok((self.subset(&kept), self.subset(&held)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.len() {
            return Err(Error::InvalidInput("label count differs from row count".into()));
        }
        for (r, row) in self.features.iter().enumerate() {
            if row.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {r} has a non-finite feature")));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::InvalidInput(format!("label {bad} outside class range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvOptions {
    pub label_column: String,
    #[serde(default)]
    pub metadata_columns: Vec<String>,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            metadata_columns: Vec::new(),
        }
    }
}

/// Loads a headed CSV. Every column other than the label and metadata
/// columns must hold finite numbers.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    read_csv(path.as_ref(), opts, None)
}

/// Loads a CSV whose labels must already appear in `classes` (e.g. a holdout
/// file checked against its pool).
pub fn load_csv_with_classes(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
    classes: &[String],
) -> Result<Dataset> {
    read_csv(path.as_ref(), opts, Some(classes))
}

fn read_csv(path: &Path, opts: &CsvOptions, classes: Option<&[String]>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_col = headers
        .iter()
        .position(|h| *h == opts.label_column)
        .ok_or_else(|| Error::Config(format!("label column {:?} not in header", opts.label_column)))?;
    let mut meta_cols = Vec::with_capacity(opts.metadata_columns.len());
    for name in &opts.metadata_columns {
        let c = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("metadata column {name:?} not in header")))?;
        meta_cols.push(c);
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|c| *c != label_col && !meta_cols.contains(c))
        .collect();

    let mut ds = Dataset {
        feature_names: feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        metadata_names: opts.metadata_columns.clone(),
        class_names: classes.map(<[String]>::to_vec).unwrap_or_default(),
        ..Default::default()
    };
    let mut class_index: HashMap<String, usize> = ds
        .class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |c: usize| -> Result<&str> {
            let v = record.get(c).map(str::trim).unwrap_or("");
            if v.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: headers[c].clone(),
                    message: "missing value".into(),
                });
            }
            Ok(v)
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let raw = cell(c)?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].clone(),
                message: format!("{raw:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[c].clone(),
                    message: "non-finite value".into(),
                });
            }
            features.push(v);
        }
        let label = cell(label_col)?.to_string();
        let y = match class_index.get(&label) {
            Some(&y) => y,
            None if classes.is_some() => return Err(Error::UnseenLabel(label)),
            None => {
                let y = ds.class_names.len();
                ds.class_names.push(label.clone());
                class_index.insert(label, y);
                y
            }
        };
        if !meta_cols.is_empty() {
            ds.metadata.push(
                meta_cols
                    .iter()
                    .map(|&c| record.get(c).unwrap_or("").to_string())
                    .collect(),
            );
        }
        ds.features.push(features);
        ds.labels.push(y);
    }
    Ok(ds)
}

/// Writes features, then the label column (class names), then metadata.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    header.extend(ds.metadata_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for (i, row) in ds.features.iter().enumerate() {
        let mut out: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push(ds.class_names[ds.labels[i]].clone());
        if let Some(meta) = ds.metadata.get(i) {
            out.extend(meta.iter().cloned());
        }
        w.write_record(&out)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub points: usize,
    pub dim: usize,
    /// Minimum distance between any two cluster means.
    pub separation: f64,
    pub seed: u64,
}

/// Cluster means with every pair at least `separation` apart: evenly spaced
/// on a line for `p = 1`, on a circle in the first two coordinates otherwise.
pub fn blob_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut mean = vec![0.0; dim];
            if dim == 1 || classes == 2 {
                mean[0] = separation * (c as f64 - (classes - 1) as f64 / 2.0);
            } else {
                let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                mean[0] = radius * angle.cos();
                mean[1] = radius * angle.sin();
            }
            mean
        })
        .collect()
}

/// Unit-covariance Gaussian clusters with balanced sizes, rows shuffled.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.points < spec.classes || spec.dim == 0 {
        return Err(Error::InvalidInput(
            "blobs need ≥ 2 classes, at least one point per class and p ≥ 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = blob_means(spec.classes, spec.dim, spec.separation);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(spec.points);
    for (c, mean) in means.iter().enumerate() {
        let count = spec.points / spec.classes + usize::from(c < spec.points % spec.classes);
        for _ in 0..count {
            let x = mean
                .iter()
                .map(|m| m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            rows.push((x, c));
        }
    }
    rows.shuffle(&mut rng);
    Ok(Dataset {
        feature_names: (1..=spec.dim).map(|j| format!("x{j}")).collect(),
        labels: rows.iter().map(|r| r.1).collect(),
        features: rows.into_iter().map(|r| r.0).collect(),
        class_names: (1..=spec.classes).map(|c| c.to_string()).collect(),
        metadata_names: Vec::new(),
        metadata: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn labels_are_remapped_by_first_appearance() {
        let f = write("a1,a2,label\n1,2,a\n3,4,b\n5,6,a\n");
        let ds = load_csv(f.path(), &CsvOptions::new("label")).unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.features[1], vec![3.0, 4.0]);
    }

    #[test]
    fn blank_cell_is_named() {
        let f = write("a1,a2,label\n1,2,a\n3,,b\n");
        let err = load_csv(f.path(), &CsvOptions::new("label")).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_feature_is_rejected() {
        let f = write("a1,label\nfoo,a\n");
        assert!(matches!(
            load_csv(f.path(), &CsvOptions::new("label")),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn holdout_with_unseen_label_is_rejected() {
        let pool = write("a,label\n1,x\n2,y\n");
        let hold = write("a,label\n1,z\n");
        let ds = load_csv(pool.path(), &CsvOptions::new("label")).unwrap();
        let err = load_csv_with_classes(hold.path(), &CsvOptions::new("label"), &ds.class_names);
        assert!(matches!(err, Err(Error::UnseenLabel(l)) if l == "z"));
    }

    #[test]
    fn metadata_columns_are_not_features() {
        let f = write("a,thumb,label\n1,img0.png,x\n2,img1.png,y\n");
        let opts = CsvOptions {
            label_column: "label".into(),
            metadata_columns: vec!["thumb".into()],
        };
        let ds = load_csv(f.path(), &opts).unwrap();
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.metadata[1], vec!["img1.png".to_string()]);
    }

    #[test]
    fn one_point_per_class() {
        let ds = make_blobs(&BlobSpec {
            classes: 5,
            points: 5,
            dim: 3,
            separation: 4.0,
            seed: 1,
        })
        .unwrap();
        let mut labels = ds.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn blobs_are_seeded_and_balanced() {
        let spec = BlobSpec {
            classes: 4,
            points: 103,
            dim: 2,
            separation: 3.0,
            seed: 42,
        };
        let a = make_blobs(&spec).unwrap();
        let b = make_blobs(&spec).unwrap();
        assert_eq!(a, b);
        let mut counts = [0; 4];
        for &y in &a.labels {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| c == 25 || c == 26));
    }

    #[test]
    fn means_respect_separation() {
        for (classes, dim) in [(2, 1), (3, 1), (4, 2), (7, 3)] {
            let means = blob_means(classes, dim, 3.0);
            for i in 0..classes {
                for j in i + 1..classes {
                    let d = crate::exploration::euclidean(&means[i], &means[j]);
                    assert!(d >= 3.0 - 1e-9, "{classes} {dim} {d}");
                }
            }
        }
    }

    #[test]
    fn split_is_disjoint() {
        let ds = make_blobs(&BlobSpec {
            classes: 3,
            points: 30,
            dim: 2,
            separation: 3.0,
            seed: 0,
        })
        .unwrap();
        let (pool, hold) = ds.split(10, 5).unwrap();
        assert_eq!(pool.len(), 20);
        assert_eq!(hold.len(), 10);
        for x in &hold.features {
            assert!(!pool.features.contains(x));
        }
    }
}
