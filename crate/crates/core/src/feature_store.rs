//! Labeled feature sets, their on-disk format, and sphere normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias_removal::{complete_head, ClassifierHead, CompletedHead, DEFAULT_RANK_TOL};
use crate::container::{self, DType, Writer};
use crate::error::{check_dim, NodiError, Result};

/// Relative tolerance on `‖v‖ = r` for normalized vectors.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub dim: usize,
    pub num_classes: usize,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub split_tag: String,
    pub dtype: DType,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    n: usize,
    dim: usize,
    num_classes: usize,
    dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_tag: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    n: usize,
    dim: usize,
    num_classes: usize,
    dtype: DType,
    radius: f64,
    split_tag: String,
}

impl FeatureSet {
    pub fn new(
        dim: usize,
        num_classes: usize,
        vectors: Vec<Vec<f64>>,
        labels: Vec<usize>,
        split_tag: impl Into<String>,
    ) -> Result<Self> {
        let set = FeatureSet {
            dim,
            num_classes,
            vectors,
            labels,
            split_tag: split_tag.into(),
            dtype: DType::F64,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.vectors.len(), self.labels.len())?;
        for (row, (v, &label)) in self.vectors.iter().zip(&self.labels).enumerate() {
            check_dim(self.dim, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(NodiError::Config(format!("non-finite value in row {row}")));
            }
            if label >= self.num_classes {
                return Err(NodiError::Label {
                    row,
                    label: label as u64,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    /// Vectors grouped by label, in row order within each class.
    pub fn by_class(&self) -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (v, &l) in self.vectors.iter().zip(&self.labels) {
            out[l].push(v.clone());
        }
        out
    }

    /// Applies bias-absorbing encoding to every row.
    pub fn encoded(&self, completed: &CompletedHead) -> Result<FeatureSet> {
        let vectors = self
            .vectors
            .iter()
            .map(|v| completed.encode(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            dim: completed.encoded_dim(),
            num_classes: self.num_classes,
            vectors,
            labels: self.labels.clone(),
            split_tag: self.split_tag.clone(),
            dtype: self.dtype,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut payload): (FeatureHeader, _) = container::open(bytes)?;
        let flat = payload.reals(h.n * h.dim, h.dtype, "features")?;
        let raw_labels = payload.labels(h.n)?;
        payload.finish()?;
        let labels = checked_labels(&raw_labels, h.num_classes)?;
        Ok(FeatureSet {
            dim: h.dim,
            num_classes: h.num_classes,
            vectors: split_rows(flat, h.dim, h.n),
            labels,
            split_tag: h.split_tag.unwrap_or_default(),
            dtype: h.dtype,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = FeatureHeader {
            n: self.len(),
            dim: self.dim,
            num_classes: self.num_classes,
            dtype: self.dtype,
            split_tag: (!self.split_tag.is_empty()).then(|| self.split_tag.clone()),
        };
        let mut w = Writer::new(&header)?;
        w.reals(self.vectors.iter().flatten(), self.dtype);
        let labels: Vec<u32> = self.labels.iter().map(|&l| l as u32).collect();
        w.labels(&labels);
        Ok(w.into_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

fn split_rows(flat: Vec<f64>, dim: usize, n: usize) -> Vec<Vec<f64>> {
    if dim == 0 {
        return vec![Vec::new(); n];
    }
    flat.chunks_exact(dim).map(<[f64]>::to_vec).collect()
}

fn checked_labels(raw: &[u32], num_classes: usize) -> Result<Vec<usize>> {
    raw.iter()
        .enumerate()
        .map(|(row, &l)| {
            if (l as usize) < num_classes {
                Ok(l as usize)
            } else {
                Err(NodiError::Label {
                    row,
                    label: l as u64,
                    num_classes,
                })
            }
        })
        .collect()
}

/// In-distribution reference points projected onto the sphere of radius `r`,
/// partitioned by class. Index `c` of `per_class` holds class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFeatureSet {
    pub radius: f64,
    pub dim: usize,
    pub per_class: Vec<Vec<Vec<f64>>>,
    pub split_tag: String,
    pub dtype: DType,
}

impl NormalizedFeatureSet {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points of every class, in class order.
    pub fn pooled(&self) -> Vec<Vec<f64>> {
        self.per_class.iter().flatten().cloned().collect()
    }

    /// Checks the sphere invariant on every stored vector.
    pub fn check_norms(&self) -> Result<()> {
        for (c, points) in self.per_class.iter().enumerate() {
            for (i, v) in points.iter().enumerate() {
                let n = l2_norm(v);
                if (n - self.radius).abs() > NORM_TOL * self.radius {
                    return Err(NodiError::Config(format!(
                        "class {c} point {i} has norm {n}, expected {}",
                        self.radius
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = StoreHeader {
            n: self.len(),
            dim: self.dim,
            num_classes: self.num_classes(),
            dtype: self.dtype,
            radius: self.radius,
            split_tag: self.split_tag.clone(),
        };
        let mut w = Writer::new(&header)?;
        w.reals(self.per_class.iter().flatten().flatten(), self.dtype);
        let labels: Vec<u32> = self
            .per_class
            .iter()
            .enumerate()
            .flat_map(|(c, pts)| std::iter::repeat_n(c as u32, pts.len()))
            .collect();
        w.labels(&labels);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut payload): (StoreHeader, _) = container::open(bytes)?;
        if !(h.radius > 0.0) {
            return Err(NodiError::format(8, format!("radius must be > 0, got {}", h.radius)));
        }
        let flat = payload.reals(h.n * h.dim, h.dtype, "store vectors")?;
        let raw_labels = payload.labels(h.n)?;
        payload.finish()?;
        let labels = checked_labels(&raw_labels, h.num_classes)?;
        let mut per_class = vec![Vec::new(); h.num_classes];
        for (v, l) in split_rows(flat, h.dim, h.n).into_iter().zip(labels) {
            per_class[l].push(v);
        }
        let store = NormalizedFeatureSet {
            radius: h.radius,
            dim: h.dim,
            per_class,
            split_tag: h.split_tag,
            dtype: h.dtype,
        };
        store.check_norms()?;
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `r·y/‖y‖`; rejects the origin.
pub fn project_to_sphere(v: &[f64], radius: f64, row: usize) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 {
        return Err(NodiError::DegenerateFeature { row });
    }
    let s = radius / n;
    Ok(v.iter().map(|x| x * s).collect())
}

pub fn normalize(set: &FeatureSet, radius: f64) -> Result<NormalizedFeatureSet> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(NodiError::Config(format!("radius must be > 0, got {radius}")));
    }
    let mut per_class = vec![Vec::new(); set.num_classes];
    for (row, (v, &l)) in set.vectors.iter().zip(&set.labels).enumerate() {
        per_class[l].push(project_to_sphere(v, radius, row)?);
    }
    let out = NormalizedFeatureSet {
        radius,
        dim: set.dim,
        per_class,
        split_tag: set.split_tag.clone(),
        // f32 storage cannot hold the norm invariant at NORM_TOL.
        dtype: DType::F64,
    };
    out.check_norms()?;
    Ok(out)
}

/// Default sphere radius: 7 when the head is at least as wide as the class
/// count (the ResNet-like case), 4 otherwise.
pub fn default_radius(latent_dim: usize, num_classes: usize) -> f64 {
    if latent_dim >= num_classes {
        7.0
    } else {
        4.0
    }
}

pub fn ingest(feature_file: &Path, head_file: Option<&Path>, radius: f64) -> Result<NormalizedFeatureSet> {
    let set = FeatureSet::read(feature_file)?;
    let head = head_file.map(ClassifierHead::read).transpose()?;
    ingest_set(&set, head.as_ref(), radius)
}

pub fn ingest_set(set: &FeatureSet, head: Option<&ClassifierHead>, radius: f64) -> Result<NormalizedFeatureSet> {
    match head {
        Some(head) => {
            if head.num_classes() != set.num_classes {
                return Err(NodiError::Config(format!(
                    "head has {} classes, feature file has {}",
                    head.num_classes(),
                    set.num_classes
                )));
            }
            let completed = complete_head(head, DEFAULT_RANK_TOL)?;
            normalize(&set.encoded(&completed)?, radius)
        }
        None => normalize(set, radius),
    }
}
