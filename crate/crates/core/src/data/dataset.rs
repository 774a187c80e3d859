use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::container::{DType, Tensor};
use crate::binio;
use crate::diffnet::{Batch, InputDims};
use crate::error::{Error, Result};

/// Images as rows of an `N x (H*W*C)` matrix, pixels in [0,1], with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: InputDims,
    pub images: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
}

/// Dataset whose labels are present.
pub type LabeledSet = Dataset;
/// Dataset used only through its inputs.
pub type UnlabeledSet = Dataset;
/// Held-out test data.
pub type EvalSet = Dataset;

impl Dataset {
    pub fn new(dims: InputDims, images: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if images.ncols() != dims.len() {
            return Err(Error::input(format!(
                "image width {} does not match dims {:?}",
                images.ncols(),
                dims
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.nrows() {
                return Err(Error::input(format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.nrows()
                )));
            }
        }
        let ds = Self { dims, images, labels };
        ds.check_range()?;
        Ok(ds)
    }

    fn check_range(&self) -> Result<()> {
        for (r, row) in self.images.row_iter().enumerate() {
            if let Some((c, v)) = row.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("pixel {v} outside [0,1] at sample {r}, index {c}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.nrows() == 0
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::input("dataset has no labels"))
    }

    pub fn num_classes_seen(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |&m| m + 1)
    }

    /// Rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dims: self.dims,
            images: self.images.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let s = self.subset(indices);
        Batch::trusted(s.images, s.labels)
    }

    pub fn to_batch(&self) -> Batch {
        Batch::trusted(self.images.clone(), self.labels.clone())
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn to_tensor(&self, dtype: DType) -> Tensor {
        // DMatrix is column-major; the container is row-major
        let data: Vec<f64> = self.images.transpose().as_slice().to_vec();
        Tensor {
            dims: vec![self.len(), self.dims.height, self.dims.width, self.dims.channels],
            dtype,
            data,
            labels: self.labels.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (n, dims) = match t.dims[..] {
            [n, h, w, c] => (n, InputDims::new(h, w, c)),
            [n, d] => (n, InputDims::flat(d)),
            _ => {
                return Err(Error::Data(format!(
                    "expected a rank-2 or rank-4 tensor, got dims {:?}",
                    t.dims
                )))
            }
        };
        let images = DMatrix::from_row_slice(n, dims.len(), &t.data);
        Self::new(dims, images, t.labels)
    }

    /// Writes `f32` payloads; callers keep pixels `f32`-representable so this is lossless.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor(DType::F32).save(path)
    }

    pub fn save_f64(&self, path: &Path) -> Result<()> {
        self.to_tensor(DType::F64).save(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub dims: InputDims,
    /// Per-split sample counts, one entry per class.
    pub splits: BTreeMap<String, Vec<usize>>,
    pub pixel_scale: String,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::input(e.to_string()))?;
        binio::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn manifest_path(path: &Path) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE)
}

/// Loads a dataset container. When a `manifest.json` sits next to it, labels
/// are validated against its class count and the manifest is returned.
pub fn load_dataset(path: &Path) -> Result<(Dataset, Option<DatasetManifest>)> {
    let tensor = Tensor::load(path)?;
    let ds = Dataset::from_tensor(tensor)?;
    let mpath = manifest_path(path);
    let manifest = if mpath.exists() {
        Some(DatasetManifest::load(&mpath)?)
    } else {
        None
    };
    if let (Some(m), Some(labels)) = (&manifest, &ds.labels) {
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= m.num_classes()) {
            return Err(Error::Data(format!(
                "label {y} at sample {i} exceeds {} classes",
                m.num_classes()
            )));
        }
        if m.dims != ds.dims {
            return Err(Error::Data(format!(
                "dims {:?} disagree with manifest {:?}",
                ds.dims, m.dims
            )));
        }
    }
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let images = DMatrix::from_row_slice(
            2,
            4,
            &[
                0.1f32 as f64,
                0.2f32 as f64,
                1.0,
                0.0,
                0.3f32 as f64,
                0.5,
                0.7f32 as f64,
                0.9f32 as f64,
            ],
        );
        let ds = Dataset::new(InputDims::new(2, 2, 1), images, Some(vec![1, 0])).unwrap();
        let path = dir.path().join("d.adtn");
        ds.save(&path).unwrap();
        let (back, manifest) = load_dataset(&path).unwrap();
        assert!(manifest.is_none());
        assert_eq!(back, ds);
        assert!(back
            .images
            .iter()
            .zip(ds.images.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn out_of_range_pixel_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor {
            dims: vec![2, 1, 2, 1],
            dtype: DType::F32,
            data: vec![0.0, 0.5, 1.5, 0.2],
            labels: None,
        };
        let path = dir.path().join("bad.adtn");
        t.save(&path).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(
            matches!(err, Error::Data(ref m) if m.contains("sample 1, index 0")),
            "{err}"
        );
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(InputDims::flat(3), DMatrix::from_element(2, 3, 0.5), Some(vec![0, 1])).unwrap();
        let path = dir.path().join("d.adtn");
        ds.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_rejects_out_of_range_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(InputDims::flat(1), DMatrix::from_element(2, 1, 0.5), Some(vec![0, 2])).unwrap();
        ds.save(&dir.path().join("d.adtn")).unwrap();
        let manifest = DatasetManifest {
            name: "t".into(),
            class_names: vec!["a".into(), "b".into()],
            dims: InputDims::flat(1),
            splits: BTreeMap::new(),
            pixel_scale: "[0,1]".into(),
            seed: 0,
        };
        manifest.save(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(matches!(load_dataset(&dir.path().join("d.adtn")), Err(Error::Data(_))));
    }
}
