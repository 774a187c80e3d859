use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A minibatch: one sample per row of `inputs`, pixels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(inputs: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::input("batch must contain at least one sample"));
        }
        if let Some((idx, v)) = inputs.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            // column-major storage: recover (row, col)
            let (r, c) = (idx % inputs.nrows(), idx / inputs.nrows());
            return Err(Error::Data(format!(
                "pixel value {v} at sample {r}, index {c} outside [0,1]"
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != inputs.nrows() {
                return Err(Error::input(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    inputs.nrows()
                )));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn labeled(inputs: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        Self::new(inputs, Some(labels))
    }

    /// Builds a batch from sample-contiguous rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::input("ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), dim, &flat), labels)
    }

    pub(crate) fn trusted(inputs: DMatrix<f64>, labels: Option<Vec<usize>>) -> Self {
        debug_assert!(inputs.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::input("operation requires a labeled batch"))
    }
}
