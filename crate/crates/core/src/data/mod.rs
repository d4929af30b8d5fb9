//! Datasets, synthetic benchmark generation, file formats, and PCA export.

mod checkpoint;
mod dataset_io;
mod pca;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use dataset_io::{load_dataset, save_dataset};
pub use pca::{fit_pca, PcaProjection};
pub use synth::{gen_synthetic, rotation_matrix, simplex_vertices, MixMode, SynthConfig};

use ndarray::Array2;

use crate::error::{Result, UcslError};

/// A feature matrix with binary class labels and (optionally) held-out
/// subgroup labels.
///
/// `c_true[i]` is `-1` for unknown (always for controls) and the subgroup id
/// otherwise; it is never used by training, only by evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub y: Vec<i8>,
    pub c_true: Vec<i32>,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Vec<i8>, c_true: Vec<i32>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(UcslError::ContractViolation("dataset must have at least 1 sample".into()));
        }
        if y.len() != n || c_true.len() != n {
            return Err(UcslError::ShapeMismatch(format!(
                "dataset has {n} rows, {} labels, {} subgroup labels",
                y.len(),
                c_true.len()
            )));
        }
        crate::loss::check_labels(&y)?;
        for i in 0..n {
            if c_true[i] >= 0 && y[i] != 1 {
                return Err(UcslError::ContractViolation(format!(
                    "sample {i} is a control but carries subgroup label {}",
                    c_true[i]
                )));
            }
            if c_true[i] < -1 {
                return Err(UcslError::ContractViolation(format!(
                    "sample {i} has invalid subgroup label {}",
                    c_true[i]
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(UcslError::ContractViolation("non-finite feature value".into()));
        }
        Ok(Self { x, y, c_true })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_pos(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.n() - self.n_pos()
    }

    /// Feature rows of the positive samples, in dataset order.
    pub fn positive_rows(&self) -> Array2<f64> {
        let idx = crate::clustering::positive_indices(&self.y);
        let mut out = Array2::zeros((idx.len(), self.dim()));
        for (row, &i) in idx.iter().enumerate() {
            out.row_mut(row).assign(&self.x.row(i));
        }
        out
    }
}
