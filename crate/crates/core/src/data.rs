//! Labeled sample sets shared by the network, task and diagnostic code.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Inputs and targets, one row per sample.
///
/// For cross-entropy targets hold the class index in column 0; for the other
/// losses they hold the regression or 0/1 label vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                x.rows(),
                y.rows()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
        }
    }

    /// Index list covering every sample once.
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}
