//! Dense n-dimensional f32 arrays in row-major order.
//!
//! `Tensor` is the universal value type: samples, activations, smashed data,
//! gradients and parameters are all tensors. The leading dimension is the
//! batch dimension wherever a batch is involved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` accounts for every element.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Element count per batch row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Reinterprets the buffer under a new shape of equal volume.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                expected
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copies rows `[start, end)` of the batch dimension into a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if self.shape.is_empty() || end > self.batch() || start > end {
            return Err(Error::InvalidArgument(format!(
                "row slice {}..{} out of bounds for batch {}",
                start,
                end,
                self.batch()
            )));
        }
        let row = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(shape, self.data[start * row..end * row].to_vec())
    }

    /// Copies the rows at `indices` (in order) into a new tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let row = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= self.batch() {
                return Err(Error::InvalidArgument(format!(
                    "row index {} out of bounds for batch {}",
                    i,
                    self.batch()
                )));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Stacks `other` under `self` along the batch dimension.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Self> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::ShapeMismatch(format!(
                "cannot concat rows of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut shape = self.shape.clone();
        shape[0] = self.batch() + other.batch();
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Tensor::new(shape, data)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f32> {
        self.data.iter()
    }

    /// True when every element is finite (no NaN or infinity).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
