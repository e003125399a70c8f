//! Dense n-dimensional f64 arrays with shape metadata.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major dense float array. All entries are expected to stay finite;
/// layers check their outputs and surface [`Error::NonFinite`] otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn scalar_filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterprets the buffer under a new shape of equal length.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::reshaped",
                expected: shape.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Row `b` of a 2-d tensor.
    pub fn row(&self, b: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[b * w..(b + 1) * w]
    }

    pub fn row_mut(&mut self, b: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &mut self.data[b * w..(b + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
