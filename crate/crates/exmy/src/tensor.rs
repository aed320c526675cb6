//! A minimal dense fp32 tensor: a flat row-major buffer plus a shape.
//!
//! Block quantization only needs a 2D view. Higher-rank tensors are viewed as
//! `(product of leading dims) x last_dim`, which matches how per-row and
//! sub-row blocks are defined on the innermost axis.

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidShape("shape must have rank >= 1".into()));
        }
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::InvalidShape("shape dimensions must be nonzero".into()));
        }
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {:?} holds {} elements but buffer has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Rows and columns of the canonical 2D view: all leading dimensions
    /// flatten into rows, the last dimension is the columns.
    pub fn view_2d(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("rank >= 1");
        (self.data.len() / cols, cols)
    }
}
