//! Dense float64 tensors and a tape-based reverse-mode autodiff graph.
//!
//! Image tensors use NHWC layout: `[batch, height, width, channels]`.

mod graph;
mod kernels;

pub use graph::{Grads, Graph, Var};

use crate::error::{Error, Result};
use crate::image::RasterImage;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: Vec::new(), data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, h, w, c] => Ok([n, h, w, c]),
            _ => Err(Error::shape(format!("expected a 4-D tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally sized images into `[n, h, w, 3]`.
    pub fn from_images(images: &[&RasterImage]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::shape("empty image batch"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(images.len() * h * w * 3);
        for img in images {
            if !img.same_size(first) {
                return Err(Error::shape("images in a batch differ in size"));
            }
            data.extend_from_slice(img.data());
        }
        Self::new(vec![images.len(), h, w, 3], data)
    }

    /// Splits an `[n, h, w, 3]` tensor into images, clamping into `[-1, 1]`.
    pub fn to_images(&self) -> Result<Vec<RasterImage>> {
        let [n, h, w, c] = self.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("expected 3 channels, got {c}")));
        }
        self.data
            .chunks_exact(h * w * 3)
            .take(n)
            .map(|chunk| RasterImage::from_clamped(h, w, chunk.to_vec()))
            .collect()
    }

    /// Concatenates tensors along the leading (batch) axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let tail = &first.shape[1..];
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.len() != first.shape.len() || &p.shape[1..] != tail {
                return Err(Error::shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Self::new(shape, data)
    }

    /// Rows `[start, start + len)` of the leading axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| Error::shape("cannot slice a scalar"))?;
        if start + len > n {
            return Err(Error::shape(format!("slice {start}..{} of batch {n}", start + len)));
        }
        let per = self.data.len() / n.max(1);
        let mut shape = self.shape.clone();
        shape[0] = len;
        Self::new(shape, self.data[start * per..(start + len) * per].to_vec())
    }
}
