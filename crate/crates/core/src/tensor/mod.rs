//! Dense row-major `f64` tensors and a reverse-mode tape.
//!
//! Every reduction in this module runs left to right over the row-major
//! layout, so results are bit-identical for identical inputs.

mod tape;

pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::log_sum_exp;

use crate::error::{Error, Result};

/// Dense tensor. The shape is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Input(format!("tensor extents must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector tensors must be non-empty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim("item", &self.shape, &[1]));
        }
        Ok(self.data[0])
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Flattened copy.
    pub fn flatten(&self) -> Self {
        Self::vector(self.data.clone())
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::dim(op, other, &[0, 0])),
        }
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (r, s) = self.as_matrix("matmul")?;
        let (s2, t) = other.as_matrix("matmul")?;
        if s != s2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; r * t];
        for i in 0..r {
            let row = &self.data[i * s..(i + 1) * s];
            for j in 0..t {
                let mut acc = 0.0;
                for (p, &a) in row.iter().enumerate() {
                    acc += a * other.data[p * t + j];
                }
                out[i * t + j] = acc;
            }
        }
        Tensor::new(vec![r, t], out)
    }

    /// `self` (r×s) applied to a length-s vector.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let (r, s) = self.as_matrix("matvec")?;
        if x.len() != s {
            return Err(Error::dim("matvec", &self.shape, &x.shape));
        }
        let out = (0..r)
            .map(|i| dot_slices(&self.data[i * s..(i + 1) * s], &x.data))
            .collect();
        Ok(Tensor::vector(out))
    }

    /// `selfᵀ · g` for a length-r vector `g`; sums over rows in index order.
    pub fn matvec_transposed(&self, g: &Tensor) -> Result<Tensor> {
        let (r, s) = self.as_matrix("matvec_transposed")?;
        if g.len() != r {
            return Err(Error::dim("matvec_transposed", &self.shape, &g.shape));
        }
        let mut out = vec![0.0; s];
        for (i, &gi) in g.data.iter().enumerate() {
            let row = &self.data[i * s..(i + 1) * s];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        Ok(Tensor::vector(out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Inner product over the flattened data of two equally sized tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim("dot", &self.shape, &other.shape));
        }
        Ok(dot_slices(&self.data, &other.data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.data, &self.data).sqrt()
    }

    /// Mean over non-overlapping windows of a flat vector.
    pub fn average_pool(&self, window: usize) -> Result<Tensor> {
        if window == 0 || self.len() % window != 0 {
            return Err(Error::Input(format!(
                "average_pool window {window} does not divide length {}",
                self.len()
            )));
        }
        let inv = 1.0 / window as f64;
        let out = self
            .data
            .chunks(window)
            .map(|c| c.iter().sum::<f64>() * inv)
            .collect();
        Ok(Tensor::vector(out))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn cosine(&self, other: &Tensor) -> Result<f64> {
        let d = self.dot(other)?;
        Ok(d / (self.norm() * other.norm()))
    }
}

/// Left-to-right inner product.
pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
