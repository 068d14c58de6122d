//! Dense row-major tensors.
//!
//! `Tensor` is a plain value: a shape plus `f64` storage, with an optional
//! gradient buffer of the same shape. All differentiable computation happens
//! through [`crate::graph::Graph`], which owns intermediate tensors and
//! records the operations that produced them.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite value in tensor data"));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(vec![1], value)
    }

    /// Row-major matrix from nested slices, for tests and small fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Tensor::new(vec![r, c], data)
    }

    /// Xavier/Glorot-uniform init for a weight matrix of the given shape.
    /// Values are rounded to f32 precision so checkpoints round-trip exactly.
    pub fn xavier_uniform(shape: Vec<usize>, rng: &mut Rng) -> Self {
        let (fan_in, fan_out) = match shape.len() {
            2 => (shape[0], shape[1]),
            _ => {
                let n: usize = shape.iter().product();
                (n, n)
            }
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| (rng.range(-bound, bound) as f32) as f64)
            .collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// normal(0, std) init used for embeddings and codebook tokens, rounded
    /// to f32 precision like `xavier_uniform`.
    pub fn normal_init(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| (rng.normal(0.0, std) as f32) as f64)
            .collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Enable gradient tracking; allocates the same-shape accumulator.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.requires_grad = true;
        self.grad = Some(grad);
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Element accessor for 2D tensors.
    pub fn at2(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Max relative error between two slices, with an absolute floor so values
/// near zero compare sanely. Shared by gradient checks and oracle tests.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs() + 1e-8).max(1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_is_error() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn non_finite_data_is_error() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn grad_allocated_iff_requested() {
        let t = Tensor::zeros(vec![2, 2]);
        assert!(t.grad().is_none());
        let t = t.with_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 4]);
    }

    #[test]
    fn init_is_seed_deterministic_and_f32_exact() {
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        let ta = Tensor::xavier_uniform(vec![4, 4], &mut a);
        let tb = Tensor::xavier_uniform(vec![4, 4], &mut b);
        assert_eq!(ta.data(), tb.data());
        for &v in ta.data() {
            assert_eq!(v, (v as f32) as f64);
        }
    }
}
