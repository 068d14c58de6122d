//! Finite-difference gradient verification.
//!
//! The independent oracle for every backward rule: rebuild the forward pass
//! with each input element nudged ±h and compare the central difference
//! against the analytic gradient. Lives in the library (not test code) so
//! unit tests, the acceptance suite, and the book all drive the same checker,
//! but it never participates in training itself.

use crate::error::Result;
use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;

/// Central-difference step. At f64 this keeps truncation and roundoff both
/// below the comparison tolerance; at f32 the check would be meaningless.
pub const FD_STEP: f64 = 1e-5;

/// Tolerance every differentiable operation must meet.
pub const GRAD_TOL: f64 = 1e-4;

/// Guarded relative error: |a−n| / (max(|a|,|n|) + 1e-4). The additive floor
/// keeps near-zero gradients from amplifying finite-difference noise.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-4)
}

/// A scalar-valued computation built from leaf tensors.
pub trait LossFn: Fn(&mut Graph, &[TensorId]) -> Result<TensorId> {}
impl<F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>> LossFn for F {}

fn eval_loss(build: &impl LossFn, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    Ok(g.data(loss)[0])
}

/// Analytic gradients of `build`'s scalar output w.r.t. every input.
pub fn analytic_grads(build: &impl LossFn, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    Ok(ids
        .iter()
        .map(|&id| g.grad(id).expect("tracked leaf").to_vec())
        .collect())
}

/// Central-difference gradients w.r.t. every input element.
pub fn numeric_grads(build: &impl LossFn, inputs: &[Tensor], h: f64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for (pi, input) in inputs.iter().enumerate() {
        let mut grad = vec![0.0; input.numel()];
        for ei in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[pi].data_mut()[ei] += h;
            let mut minus = inputs.to_vec();
            minus[pi].data_mut()[ei] -= h;
            grad[ei] = (eval_loss(build, &plus)? - eval_loss(build, &minus)?) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Max guarded relative error between analytic and central-difference
/// gradients over all inputs. Callers assert `< GRAD_TOL`.
pub fn max_grad_err(build: impl LossFn, inputs: &[Tensor]) -> Result<f64> {
    let analytic = analytic_grads(&build, inputs)?;
    let numeric = numeric_grads(&build, inputs, FD_STEP)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            worst = worst.max(rel_err(av, nv));
        }
    }
    Ok(worst)
}

/// Random tensor with entries uniform in [-1, 1), for gradcheck inputs.
pub fn random_input(shape: Vec<usize>, rng: &mut crate::rng::Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.range(-1.0, 1.0)).collect();
    Tensor::new(shape, data).expect("finite random data")
}
