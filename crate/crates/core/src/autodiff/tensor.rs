use crate::error::{Error, Result};

/// A dense row-major array of `f64` values with a gradient accumulator.
///
/// Tensors hold the persistent state of a model (network weights, learnable
/// loss parameters). A forward pass copies them onto a [`Tape`](super::Tape)
/// and the resulting gradients are accumulated back with
/// [`Gradients::accumulate_into`](super::Gradients::accumulate_into).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// A constant tensor. Fails when `values.len()` disagrees with `shape`.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    numel(shape),
                    values.len()
                ),
            ));
        }
        let grad = vec![0.0; values.len()];
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad,
            requires_grad: false,
        })
    }

    /// A trainable tensor.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            requires_grad: false,
        }
    }

    /// A trainable scalar (shape `[]`).
    pub fn scalar_param(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
            grad: vec![0.0],
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.values[0]
    }
}
