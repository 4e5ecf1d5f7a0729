use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum.
///
/// `v ← m·v + g`, `p ← p − lr·v`. Gradients are zeroed after each step.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update to every tensor in `params`.
    ///
    /// The parameter list must be passed in the same order on every call.
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if let Some(bad) = p.grad().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of parameter {i} at element {bad}"),
                });
            }
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if !p.requires_grad() {
                p.zero_grad();
                continue;
            }
            let grad = p.grad().to_vec();
            for ((w, vel), g) in p.values_mut().iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vel = self.momentum * *vel + g;
                *w -= self.lr * *vel;
            }
            p.zero_grad();
        }
        Ok(())
    }
}
