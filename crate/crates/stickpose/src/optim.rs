//! RMSProp with a per-parameter squared-gradient accumulator:
//! v <- rho v + (1 - rho) g^2, theta <- theta - lr g / (sqrt(v) + eps).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    v: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> RmsProp {
        RmsProp { lr, rho, eps, v: Vec::new() }
    }

    /// Spec defaults: rho 0.99, eps 1e-8.
    pub fn with_lr(lr: f64) -> RmsProp {
        RmsProp::new(lr, 0.99, 1e-8)
    }

    /// Update every parameter in place. Call with the same parameter list
    /// (same order, same shapes) every step.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                op: "rmsprop",
                detail: format!("{} params but {} grads", params.len(), grads.len()),
            });
        }
        if self.v.is_empty() {
            self.v = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        }
        for (i, ((name, theta), g)) in params.iter_mut().zip(grads).enumerate() {
            if theta.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "rmsprop",
                    detail: format!(
                        "param '{name}' is {:?} but grad is {:?}",
                        theta.shape(),
                        g.shape()
                    ),
                });
            }
            let v = &mut self.v[i];
            for ((t, &gv), vv) in theta.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.rho * *vv + (1.0 - self.rho) * gv * gv;
                *t -= self.lr * gv / (vv.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn accumulator(&self, i: usize) -> Option<&[f64]> {
        self.v.get(i).map(|v| v.as_slice())
    }
}
