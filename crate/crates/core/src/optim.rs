//! SGD with momentum and L2 weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Grads;
use crate::{shape_err, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Some gradient was NaN or infinite; parameters were left untouched.
    SkippedNonFinite,
}

/// Momentum SGD: `buf = μ buf + (g + wd p)`, `p -= lr buf`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(shapes: &[usize], momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffers: shapes.iter().map(|&n| vec![T::zero(); n]).collect() }
    }

    /// Applies one update. `lrs[i]` is the learning rate of parameter tensor `i`.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &Grads<T>, lrs: &[f64]) -> Result<StepOutcome> {
        if params.len() != grads.len() || params.len() != self.buffers.len() || lrs.len() != params.len() {
            return Err(shape_err!(
                "{} parameter tensors, {} gradients, {} buffers, {} learning rates",
                params.len(),
                grads.len(),
                self.buffers.len(),
                lrs.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.buffers[i].len() {
                return Err(shape_err!("tensor {i}: {} params vs {} grads", p.len(), g.len()));
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient, skipping optimizer step");
            return Ok(StepOutcome::SkippedNonFinite);
        }
        let mu = T::of(self.momentum);
        let wd = T::of(self.weight_decay);
        for ((p, g), (buf, &lr)) in params.iter_mut().zip(grads).zip(self.buffers.iter_mut().zip(lrs)) {
            let lr = T::of(lr);
            for ((pv, &gv), bv) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
                let d = gv + wd * *pv;
                *bv = mu * *bv + d;
                *pv -= lr * *bv;
            }
        }
        Ok(StepOutcome::Applied)
    }
}
