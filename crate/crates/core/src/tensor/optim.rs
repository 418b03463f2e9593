use alloc::format;
use alloc::vec::Vec;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 1e-3, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// First/second moment buffers and the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T: Scalar = f32> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState { m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

impl Adam {
    /// One bias-corrected Adam update of `params` in place.
    pub fn step<T: Scalar>(
        &self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        state: &mut AdamState<T>,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params but {} grads", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if state.m.is_empty() {
            state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            state.v = state.m.clone();
        } else if state.m.len() != params.len()
            || state.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::shape("adam_step", "optimizer state does not match params"));
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (nb1, nb2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let step_size = T::from_f64(self.lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.eps);
        for (((p, g), m), v) in
            params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + nb1 * gv;
                *vv = b2 * *vv + nb2 * gv * gv;
                let denom = (*vv * inv_bc2).sqrt() + eps;
                *pv = *pv - step_size * *mv / denom;
            }
        }
        Ok(())
    }
}
