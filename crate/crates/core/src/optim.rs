//! Adam with bias correction.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diffcore::{Real, Tensor};
use crate::nn::{ParamGrads, ParamSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("no gradient supplied for trainable parameter `{0}`")]
    MissingGrad(String),
    #[error("gradient for `{name}` has shape {got:?}, parameter has {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("moment accumulator for `{0}` missing; state built for a different parameter set")]
    Accumulator(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f64> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: BTreeMap<_, _> = params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    /// Defaults `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn with_lr(params: &ParamSet<T>, lr: f64) -> Self {
        Self::new(params, lr, 0.9, 0.999, 1e-8)
    }

    /// One update of every parameter in `params`. Validates all gradients
    /// before touching any parameter.
    pub fn apply(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &ParamGrads<T>,
    ) -> Result<(), OptimError> {
        for (name, p) in &params.tensors {
            let g = grads
                .get(name)
                .ok_or_else(|| OptimError::MissingGrad(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(OptimError::Shape {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !self.m.contains_key(name) || !self.v.contains_key(name) {
                return Err(OptimError::Accumulator(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (name, p) in params.tensors.iter_mut() {
            let g = grads[name].data();
            let m = self.m.get_mut(name).unwrap().data_mut();
            let v = self.v.get_mut(name).unwrap().data_mut();
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
