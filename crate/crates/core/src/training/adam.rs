use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<_> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Restore saved moments; they must line up with `params`.
    pub fn from_state(
        params: &ParamStore<T>,
        step: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let mut adam = Adam::new(params);
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer holds {}/{} moments for {} parameters",
                m.len(),
                v.len(),
                params.len()
            )));
        }
        for (id, (mi, vi)) in params.ids().zip(m.iter().zip(&v)) {
            let shape = params.get(id).shape();
            if mi.shape() != shape || vi.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "optimizer state for `{}` has shape {} but the parameter is {shape}",
                    params.name(id),
                    mi.shape()
                )));
            }
        }
        adam.step = step;
        adam.m = m;
        adam.v = v;
        Ok(adam)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensors()[i].shape() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "gradient {} for `{}` of shape {}",
                        g.shape(),
                        params.iter().nth(i).map(|(n, _)| n).unwrap_or("?"),
                        params.tensors()[i].shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let step_size = T::from_f64(lr / (1.0 - self.beta1.powi(t)));
        let bc2_sqrt = T::from_f64((1.0 - self.beta2.powi(t)).sqrt());
        let eps = T::from_f64(self.eps);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let denom = v[j].sqrt() / bc2_sqrt + eps;
                *w = *w - step_size * m[j] / denom;
            }
        }
        Ok(())
    }
}

/// `base · 0.5^⌊epoch / period⌋`.
pub fn lr_schedule(epoch: usize, base: f64, period: usize) -> f64 {
    base * 0.5f64.powi((epoch / period.max(1)) as i32)
}
