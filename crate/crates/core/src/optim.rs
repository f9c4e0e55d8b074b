//! Adam with bias correction.

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one network's parameters, in parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element> {
    pub config: AdamConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Parameter<T>]) -> Self {
        AdamState {
            config,
            step: 0,
            names: params.iter().map(|p| p.name.clone()).collect(),
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    /// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, mut params: Vec<&mut Parameter<T>>) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(Error::Contract(format!(
                "adam state tracks {} parameters, got {}",
                self.names.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.name != self.names[i] || p.value.shape() != self.m[i].shape() {
                return Err(Error::Contract(format!(
                    "adam slot {i} is {} {:?}, got {} {:?}",
                    self.names[i],
                    self.m[i].shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.epsilon);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            let theta = p.value.data_mut();
            for j in 0..theta.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: f64, grad: f64) -> Parameter<f64> {
        let mut p = Parameter::new("w", Tensor::scalar(value));
        p.grad = Tensor::scalar(grad);
        p
    }

    #[test]
    fn first_step_hand_values() {
        let mut p = param(1.0, 0.1);
        let mut s = AdamState::new(AdamConfig::default(), &[&p]);
        s.step(vec![&mut p]).unwrap();
        assert!((s.m[0].data()[0] - 0.05).abs() < 1e-15);
        assert!((s.v[0].data()[0] - 1e-5).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.9998).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = param(0.37, 0.0);
        let mut s = AdamState::new(AdamConfig::default(), &[&p]);
        s.step(vec![&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 0.37);
    }

    #[test]
    fn first_step_size_is_lr() {
        for g in [1e-2, -0.3, 5.0, 1234.5] {
            let mut p = param(0.0, g);
            let mut s = AdamState::new(AdamConfig::default(), &[&p]);
            s.step(vec![&mut p]).unwrap();
            let rel = (p.value.data()[0].abs() - 2e-4).abs() / 2e-4;
            assert!(rel < 1e-6, "g={g} rel={rel}");
            assert_eq!(p.value.data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let p = param(1.0, 1.0);
        let mut s = AdamState::new(AdamConfig::default(), &[&p]);
        let mut q = Parameter::new("w", Tensor::<f64>::zeros(&[2]));
        assert!(s.step(vec![&mut q]).is_err());
        assert!(s.step(vec![]).is_err());
        assert_eq!(s.step, 0);
    }
}
