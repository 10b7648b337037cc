//! Adam with bias correction.

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter `{param}` at index {index}: {value}")]
    NonFinite { param: String, index: usize, value: f64 },
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
    #[error("gradient shape {got:?} does not match parameter `{param}` shape {expected:?}")]
    Shape { param: String, expected: Vec<usize>, got: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Adam {
            config,
            step: 0,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), OptimError> {
        if grads.len() != params.len() {
            return Err(OptimError::Count { expected: params.len(), got: grads.len() });
        }
        for (id, g) in params.ids().zip(grads) {
            let p = params.get(id);
            if p.shape() != g.shape() {
                return Err(OptimError::Shape {
                    param: params.name(id).to_string(),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if let Some((index, &value)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(OptimError::NonFinite { param: params.name(id).to_string(), index, value });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(values.to_vec()));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store(&[1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.values()[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, 40.0] {
            let mut p = store(&[0.0]);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            adam.step(&mut p, &[Tensor::from_vec(vec![g])]).unwrap();
            let moved = p.values()[0].item().abs();
            assert!((moved - 1e-3).abs() < 1e-7, "g={g}: moved {moved}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = store(&[1.0, 1.0]);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &p);
        let id = p.ids().next().unwrap();
        for _ in 0..200 {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let w = b.var(id);
            let sq = g.mul(w, w).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            adam.step(&mut p, &b.grads(&g)).unwrap();
        }
        let norm = p.values()[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.1, "norm {norm}");
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut p = store(&[1.0, 2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::from_vec(vec![0.1, f64::NAN])]).unwrap_err();
        assert!(matches!(err, OptimError::NonFinite { index: 1, .. }));
        assert_eq!(p.values()[0].data(), &[1.0, 2.0]);
        assert_eq!(adam.steps_taken(), 0);
    }
}
