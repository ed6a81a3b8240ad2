//! Adam: per-parameter first and second moment estimates with bias correction.

use crate::error::{domain, Result};
use crate::math::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(domain(format!("learning rate {} must be finite and ≥ 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(domain(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(domain("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, step: 0, m: Vec::new(), v: Vec::new() })
    }

    /// Applies one update given gradients in the same order and shapes as
    /// `params`.
    pub fn step(&mut self, params: Vec<&mut Mat>, grads: Vec<&Mat>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "parameter and gradient shapes differ");
            for (((p, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Mat::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let g = Mat::from_vec(1, 2, vec![0.3, -5.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.1)).unwrap();
        opt.step(vec![&mut p], vec![&g]);
        assert!((p.as_slice()[0] - 0.9).abs() < 1e-6);
        assert!((p.as_slice()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Mat::from_vec(1, 3, vec![3.0, -2.0, 0.5]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.05)).unwrap();
        for _ in 0..2000 {
            let g = Mat::from_vec(1, 3, p.as_slice().iter().map(|x| 2.0 * (x - 1.0)).collect()).unwrap();
            opt.step(vec![&mut p], vec![&g]);
        }
        assert!(p.as_slice().iter().all(|x| (x - 1.0).abs() < 1e-3));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let g = Mat::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.0)).unwrap();
        opt.step(vec![&mut p], vec![&g]);
        assert_eq!(p.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Adam::new(AdamConfig::with_learning_rate(-1.0)).is_err());
        assert!(Adam::new(AdamConfig { beta1: 1.0, ..AdamConfig::default() }).is_err());
    }
}
