use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` from `grads` (same order and shapes on every
    /// call). A zero learning rate leaves the parameters untouched.
    pub fn update(&mut self, lr: f64, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::DimensionMismatch("parameter and gradient tensors differ".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::DimensionMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.step.min(i32::MAX as u64) as i32);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                if lr != 0.0 {
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::default();
        let mut p = [1.0, -2.0, 0.5];
        let g = vec![vec![0.3, -4.0, 0.0]];
        adam.update(0.1, vec![&mut p[..]], &g).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut adam = Adam::default();
        let mut p = [1.0f64, -0.0, 3.25];
        let before: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        for _ in 0..3 {
            adam.update(0.0, vec![&mut p[..]], &[vec![1.0, 2.0, -1.0]]).unwrap();
        }
        assert_eq!(before, p.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::default();
        let mut x = [3.0f64, -2.0];
        for _ in 0..3000 {
            let g = vec![x.iter().map(|v| 2.0 * v).collect::<Vec<_>>()];
            adam.update(0.01, vec![&mut x[..]], &g).unwrap();
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = Adam::default();
        let mut p = [0.0; 2];
        assert!(adam.update(0.1, vec![&mut p[..]], &[vec![0.0; 3]]).is_err());
    }
}
