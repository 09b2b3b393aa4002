use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &[Matrix], beta1: f64, beta2: f64) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { beta1, beta2, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for (((pv, gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
            }
        }
    }
}

/// Linear warmup to `peak`, then decay proportional to `1/sqrt(step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseSqrtSchedule {
    pub peak: f64,
    pub warmup: usize,
}

impl InverseSqrtSchedule {
    /// Learning rate for 1-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup.max(1) as f64;
        if step < warmup {
            self.peak * step / warmup
        } else {
            self.peak * (warmup / step).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = InverseSqrtSchedule { peak: 1e-3, warmup: 100 };
        assert!((s.lr(50) - 5e-4).abs() < 1e-15);
        assert!((s.lr(100) - 1e-3).abs() < 1e-15);
        assert!((s.lr(400) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = vec![Matrix::filled(1, 2, 5.0)];
        let mut opt = Adam::new(&params, 0.9, 0.98);
        for _ in 0..2000 {
            let g = params[0].scale(2.0);
            opt.update(&mut params, &[g], 0.05);
        }
        assert!(params[0].max_abs() < 1e-2);
    }
}
