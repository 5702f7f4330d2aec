//! Adam optimizer with bias correction and a linear learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            v: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
        }
    }

    /// One bias-corrected update at learning rate `lr`. Parameters are kept
    /// on the f32 grid after the update.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::TensorShape("adam: parameter/gradient count mismatch".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            if p.shape() != g.shape() {
                return Err(Error::TensorShape("adam: gradient shape mismatch".into()));
            }
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = BETA1 * md[i] + (1.0 - BETA1) * gd[i];
                vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + EPSILON);
            }
            p.quantize_f32();
        }
        Ok(())
    }
}

/// Linear schedule from `lr_start` to `lr_end` over `total` epochs.
pub fn scheduled_lr(epoch: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total <= 1 {
        return lr_start;
    }
    let f = epoch as f64 / (total - 1) as f64;
    lr_start + (lr_end - lr_start) * f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![3], vec![0.5, -0.25, 1.0]).unwrap();
        let mut state = AdamState::new(&[&p]);
        let before = p.clone();
        state.step(&mut [&mut p], &[Tensor::zeros(&[3])], 1e-3).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // bias-corrected first step with g = 1: delta = -lr * 1/(1 + eps')
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut state = AdamState::new(&[&p]);
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        state.step(&mut [&mut p], &[g], 1e-3).unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn second_identical_step_not_larger() {
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut state = AdamState::new(&[&p]);
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        state.step(&mut [&mut p], &[g.clone()], 1e-3).unwrap();
        let d1 = p.data()[0].abs();
        let before = p.data()[0];
        state.step(&mut [&mut p], &[g], 1e-3).unwrap();
        let d2 = (p.data()[0] - before).abs();
        assert!(d2 <= d1 * 1.01, "d1={d1} d2={d2}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new(&[&p]);
        assert!(state.step(&mut [&mut p], &[Tensor::zeros(&[3])], 1e-3).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(scheduled_lr(0, 100, 1e-3, 1e-4), 1e-3);
        assert!((scheduled_lr(99, 100, 1e-3, 1e-4) - 1e-4).abs() < 1e-12);
        let mid = scheduled_lr(50, 100, 1e-3, 1e-4);
        assert!(mid < 1e-3 && mid > 1e-4);
    }
}
