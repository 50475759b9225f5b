//! Adam and the learning-rate and mask-fraction schedules.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let b1 = T::lit(ADAM_BETA1);
        let b2 = T::lit(ADAM_BETA2);
        let t = self.steps as i32;
        let bc1 = 1.0 - num_traits::Float::powi(ADAM_BETA1, t);
        let bc2 = 1.0 - num_traits::Float::powi(ADAM_BETA2, t);
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(ADAM_EPS);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let denom = (self.v[i] * inv_bc2).sqrt() + eps;
            params[i] -= step * self.m[i] / denom;
        }
    }
}

/// Linear warmup from 0 to `lr_max`, then cosine decay to `lr_min`.
pub fn lr_schedule(iter: u64, total: u64, warmup: u64, lr_max: f64, lr_min: f64) -> f64 {
    if warmup > 0 && iter <= warmup {
        return lr_max * iter as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let t = ((iter - warmup.min(iter)) as f64 / span).min(1.0);
    lr_min + (lr_max - lr_min) * 0.5 * (1.0 + num_traits::Float::cos(core::f64::consts::PI * t))
}

/// Share of in-mask rays, linear in `iter` from `start` to `end`.
pub fn mask_fraction(iter: u64, total: u64, start: f64, end: f64) -> f64 {
    let t = if total == 0 { 1.0 } else { (iter as f64 / total as f64).min(1.0) };
    start + (end - start) * t
}
