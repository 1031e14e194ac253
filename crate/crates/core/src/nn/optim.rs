//! SGD with momentum and a cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::net::{Layer, SupernetState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// Update every element that received a gradient since the last step,
    /// then clear the gradients. Elements outside the sampled slices keep
    /// their values and their momentum.
    pub fn step(&self, state: &mut SupernetState, lr: f64) {
        for t in state.layers.iter_mut().flat_map(Layer::tensors_mut) {
            for i in 0..t.value.len() {
                if !t.touched[i] {
                    continue;
                }
                let g = t.grad[i] + self.weight_decay * t.value[i];
                t.momentum[i] = self.momentum * t.momentum[i] + g;
                t.value[i] -= lr * t.momentum[i];
                t.grad[i] = 0.0;
                t.touched[i] = false;
            }
        }
        state.step += 1;
    }
}

/// `lr0 / 2 * (1 + cos(pi * step / total))`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = step.min(total) as f64 / total as f64;
    0.5 * lr0 * (1.0 + (PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1), 0.1);
        assert!((cosine_lr(50, 100, 0.1) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.1).abs() < 1e-15);
        assert!(cosine_lr(200, 100, 0.1).abs() < 1e-15);
    }
}
