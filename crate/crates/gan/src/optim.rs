use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.9,
            weight_decay: 1e-7,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Vec<f32>]) {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let wd = c.weight_decay as f32;
        let step_size = (c.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = c.eps as f32;
        for (((t, g), m), v) in params.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &gi), mi), vi) in t.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + wd * *p;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *p -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamSet::default();
        ps.add("x", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &ps);
        opt.update(&mut ps, &[vec![0.3, -7.0, 0.0]]);
        let d: Vec<f32> = ps.tensors[0].data.clone();
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((d[1] - (-2.0 + 1e-3)).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::default();
        ps.add("x", Tensor::new(vec![2], vec![3.0, -4.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &ps);
        for _ in 0..2000 {
            let g: Vec<f32> = ps.tensors[0].data.iter().map(|&x| 2.0 * x).collect();
            opt.update(&mut ps, &[g]);
        }
        let d = &ps.tensors[0].data;
        assert!(d.iter().all(|x| x.abs() < 0.1), "{d:?}");
    }
}
