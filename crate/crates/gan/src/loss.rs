//! Wasserstein objective and gradient penalty.
//!
//! The penalty needs the parameter gradient of a function of the input
//! gradient. Rather than differentiating the backward pass, the input
//! gradient `g_b` of each interpolate is computed first (reverse mode,
//! parameters frozen), then a tangent pass pushes the fixed direction `g_b`
//! through the critic, giving `s_b = grad_x d(x_b) . g_b` as an ordinary
//! differentiable graph. With `c_b = lambda / B * 2 (|g_b| - 1) / |g_b|`
//! held constant, the parameter gradient of `sum_b c_b s_b` equals that of
//! `lambda * mean_b (|g_b| - 1)^2`.

use crate::autograd::{self as ag, Var};
use crate::model::CriticNet;
use crate::nn::{Binder, Dual};
use crate::tensor::Tensor;

/// `E[d(real)] - E[d(fake)]`.
pub fn wgan_objective(d_real: &[f32], d_fake: &[f32]) -> f64 {
    let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    mean(d_real) - mean(d_fake)
}

/// `eps_b * real_b + (1 - eps_b) * fake_b`, one `eps` per batch item.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f32]) -> Tensor {
    assert_eq!(real.shape, fake.shape);
    assert_eq!(eps.len(), real.batch());
    let n = real.item_len();
    let data = real
        .data
        .iter()
        .zip(&fake.data)
        .enumerate()
        .map(|(i, (&r, &f))| {
            let e = eps[i / n];
            e * r + (1.0 - e) * f
        })
        .collect();
    Tensor::new(real.shape.clone(), data)
}

/// Gradient of each batch item's critic score with respect to that item.
pub fn input_gradients<C: CriticNet + ?Sized>(critic: &C, x: &Tensor) -> Tensor {
    let frozen = Binder::new(critic.params(), false);
    let xv = Var::leaf(x.clone(), true);
    ag::sum(&critic.forward(&frozen, &xv)).backward();
    Tensor::new(x.shape.clone(), xv.grad().expect("input reached by backward"))
}

pub struct Penalty {
    /// `lambda * mean_b (|g_b| - 1)^2`.
    pub value: f64,
    /// `|g_b|` per batch item.
    pub norms: Vec<f64>,
    /// Scalar whose parameter gradient is the penalty's parameter gradient.
    pub surrogate: Var,
}

/// Gradient penalty at the interpolates `x`, with gradients flowing into the
/// parameters bound in `bd`.
pub fn gradient_penalty<C: CriticNet + ?Sized>(critic: &C, bd: &Binder, x: &Tensor, lambda: f64) -> Penalty {
    let g = input_gradients(critic, x);
    let b = x.batch();
    let norms: Vec<f64> = g.item_sq_norms().into_iter().map(f64::sqrt).collect();
    let value = lambda * norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / b as f64;
    let coef: Vec<f32> = norms
        .iter()
        .map(|&n| if n > 0.0 { (lambda / b as f64 * 2.0 * (n - 1.0) / n) as f32 } else { 0.0 })
        .collect();
    let dual = critic.dual(bd, &Dual::new(Var::constant(x.clone()), Var::constant(g)));
    let tangent = dual.t.expect("tangent output");
    Penalty {
        value,
        norms,
        surrogate: ag::sum(&ag::mul_const(&tangent, coef)),
    }
}

pub struct CriticLoss {
    /// Scalar to minimize: `-objective + penalty` (penalty via its surrogate).
    pub loss: Var,
    pub objective: f64,
    pub penalty: f64,
    pub mean_grad_norm: f64,
}

impl CriticLoss {
    pub fn value(&self) -> f64 {
        -self.objective + self.penalty
    }
}

/// Critic loss on one batch. `real` and `fake` are `[B, 3, H, W]` tuples
/// `(arrival, measurement, terrain)`; `eps` sets the interpolates.
pub fn critic_loss<C: CriticNet + ?Sized>(
    critic: &C,
    bd: &Binder,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f32],
    lambda: f64,
) -> CriticLoss {
    let b = real.batch();
    let both = Var::constant(Tensor::cat_batch(&[real, fake]));
    let scores = critic.forward(bd, &both);
    let w: Vec<f32> = (0..2 * b).map(|i| if i < b { -1.0 / b as f32 } else { 1.0 / b as f32 }).collect();
    let neg_objective = ag::sum(&ag::mul_const(&scores, w));
    let (d_real, d_fake) = scores.value().data.split_at(b);
    let objective = wgan_objective(d_real, d_fake);
    let pen = gradient_penalty(critic, bd, &interpolate(real, fake, eps), lambda);
    CriticLoss {
        loss: ag::add(&neg_objective, &pen.surrogate),
        objective,
        penalty: pen.value,
        mean_grad_norm: pen.norms.iter().sum::<f64>() / b as f64,
    }
}

/// `-E[d(fake)]` for a fake tuple batch that carries generator gradients.
pub fn generator_loss<C: CriticNet + ?Sized>(critic: &C, fake_tuple: &Var) -> Var {
    let frozen = Binder::new(critic.params(), false);
    ag::scale(&ag::mean(&critic.forward(&frozen, fake_tuple)), -1.0)
}
