use firecast_core::seed;
use firecast_gan::autograd::{self as ag, Var};
use firecast_gan::loss::{critic_loss, generator_loss, gradient_penalty, interpolate, wgan_objective};
use firecast_gan::model::{CriticNet, Generator, GeneratorConfig, LinearCritic, MlpCritic};
use firecast_gan::nn::Binder;
use firecast_gan::Tensor;
use proptest::prelude::*;
use rand::Rng;

const SHAPE: (usize, usize, usize) = (3, 2, 2);
const N: usize = 12;
const HIDDEN: usize = 8;

fn random(shape: Vec<usize>, seed_: u64) -> Tensor {
    let mut rng = seed::rng(seed_);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
}

/// Independent double-precision model of the two-layer critic.
struct Oracle {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 { x } else { x.exp() - 1.0 }
}

fn elu_prime(x: f64) -> f64 {
    if x > 0.0 { 1.0 } else { x.exp() }
}

impl Oracle {
    fn from_flat(p: &[f64]) -> Self {
        let (w1, rest) = p.split_at(HIDDEN * N);
        let (b1, rest) = rest.split_at(HIDDEN);
        let (w2, rest) = rest.split_at(HIDDEN);
        Self {
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
        }
    }

    fn pre(&self, x: &[f64]) -> Vec<f64> {
        (0..HIDDEN)
            .map(|j| self.b1[j] + (0..N).map(|i| self.w1[j * N + i] * x[i]).sum::<f64>())
            .collect()
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.b2 + self.pre(x).iter().zip(&self.w2).map(|(h, w)| elu(*h) * w).sum::<f64>()
    }

    fn input_grad_norm(&self, x: &[f64]) -> f64 {
        let pre = self.pre(x);
        (0..N)
            .map(|i| {
                let g: f64 = (0..HIDDEN).map(|j| self.w2[j] * elu_prime(pre[j]) * self.w1[j * N + i]).sum();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    fn loss(&self, real: &[Vec<f64>], fake: &[Vec<f64>], interp: &[Vec<f64>], lambda: f64) -> f64 {
        let b = real.len() as f64;
        let mean = |xs: &[Vec<f64>]| xs.iter().map(|x| self.score(x)).sum::<f64>() / b;
        let pen = interp.iter().map(|x| (self.input_grad_norm(x) - 1.0).powi(2)).sum::<f64>() / b;
        -(mean(real) - mean(fake)) + lambda * pen
    }
}

fn items(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.batch()).map(|b| t.item(b).iter().map(|&v| v as f64).collect()).collect()
}

fn check_against_oracle(lambda: f64) {
    let critic = MlpCritic::new(SHAPE, HIDDEN, 7);
    let real = random(vec![4, 3, 2, 2], 1);
    let fake = random(vec![4, 3, 2, 2], 2);
    let eps = [0.1f32, 0.4, 0.7, 0.95];
    let bd = Binder::new(&critic.params, true);
    let cl = critic_loss(&critic, &bd, &real, &fake, &eps, lambda);
    cl.loss.backward();
    let analytic: Vec<f32> = bd.grads().concat();
    let flat: Vec<f64> = critic.params.tensors.iter().flat_map(|t| t.data.iter().map(|&v| v as f64)).collect();
    let (r, f, x) = (items(&real), items(&fake), items(&interpolate(&real, &fake, &eps)));
    let oracle_loss = Oracle::from_flat(&flat).loss(&r, &f, &x, lambda);
    assert!((cl.value() - oracle_loss).abs() < 1e-5 * oracle_loss.abs().max(1.0));
    let h = 1e-6;
    let fd: Vec<f64> = (0..flat.len())
        .map(|i| {
            let mut p = flat.clone();
            p[i] += h;
            let up = Oracle::from_flat(&p).loss(&r, &f, &x, lambda);
            p[i] -= 2.0 * h;
            let down = Oracle::from_flat(&p).loss(&r, &f, &x, lambda);
            (up - down) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (&a, &o)) in analytic.iter().zip(&fd).enumerate() {
        let err = (a as f64 - o).abs();
        assert!(err <= 1e-4 * o.abs().max(1e-2 * scale), "parameter {i}: {a} vs oracle {o}");
    }
}

#[test]
fn objective_gradient_matches_finite_differences() {
    check_against_oracle(0.0);
}

#[test]
fn penalized_critic_gradient_matches_finite_differences() {
    check_against_oracle(10.0);
}

#[test]
fn constant_critic_objective_is_zero() {
    assert_eq!(wgan_objective(&[0.3; 5], &[0.3; 7]), 0.0);
}

#[test]
fn perfect_separation_objective_is_one() {
    assert_eq!(wgan_objective(&[1.0; 4], &[0.0; 4]), 1.0);
}

fn unit_critic(norm: f32) -> LinearCritic {
    let mut w = vec![0.0; N];
    w[0] = 0.6 * norm;
    w[5] = 0.8 * norm;
    LinearCritic::new(SHAPE, w, 0.2)
}

#[test]
fn unit_slope_linear_critic_has_no_penalty() {
    let c = unit_critic(1.0);
    let bd = Binder::new(&c.params, true);
    let p = gradient_penalty(&c, &bd, &random(vec![3, 3, 2, 2], 4), 10.0);
    assert!(p.value.abs() < 1e-10, "{}", p.value);
    assert!(p.norms.iter().all(|n| (n - 1.0).abs() < 1e-6));
}

#[test]
fn doubled_slope_linear_critic_penalty_is_lambda() {
    let c = unit_critic(2.0);
    let bd = Binder::new(&c.params, true);
    let p = gradient_penalty(&c, &bd, &random(vec![3, 3, 2, 2], 5), 10.0);
    assert!((p.value - 10.0).abs() < 1e-5, "{}", p.value);
}

#[test]
fn generator_receives_no_gradient_from_the_real_term() {
    let mut cfg = GeneratorConfig::for_resolution(16).unwrap();
    cfg.latent_dim = 4;
    let g = Generator::new(cfg, 1).unwrap();
    let critic = MlpCritic::new((3, 16, 16), HIDDEN, 2);
    let meas = Var::constant(random(vec![2, 1, 16, 16], 6));
    let terr = Var::constant(random(vec![2, 1, 16, 16], 7));
    let z = Var::constant(random(vec![2, 4], 8));
    let real = Var::constant(random(vec![2, 3, 16, 16], 9));
    let frozen = Binder::new(&critic.params, false);

    let bd = Binder::new(&g.params, true);
    let fake = g.forward(&bd, &meas, &terr, &z).unwrap();
    let _fake_term = generator_loss(&critic, &ag::concat(&[&fake, &meas, &terr]));
    ag::mean(&critic.forward(&frozen, &real)).backward();
    assert!(bd.grads().iter().flatten().all(|&v| v == 0.0));

    let bd = Binder::new(&g.params, true);
    let fake = g.forward(&bd, &meas, &terr, &z).unwrap();
    let tuple = ag::concat(&[&fake, &meas, &terr]);
    let full = ag::add(&ag::mean(&critic.forward(&frozen, &real)), &generator_loss(&critic, &tuple));
    full.backward();
    let with_real = bd.grads();
    let bd = Binder::new(&g.params, true);
    let fake = g.forward(&bd, &meas, &terr, &z).unwrap();
    generator_loss(&critic, &ag::concat(&[&fake, &meas, &terr])).backward();
    assert_eq!(with_real, bd.grads());
    assert!(with_real.iter().flatten().any(|&v| v != 0.0));
}

proptest! {
    #[test]
    fn swapping_batches_negates_objective(
        real in prop::collection::vec(-5.0f32..5.0, 1..20),
        fake in prop::collection::vec(-5.0f32..5.0, 1..20),
    ) {
        prop_assert_eq!(wgan_objective(&real, &fake), -wgan_objective(&fake, &real));
    }

    #[test]
    fn penalty_is_never_negative(s in 0u64..1000, lambda in 0.0f64..20.0) {
        let c = MlpCritic::new(SHAPE, HIDDEN, s);
        let bd = Binder::new(&c.params, true);
        let p = gradient_penalty(&c, &bd, &random(vec![2, 3, 2, 2], s + 1), lambda);
        prop_assert!(p.value >= 0.0);
    }

    #[test]
    fn interpolates_lie_between_endpoints(s in 0u64..1000, e in 0.0f32..1.0) {
        let a = random(vec![2, 3, 2, 2], s);
        let b = random(vec![2, 3, 2, 2], s + 7);
        let x = interpolate(&a, &b, &[e, 1.0 - e]);
        for i in 0..x.len() {
            let (lo, hi) = (a.data[i].min(b.data[i]), a.data[i].max(b.data[i]));
            prop_assert!(x.data[i] >= lo - 1e-6 && x.data[i] <= hi + 1e-6);
        }
    }
}
