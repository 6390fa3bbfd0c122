//! Parameter storage and the layer building blocks shared by the generator
//! and critic. Layers work on [`Dual`] values: a primal activation plus an
//! optional tangent carried alongside it (forward-mode directional
//! derivative), which the critic needs for the gradient penalty.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{self as ag, Var};
use crate::tensor::Tensor;
use firecast_core::seed::Rng;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> usize {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape, data))
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }
}

/// Parameters lifted into graph leaves for one forward pass.
pub struct Binder {
    vars: Vec<Var>,
}

impl Binder {
    pub fn new(params: &ParamSet, requires_grad: bool) -> Self {
        Self {
            vars: params.tensors.iter().map(|t| Var::leaf(t.clone(), requires_grad)).collect(),
        }
    }

    pub fn get(&self, i: usize) -> &Var {
        &self.vars[i]
    }

    /// Gradients after `backward`, zeros where nothing flowed.
    pub fn grads(&self) -> Vec<Vec<f32>> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.value().len()]))
            .collect()
    }
}

/// A primal activation and, optionally, its tangent.
#[derive(Clone, Debug)]
pub struct Dual {
    pub p: Var,
    pub t: Option<Var>,
}

impl Dual {
    pub fn primal(p: Var) -> Self {
        Self { p, t: None }
    }

    pub fn new(p: Var, t: Var) -> Self {
        Self { p, t: Some(t) }
    }

    fn map_linear(&self, f: impl Fn(&Var) -> Var) -> Self {
        Self {
            p: f(&self.p),
            t: self.t.as_ref().map(f),
        }
    }

    pub fn elu(&self) -> Self {
        Self {
            p: ag::elu(&self.p),
            t: self.t.as_ref().map(|t| ag::mul(&ag::elu_deriv(&self.p), t)),
        }
    }

    pub fn avg_pool(&self, p: usize) -> Self {
        self.map_linear(|v| ag::avg_pool(v, p))
    }

    pub fn upsample(&self, p: usize) -> Self {
        self.map_linear(|v| ag::upsample(v, p))
    }

    pub fn flatten(&self) -> Self {
        self.map_linear(ag::flatten)
    }

    pub fn concat(parts: &[&Dual]) -> Self {
        let p: Vec<&Var> = parts.iter().map(|d| &d.p).collect();
        let t = if parts.iter().all(|d| d.t.is_some()) {
            let ts: Vec<&Var> = parts.iter().map(|d| d.t.as_ref().unwrap()).collect();
            Some(ag::concat(&ts))
        } else {
            assert!(parts.iter().all(|d| d.t.is_none()), "mixed primal and dual inputs to concat");
            None
        };
        Self { p: ag::concat(&p), t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn new(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        let fan = cin * k * k;
        let w = ps.add_uniform(format!("{name}.w"), vec![cout, fan], fan, rng);
        let b = ps.add_uniform(format!("{name}.b"), vec![cout], fan, rng);
        Self { w, b, k, cin, cout }
    }

    pub fn forward(&self, bd: &Binder, x: &Var) -> Var {
        ag::conv2d(x, bd.get(self.w), Some(bd.get(self.b)), self.k)
    }

    pub fn dual(&self, bd: &Binder, x: &Dual) -> Dual {
        Dual {
            p: self.forward(bd, &x.p),
            t: x.t.as_ref().map(|t| ag::conv2d(t, bd.get(self.w), None, self.k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, fin: usize, fout: usize, rng: &mut Rng) -> Self {
        let w = ps.add_uniform(format!("{name}.w"), vec![fout, fin], fin, rng);
        let b = ps.add_uniform(format!("{name}.b"), vec![fout], fin, rng);
        Self { w, b, fin, fout }
    }

    /// Weights `U(-scale, scale)` and a constant bias.
    pub fn with_init(ps: &mut ParamSet, name: &str, fin: usize, fout: usize, scale: f32, bias: f32, rng: &mut Rng) -> Self {
        let data = (0..fin * fout).map(|_| rng.random_range(-scale..scale)).collect();
        let w = ps.add(format!("{name}.w"), Tensor::new(vec![fout, fin], data));
        let b = ps.add(format!("{name}.b"), Tensor::full(vec![fout], bias));
        Self { w, b, fin, fout }
    }

    pub fn forward(&self, bd: &Binder, x: &Var) -> Var {
        ag::linear(x, bd.get(self.w), Some(bd.get(self.b)))
    }

    pub fn dual(&self, bd: &Binder, x: &Dual) -> Dual {
        Dual {
            p: self.forward(bd, &x.p),
            t: x.t.as_ref().map(|t| ag::linear(t, bd.get(self.w), None)),
        }
    }
}

/// Latent-driven scale and shift for instance-normalized features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cin {
    pub gamma: Linear,
    pub beta: Linear,
}

/// Spread of the initial latent projection weights.
const CIN_INIT_SCALE: f32 = 0.05;

impl Cin {
    pub fn new(ps: &mut ParamSet, name: &str, latent: usize, channels: usize, rng: &mut Rng) -> Self {
        Self {
            gamma: Linear::with_init(ps, &format!("{name}.gamma"), latent, channels, CIN_INIT_SCALE, 1.0, rng),
            beta: Linear::with_init(ps, &format!("{name}.beta"), latent, channels, CIN_INIT_SCALE, 0.0, rng),
        }
    }

    pub fn forward(&self, bd: &Binder, x: &Var, z: &Var) -> Var {
        let g = self.gamma.forward(bd, z);
        let b = self.beta.forward(bd, z);
        ag::modulate(&ag::instance_norm(x), &g, &b)
    }
}

/// Densely connected block: each sub-block sees the concatenation of the
/// block input and all earlier sub-block outputs and adds `growth` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub cin: usize,
    pub growth: usize,
    pub convs: Vec<Conv>,
    /// Present in the generator only.
    pub norms: Vec<Cin>,
}

impl DenseBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        growth: usize,
        sub_blocks: usize,
        latent: Option<usize>,
        rng: &mut Rng,
    ) -> Self {
        assert!(sub_blocks >= 1);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..sub_blocks {
            let c = cin + i * growth;
            if let Some(nz) = latent {
                norms.push(Cin::new(ps, &format!("{name}.{i}.cin"), nz, c, rng));
            }
            convs.push(Conv::new(ps, &format!("{name}.{i}.conv"), c, growth, 3, rng));
        }
        Self {
            cin,
            growth,
            convs,
            norms,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cin + self.convs.len() * self.growth
    }

    /// Generator path: CIN -> ELU -> conv per sub-block.
    pub fn forward(&self, bd: &Binder, x: &Var, z: &Var) -> Var {
        let mut feats = x.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let h = ag::elu(&norm.forward(bd, &feats, z));
            let new = conv.forward(bd, &h);
            feats = ag::concat(&[&feats, &new]);
        }
        feats
    }

    /// Critic path: ELU -> conv per sub-block, with tangents.
    pub fn dual(&self, bd: &Binder, x: &Dual) -> Dual {
        let mut feats = x.clone();
        for conv in &self.convs {
            let new = conv.dual(bd, &feats.elu());
            feats = Dual::concat(&[&feats, &new]);
        }
        feats
    }
}
