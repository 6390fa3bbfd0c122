//! Generator (U-Net with latent-conditioned dense blocks) and critic
//! networks, plus two tiny reference critics used to check the losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{self as ag, Var};
use crate::error::{GanError, Result};
use crate::nn::{Binder, Conv, DenseBlock, Dual, Linear, ParamSet};
use firecast_core::seed::{self, Rng};

/// One U-Net stage: pool/upsample factor `pool`, channel multiplier `widen`,
/// dense block growth `growth` with `sub_blocks` sub-blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub pool: usize,
    pub widen: usize,
    pub growth: usize,
    pub sub_blocks: usize,
}

impl StageSpec {
    pub const fn new(pool: usize, widen: usize, growth: usize, sub_blocks: usize) -> Self {
        Self {
            pool,
            widen,
            growth,
            sub_blocks,
        }
    }
}

/// Number of halving stages for a square input: down to an 8 x 8 bottleneck.
pub fn stages_for(resolution: usize) -> Result<usize> {
    if !resolution.is_power_of_two() || resolution < 16 {
        return Err(GanError::Config(format!(
            "resolution {resolution} must be a power of two >= 16"
        )));
    }
    Ok(resolution.trailing_zeros() as usize - 3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub in_channels: usize,
    pub latent_dim: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub down: Vec<StageSpec>,
    /// Applied deepest first; `up[i]` mirrors `down[len - 1 - i]`.
    pub up: Vec<StageSpec>,
    pub bottleneck: StageSpec,
}

impl GeneratorConfig {
    pub fn for_resolution(resolution: usize) -> Result<Self> {
        let l = stages_for(resolution)?;
        let stage = StageSpec::new(2, 2, 8, 2);
        Ok(Self {
            resolution,
            in_channels: 2,
            latent_dim: 100,
            out_channels: 1,
            base_channels: 16,
            max_channels: 64,
            down: vec![stage; l],
            up: vec![stage; l],
            bottleneck: stage,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GanError::Config(m));
        if self.in_channels != 2 || self.out_channels != 1 {
            return bad("generator maps 2 input channels to 1 output channel".into());
        }
        if self.down.len() != self.up.len() {
            return bad(format!("{} down stages but {} up stages", self.down.len(), self.up.len()));
        }
        if self.latent_dim == 0 || self.base_channels == 0 || self.max_channels < self.base_channels {
            return bad("latent and channel sizes must be positive".into());
        }
        for (i, u) in self.up.iter().enumerate() {
            let d = self.down[self.down.len() - 1 - i];
            if u.pool != d.pool || u.widen != d.widen {
                return bad(format!("up stage {i} does not mirror its down stage"));
            }
        }
        check_stages(self.resolution, self.down.iter().chain(self.up.iter()).chain([&self.bottleneck]), &self.down)
    }

    /// Channel width after each down stage, index 0 being the stem.
    pub fn widths(&self) -> Vec<usize> {
        widths(self.base_channels, self.max_channels, &self.down)
    }
}

fn widths(base: usize, max: usize, stages: &[StageSpec]) -> Vec<usize> {
    let mut w = vec![base];
    for s in stages {
        w.push((w.last().unwrap() * s.widen).min(max));
    }
    w
}

fn check_stages<'a>(resolution: usize, all: impl Iterator<Item = &'a StageSpec>, down: &[StageSpec]) -> Result<()> {
    for s in all {
        if s.pool < 1 || s.widen < 1 || s.growth < 1 || s.sub_blocks < 1 {
            return Err(GanError::Config(format!("stage {s:?} has a zero field")));
        }
    }
    let total: usize = down.iter().map(|s| s.pool).product();
    if resolution == 0 || resolution % total != 0 {
        return Err(GanError::Config(format!(
            "resolution {resolution} not divisible by total pooling {total}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct DownBlock {
    conv: Conv,
    pool: usize,
    dense: DenseBlock,
    transition: Conv,
}

#[derive(Debug, Clone, PartialEq)]
struct UpBlock {
    conv: Conv,
    pool: usize,
    dense: DenseBlock,
    transition: Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    stem: Conv,
    downs: Vec<DownBlock>,
    bottleneck: DenseBlock,
    bottleneck_transition: Conv,
    ups: Vec<UpBlock>,
    head: Conv,
}

impl Generator {
    pub fn new(config: GeneratorConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng: Rng = seed::rng(seed::derive(init_seed, "generator-init", 0));
        let rng = &mut rng;
        let mut ps = ParamSet::default();
        let w = config.widths();
        let nz = Some(config.latent_dim);
        let stem = Conv::new(&mut ps, "stem", config.in_channels, w[0], 3, rng);
        let mut downs = Vec::new();
        for (l, s) in config.down.iter().enumerate() {
            let name = format!("down{}", l + 1);
            let conv = Conv::new(&mut ps, &format!("{name}.conv"), w[l], w[l + 1], 3, rng);
            let dense = DenseBlock::new(&mut ps, &format!("{name}.dense"), w[l + 1], s.growth, s.sub_blocks, nz, rng);
            let transition = Conv::new(&mut ps, &format!("{name}.transition"), dense.out_channels(), w[l + 1], 1, rng);
            downs.push(DownBlock {
                conv,
                pool: s.pool,
                dense,
                transition,
            });
        }
        let deepest = *w.last().unwrap();
        let b = config.bottleneck;
        let bottleneck = DenseBlock::new(&mut ps, "bottleneck.dense", deepest, b.growth, b.sub_blocks, nz, rng);
        let bottleneck_transition = Conv::new(&mut ps, "bottleneck.transition", bottleneck.out_channels(), deepest, 1, rng);
        let mut ups = Vec::new();
        let depth = config.down.len();
        for (i, s) in config.up.iter().enumerate() {
            let l = depth - i;
            let name = format!("up{l}");
            let conv = Conv::new(&mut ps, &format!("{name}.conv"), 2 * w[l], w[l - 1], 3, rng);
            let dense = DenseBlock::new(&mut ps, &format!("{name}.dense"), w[l - 1], s.growth, s.sub_blocks, nz, rng);
            let transition = Conv::new(&mut ps, &format!("{name}.transition"), dense.out_channels(), w[l - 1], 1, rng);
            ups.push(UpBlock {
                conv,
                pool: s.pool,
                dense,
                transition,
            });
        }
        let head = Conv::new(&mut ps, "head", 2 * w[0], config.out_channels, 3, rng);
        Ok(Self {
            config,
            params: ps,
            stem,
            downs,
            bottleneck,
            bottleneck_transition,
            ups,
            head,
        })
    }

    pub(crate) fn stem_weight(&self) -> usize {
        self.stem.w
    }

    /// `measurement`, `terrain`: `[batch, 1, r, r]` in [0, 1]; `z`: `[batch, latent]`.
    /// Returns `[batch, 1, r, r]` in [0, 1].
    pub fn forward(&self, bd: &Binder, measurement: &Var, terrain: &Var, z: &Var) -> Result<Var> {
        let r = self.config.resolution;
        let b = measurement.shape()[0];
        for (what, v) in [("measurement", measurement), ("terrain", terrain)] {
            if v.shape() != [b, 1, r, r] {
                return Err(GanError::Shape(format!("{what} {:?}, expected [{b}, 1, {r}, {r}]", v.shape())));
            }
        }
        if z.shape() != [b, self.config.latent_dim] {
            return Err(GanError::Shape(format!("latent {:?}, expected [{b}, {}]", z.shape(), self.config.latent_dim)));
        }
        let x = ag::concat(&[measurement, terrain]);
        let stem = ag::elu(&self.stem.forward(bd, &x));
        let mut skips = Vec::with_capacity(self.downs.len());
        let mut h = stem.clone();
        for d in &self.downs {
            h = ag::avg_pool(&ag::elu(&d.conv.forward(bd, &h)), d.pool);
            h = d.transition.forward(bd, &d.dense.forward(bd, &h, z));
            skips.push(h.clone());
        }
        h = self
            .bottleneck_transition
            .forward(bd, &self.bottleneck.forward(bd, &h, z));
        for u in &self.ups {
            let skip = skips.pop().expect("one skip per stage");
            let c = ag::elu(&u.conv.forward(bd, &ag::concat(&[&h, &skip])));
            h = u.transition.forward(bd, &u.dense.forward(bd, &ag::upsample(&c, u.pool), z));
        }
        let out = self.head.forward(bd, &ag::concat(&[&h, &stem]));
        Ok(ag::sigmoid(&out))
    }
}

/// A critic network: maps `[batch, c, h, w]` to `[batch, 1]`, carrying an
/// optional tangent through every layer.
pub trait CriticNet {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// `(channels, height, width)` of one input.
    fn input_shape(&self) -> (usize, usize, usize);
    fn dual(&self, bd: &Binder, x: &Dual) -> Dual;

    fn forward(&self, bd: &Binder, x: &Var) -> Var {
        self.dual(bd, &Dual::primal(x.clone())).p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub resolution: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub stages: Vec<StageSpec>,
    pub hidden: usize,
}

impl CriticConfig {
    pub fn for_resolution(resolution: usize) -> Result<Self> {
        let l = stages_for(resolution)?;
        Ok(Self {
            resolution,
            in_channels: 3,
            base_channels: 8,
            max_channels: 64,
            stages: vec![StageSpec::new(2, 2, 8, 1); l],
            hidden: 64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 {
            return Err(GanError::Config("critic takes 3 input channels".into()));
        }
        if self.hidden == 0 || self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(GanError::Config("critic sizes must be positive".into()));
        }
        check_stages(self.resolution, self.stages.iter(), &self.stages)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub config: CriticConfig,
    pub params: ParamSet,
    stem: Conv,
    downs: Vec<DownBlock>,
    fc1: Linear,
    fc2: Linear,
}

impl Critic {
    pub fn new(config: CriticConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng: Rng = seed::rng(seed::derive(init_seed, "critic-init", 0));
        let rng = &mut rng;
        let mut ps = ParamSet::default();
        let w = widths(config.base_channels, config.max_channels, &config.stages);
        let stem = Conv::new(&mut ps, "stem", config.in_channels, w[0], 3, rng);
        let mut downs = Vec::new();
        let mut side = config.resolution;
        for (l, s) in config.stages.iter().enumerate() {
            let name = format!("down{}", l + 1);
            let conv = Conv::new(&mut ps, &format!("{name}.conv"), w[l], w[l + 1], 3, rng);
            let dense = DenseBlock::new(&mut ps, &format!("{name}.dense"), w[l + 1], s.growth, s.sub_blocks, None, rng);
            let transition = Conv::new(&mut ps, &format!("{name}.transition"), dense.out_channels(), w[l + 1], 1, rng);
            downs.push(DownBlock {
                conv,
                pool: s.pool,
                dense,
                transition,
            });
            side /= s.pool;
        }
        let flat = w.last().unwrap() * side * side;
        let fc1 = Linear::new(&mut ps, "fc1", flat, config.hidden, rng);
        let fc2 = Linear::new(&mut ps, "fc2", config.hidden, 1, rng);
        Ok(Self {
            config,
            params: ps,
            stem,
            downs,
            fc1,
            fc2,
        })
    }
}

impl CriticNet for Critic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.in_channels, self.config.resolution, self.config.resolution)
    }

    fn dual(&self, bd: &Binder, x: &Dual) -> Dual {
        let mut h = self.stem.dual(bd, x).elu();
        for d in &self.downs {
            h = d.conv.dual(bd, &h).elu().avg_pool(d.pool);
            h = d.transition.dual(bd, &d.dense.dual(bd, &h));
        }
        let h = self.fc1.dual(bd, &h.flatten()).elu();
        self.fc2.dual(bd, &h)
    }
}

/// Two-layer perceptron critic on flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCritic {
    pub shape: (usize, usize, usize),
    pub params: ParamSet,
    fc1: Linear,
    fc2: Linear,
}

impl MlpCritic {
    pub fn new(shape: (usize, usize, usize), hidden: usize, init_seed: u64) -> Self {
        let mut rng: Rng = seed::rng(init_seed);
        let mut ps = ParamSet::default();
        let n = shape.0 * shape.1 * shape.2;
        let fc1 = Linear::new(&mut ps, "fc1", n, hidden, &mut rng);
        let fc2 = Linear::new(&mut ps, "fc2", hidden, 1, &mut rng);
        Self {
            shape,
            params: ps,
            fc1,
            fc2,
        }
    }
}

impl CriticNet for MlpCritic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn dual(&self, bd: &Binder, x: &Dual) -> Dual {
        let h = self.fc1.dual(bd, &x.flatten()).elu();
        self.fc2.dual(bd, &h)
    }
}

/// `d(x) = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCritic {
    pub shape: (usize, usize, usize),
    pub params: ParamSet,
    fc: Linear,
}

impl LinearCritic {
    pub fn new(shape: (usize, usize, usize), weights: Vec<f32>, bias: f32) -> Self {
        let n = shape.0 * shape.1 * shape.2;
        assert_eq!(weights.len(), n);
        let mut ps = ParamSet::default();
        let w = ps.add("fc.w", crate::tensor::Tensor::new(vec![1, n], weights));
        let b = ps.add("fc.b", crate::tensor::Tensor::new(vec![1], vec![bias]));
        Self {
            shape,
            params: ps,
            fc: Linear { w, b, fin: n, fout: 1 },
        }
    }
}

impl CriticNet for LinearCritic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn dual(&self, bd: &Binder, x: &Dual) -> Dual {
        self.fc.dual(bd, &x.flatten())
    }
}
