//! Alternating critic/generator training with per-epoch metrics and
//! resumable checkpoints.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{self as ag, Var};
use crate::error::{GanError, Result};
use crate::loss::{critic_loss, generator_loss};
use crate::model::{Critic, CriticConfig, Generator, GeneratorConfig};
use crate::nn::{Binder, ParamSet};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;
use firecast_core::dataset::UnitTuple;
use firecast_core::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub critic_steps_per_gen: usize,
    pub gp_lambda: f64,
    pub seed: u64,
    /// Fixed latent draws per validation tuple for the mismatch metric.
    pub val_latents: usize,
    /// Checkpoint cadence in epochs; the final epoch is always saved.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            epochs: 160,
            adam: AdamConfig::default(),
            critic_steps_per_gen: 5,
            gp_lambda: 10.0,
            seed: 0,
            val_latents: 4,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if self.batch == 0 || self.epochs == 0 || self.critic_steps_per_gen == 0 || self.val_latents == 0 {
            return Err(GanError::Config("batch, epochs, critic steps and validation latents must be positive".into()));
        }
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.weight_decay < 0.0 {
            return Err(GanError::Config(format!("optimizer settings {a:?} out of range")));
        }
        if !(self.gp_lambda >= 0.0) {
            return Err(GanError::Config("gradient penalty weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One normalized training tuple, each field `r * r` values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub arrival: Vec<f32>,
    pub measurement: Vec<f32>,
    pub terrain: Vec<f32>,
}

impl From<&UnitTuple> for TrainSample {
    fn from(t: &UnitTuple) -> Self {
        Self {
            arrival: t.arrival.data.clone(),
            measurement: t.measurement.data.clone(),
            terrain: t.terrain.data.clone(),
        }
    }
}

/// Random access to training tuples, in memory or on disk.
pub trait DataSource {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> Result<TrainSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DataSource for [TrainSample] {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn get(&self, i: usize) -> Result<TrainSample> {
        Ok(self[i].clone())
    }
}

impl DataSource for Vec<TrainSample> {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn get(&self, i: usize) -> Result<TrainSample> {
        Ok(self[i].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub penalty: f64,
    pub validation_mismatch: f64,
    /// Mean Wasserstein estimate `E[d(real)] - E[d(fake)]` over critic steps.
    pub objective: f64,
    /// Mean critic input-gradient norm at the interpolates.
    pub grad_norm: f64,
}

/// Field-major conditioning tensors for a batch.
struct Batch {
    real: Tensor,
    measurement: Tensor,
    terrain: Tensor,
}

fn gather(data: &dyn DataSource, idx: &[usize], r: usize) -> Result<Batch> {
    let samples = idx.iter().map(|&i| data.get(i)).collect::<Result<Vec<_>>>()?;
    for s in &samples {
        if s.arrival.len() != r * r || s.measurement.len() != r * r || s.terrain.len() != r * r {
            return Err(GanError::Shape(format!("tuple is not {r}x{r}")));
        }
    }
    let b = samples.len();
    let field = |f: fn(&TrainSample) -> &Vec<f32>| {
        let items: Vec<&[f32]> = samples.iter().map(|s| &f(s)[..]).collect();
        Tensor::stack(&items, &[1, r, r])
    };
    let arrival = field(|s| &s.arrival);
    let measurement = field(|s| &s.measurement);
    let terrain = field(|s| &s.terrain);
    let real = Tensor::cat_channels(&[&arrival, &measurement, &terrain]);
    debug_assert_eq!(real.batch(), b);
    Ok(Batch {
        real,
        measurement,
        terrain,
    })
}

pub fn normal_latents(rng: &mut Rng, batch: usize, dim: usize) -> Tensor {
    let data = (0..batch * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![batch, dim], data)
}

fn finite(v: f64, epoch: usize, step: usize, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GanError::Diverged { epoch, step, what })
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub critic: Critic,
    pub gen_opt: Adam,
    pub critic_opt: Adam,
    pub rng: Rng,
    /// Epochs completed.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(gen_cfg: GeneratorConfig, critic_cfg: CriticConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if gen_cfg.resolution != critic_cfg.resolution {
            return Err(GanError::Config(format!(
                "generator resolution {} != critic resolution {}",
                gen_cfg.resolution, critic_cfg.resolution
            )));
        }
        let generator = Generator::new(gen_cfg, config.seed)?;
        let critic = Critic::new(critic_cfg, config.seed)?;
        Ok(Self {
            gen_opt: Adam::new(config.adam, &generator.params),
            critic_opt: Adam::new(config.adam, &critic.params),
            rng: seed::rng(seed::derive(config.seed, "train", 0)),
            epoch: 0,
            config,
            generator,
            critic,
        })
    }

    fn resolution(&self) -> usize {
        self.generator.config.resolution
    }

    fn fake_tuples(&self, batch: &Batch, z: Tensor) -> Result<Tensor> {
        let frozen = Binder::new(&self.generator.params, false);
        let fake = self.generator.forward(
            &frozen,
            &Var::constant(batch.measurement.clone()),
            &Var::constant(batch.terrain.clone()),
            &Var::constant(z),
        )?;
        Ok(Tensor::cat_channels(&[fake.value(), &batch.measurement, &batch.terrain]))
    }

    /// One pass over `train` followed by the validation metric.
    pub fn train_epoch(&mut self, train: &dyn DataSource, val: &dyn DataSource) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(GanError::Config("empty training set".into()));
        }
        let epoch = self.epoch + 1;
        let r = self.resolution();
        let nz = self.generator.config.latent_dim;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut c_loss, mut pen, mut obj, mut gnorm, mut g_loss) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut c_steps, mut g_steps) = (0usize, 0usize);
        for (step, idx) in order.chunks(self.config.batch).enumerate() {
            let batch = gather(train, idx, r)?;
            let b = idx.len();
            for _ in 0..self.config.critic_steps_per_gen {
                let z = normal_latents(&mut self.rng, b, nz);
                let fake = self.fake_tuples(&batch, z)?;
                let eps: Vec<f32> = (0..b).map(|_| self.rng.random::<f32>()).collect();
                let bd = Binder::new(&self.critic.params, true);
                let cl = critic_loss(&self.critic, &bd, &batch.real, &fake, &eps, self.config.gp_lambda);
                c_loss += finite(cl.value(), epoch, step, "critic loss")?;
                pen += cl.penalty;
                obj += cl.objective;
                gnorm += cl.mean_grad_norm;
                c_steps += 1;
                cl.loss.backward();
                self.critic_opt.update(&mut self.critic.params, &bd.grads());
            }
            let z = normal_latents(&mut self.rng, b, nz);
            let bd = Binder::new(&self.generator.params, true);
            let meas = Var::constant(batch.measurement.clone());
            let terr = Var::constant(batch.terrain.clone());
            let fake = self.generator.forward(&bd, &meas, &terr, &Var::constant(z))?;
            let loss = generator_loss(&self.critic, &ag::concat(&[&fake, &meas, &terr]));
            g_loss += finite(loss.value().data[0] as f64, epoch, step, "generator loss")?;
            g_steps += 1;
            loss.backward();
            self.gen_opt.update(&mut self.generator.params, &bd.grads());
        }
        let mismatch = self.validation_mismatch(val)?;
        self.epoch = epoch;
        let cs = c_steps as f64;
        Ok(EpochMetrics {
            epoch,
            critic_loss: c_loss / cs,
            generator_loss: g_loss / g_steps as f64,
            penalty: pen / cs,
            validation_mismatch: mismatch,
            objective: obj / cs,
            grad_norm: gnorm / cs,
        })
    }

    /// Mean Frobenius norm of `target - sample` over validation tuples and a
    /// fixed set of latent draws per tuple (normalized units).
    pub fn validation_mismatch(&self, val: &dyn DataSource) -> Result<f64> {
        if val.is_empty() {
            return Ok(f64::NAN);
        }
        let r = self.resolution();
        let k = self.config.val_latents;
        let nz = self.generator.config.latent_dim;
        let mut total = 0.0;
        let frozen = Binder::new(&self.generator.params, false);
        let idx: Vec<usize> = (0..val.len()).collect();
        for (c, chunk) in idx.chunks(self.config.batch.max(1)).enumerate() {
            let batch = gather(val, chunk, r)?;
            let mut zrng = seed::rng(seed::derive(self.config.seed, "validation-latents", c as u64));
            for _ in 0..k {
                let z = normal_latents(&mut zrng, chunk.len(), nz);
                let fake = self.generator.forward(
                    &frozen,
                    &Var::constant(batch.measurement.clone()),
                    &Var::constant(batch.terrain.clone()),
                    &Var::constant(z),
                )?;
                for (bi, _) in chunk.iter().enumerate() {
                    let truth = &batch.real.item(bi)[..r * r];
                    let sq: f64 = fake
                        .value()
                        .item(bi)
                        .iter()
                        .zip(truth)
                        .map(|(&a, &b)| ((a - b) as f64).powi(2))
                        .sum();
                    total += sq.sqrt();
                }
            }
        }
        Ok(total / (val.len() * k) as f64)
    }

    /// Trains up to `config.epochs`, appending one JSON line per epoch to
    /// `metrics.jsonl` and writing `checkpoint.bin` under `out_dir`.
    pub fn run(
        &mut self,
        train: &dyn DataSource,
        val: &dyn DataSource,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| GanError::io(dir, e))?;
        }
        let mut all = Vec::new();
        while self.epoch < self.config.epochs {
            let m = self.train_epoch(train, val)?;
            if let Some(dir) = out_dir {
                let path = dir.join("metrics.jsonl");
                let mut f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| GanError::io(&path, e))?;
                let line = serde_json::to_string(&m).expect("metrics serialize");
                writeln!(f, "{line}").map_err(|e| GanError::io(&path, e))?;
                let cadence = self.config.checkpoint_every.max(1);
                if self.epoch % cadence == 0 || self.epoch == self.config.epochs {
                    self.save(dir.join("checkpoint.bin"))?;
                }
            }
            on_epoch(&m);
            all.push(m);
        }
        Ok(all)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CheckpointHeader {
            epoch: self.epoch,
            train: self.config.clone(),
            generator: self.generator.config.clone(),
            critic: self.critic.config.clone(),
            rng: self.rng.clone(),
            gen_adam_step: self.gen_opt.step,
            critic_adam_step: self.critic_opt.step,
            generator_params: self.generator.params.names.clone(),
            critic_params: self.critic.params.names.clone(),
        };
        let blocks: Vec<&[f32]> = self
            .generator
            .params
            .tensors
            .iter()
            .map(|t| &t.data[..])
            .chain(self.critic.params.tensors.iter().map(|t| &t.data[..]))
            .chain(self.gen_opt.m.iter().map(|v| &v[..]))
            .chain(self.gen_opt.v.iter().map(|v| &v[..]))
            .chain(self.critic_opt.m.iter().map(|v| &v[..]))
            .chain(self.critic_opt.v.iter().map(|v| &v[..]))
            .collect();
        write_checkpoint(path.as_ref(), &header, &blocks)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, mut blocks) = read_checkpoint(path)?;
        let mut t = Trainer::new(header.generator.clone(), header.critic.clone(), header.train.clone())?;
        let corrupt = |d: &str| GanError::Checkpoint {
            path: path.to_path_buf(),
            detail: d.to_string(),
        };
        if t.generator.params.names != header.generator_params || t.critic.params.names != header.critic_params {
            return Err(corrupt("parameter layout does not match its configuration"));
        }
        fill(&mut t.generator.params, &mut blocks).ok_or_else(|| corrupt("truncated generator weights"))?;
        fill(&mut t.critic.params, &mut blocks).ok_or_else(|| corrupt("truncated critic weights"))?;
        for slot in [&mut t.gen_opt.m, &mut t.gen_opt.v, &mut t.critic_opt.m, &mut t.critic_opt.v] {
            for v in slot.iter_mut() {
                let n = v.len();
                *v = take(&mut blocks, n).ok_or_else(|| corrupt("truncated optimizer state"))?;
            }
        }
        if !blocks.is_empty() {
            return Err(corrupt("trailing data"));
        }
        t.gen_opt.step = header.gen_adam_step;
        t.critic_opt.step = header.critic_adam_step;
        t.rng = header.rng;
        t.epoch = header.epoch;
        Ok(t)
    }
}

/// Loads only the generator from a checkpoint.
pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    let path = path.as_ref();
    let (header, mut blocks) = read_checkpoint(path)?;
    let mut g = Generator::new(header.generator, header.train.seed)?;
    if g.params.names != header.generator_params || fill(&mut g.params, &mut blocks).is_none() {
        return Err(GanError::Checkpoint {
            path: path.to_path_buf(),
            detail: "generator weights do not match configuration".into(),
        });
    }
    Ok(g)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    epoch: usize,
    train: TrainConfig,
    generator: GeneratorConfig,
    critic: CriticConfig,
    rng: Rng,
    gen_adam_step: u64,
    critic_adam_step: u64,
    generator_params: Vec<String>,
    critic_params: Vec<String>,
}

const MAGIC: &[u8; 8] = b"FCCKPT01";

fn write_checkpoint(path: &Path, header: &CheckpointHeader, blocks: &[&[f32]]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = fs::File::create(&tmp).map_err(|e| GanError::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        let json = serde_json::to_vec(header).expect("header serializes");
        let io = |e| GanError::io(&tmp, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for b in blocks {
            for v in b.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(|e| GanError::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let corrupt = |d: String| GanError::Checkpoint {
        path: path.to_path_buf(),
        detail: d,
    };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| GanError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + n).ok_or_else(|| corrupt("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| corrupt(e.to_string()))?;
    let rest = &bytes[16 + n..];
    if rest.len() % 4 != 0 {
        return Err(corrupt("weight section is not a whole number of floats".into()));
    }
    let floats = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, floats))
}

fn take(blocks: &mut Vec<f32>, n: usize) -> Option<Vec<f32>> {
    if blocks.len() < n {
        return None;
    }
    let rest = blocks.split_off(n);
    Some(std::mem::replace(blocks, rest))
}

fn fill(ps: &mut ParamSet, blocks: &mut Vec<f32>) -> Option<()> {
    for t in &mut ps.tensors {
        let n = t.len();
        t.data = take(blocks, n)?;
    }
    Some(())
}
