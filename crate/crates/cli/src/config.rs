//! Run configuration: a TOML file whose sections mirror the pipeline stages.
//! Command-line flags override file values, which override defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use firecast_core::dataset::DatasetConfig;
use firecast_core::ensemble::SamplingOptions;
use firecast_core::ingest::IgnitionSearch;
use firecast_core::obs::ObsParams;
use firecast_core::GeoPoint;
use firecast_gan::{AdamConfig, CriticConfig, GeneratorConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every named sub-seed.
    pub seed: u64,
    /// Pixels per side of the 12.8 km domain (64, 128, 256 or 512).
    pub resolution: usize,
    pub output: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub ingest: IngestSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 64,
            output: PathBuf::from("runs"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            infer: InferSection::default(),
            ingest: IngestSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_fires: usize,
    pub val_fires: usize,
    pub augment_factor: usize,
    pub meas_factor: usize,
    pub source_extent_m: f64,
    pub center: GeoPoint,
    pub obs: ObsParams,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            n_fires: d.n_fires,
            val_fires: d.val_fires,
            augment_factor: d.augment_factor,
            meas_factor: d.meas_factor,
            source_extent_m: d.source_extent_m,
            center: d.center,
            obs: d.obs,
        }
    }
}

/// Full architecture overrides; the defaults derive from the resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub generator: Option<GeneratorConfig>,
    pub critic: Option<CriticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub critic_steps_per_gen: usize,
    pub gp_lambda: f64,
    pub val_latents: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch: t.batch,
            epochs: t.epochs,
            adam: t.adam,
            critic_steps_per_gen: t.critic_steps_per_gen,
            gp_lambda: t.gp_lambda,
            val_latents: t.val_latents,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    /// Ensemble size.
    pub k: usize,
    /// Latent vectors per generator call.
    pub batch: usize,
    /// Spacing of the exported iso-time contours in hours.
    pub contour_interval_h: f64,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            k: 500,
            batch: 8,
            contour_interval_h: 4.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub search: IgnitionSearch,
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFire {
    pub name: String,
    /// Ensemble mean arrival raster.
    pub mean: PathBuf,
    /// Reference perimeter polygons (ring text or GeoJSON).
    #[serde(default)]
    pub perimeter: Option<PathBuf>,
    /// Reference arrival raster, burned-by-`time_h` taken as the perimeter.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Hours since ignition at which the reference was observed.
    pub time_h: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fires: Vec<EvalFire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Validation tuples used, taken in manifest order.
    pub cases: usize,
    pub k: usize,
    pub bins: usize,
    /// Histogram covers [-range_h, range_h].
    pub range_h: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            cases: 200,
            k: 500,
            bins: 48,
            range_h: 6.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` if given, otherwise defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => Self::default(),
        };
        Ok(cfg)
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            resolution: self.resolution,
            n_fires: d.n_fires,
            val_fires: d.val_fires,
            augment_factor: d.augment_factor,
            meas_factor: d.meas_factor,
            seed: self.seed,
            source_extent_m: d.source_extent_m,
            center: d.center,
            obs: d.obs.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch: t.batch,
            epochs: t.epochs,
            adam: t.adam,
            critic_steps_per_gen: t.critic_steps_per_gen,
            gp_lambda: t.gp_lambda,
            seed: self.seed,
            val_latents: t.val_latents,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let g = match &self.model.generator {
            Some(g) => g.clone(),
            None => GeneratorConfig::for_resolution(self.resolution)?,
        };
        if g.resolution != self.resolution {
            bail!("model.generator.resolution {} differs from resolution {}", g.resolution, self.resolution);
        }
        g.validate()?;
        Ok(g)
    }

    pub fn critic_config(&self) -> Result<CriticConfig> {
        let c = match &self.model.critic {
            Some(c) => c.clone(),
            None => CriticConfig::for_resolution(self.resolution)?,
        };
        if c.resolution != self.resolution {
            bail!("model.critic.resolution {} differs from resolution {}", c.resolution, self.resolution);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            k: self.infer.k,
            seed: self.seed,
            batch: self.infer.batch,
            keep_samples: false,
        }
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.dataset_config().validate()?;
        self.train_config().validate()?;
        self.generator_config()?;
        self.critic_config()?;
        if self.infer.k < 2 {
            bail!("infer.k must be at least 2");
        }
        if !(self.infer.contour_interval_h > 0.0) {
            bail!("infer.contour_interval_h must be positive");
        }
        if self.ablate.bins == 0 || !(self.ablate.range_h > 0.0) || self.ablate.k < 2 {
            bail!("ablate needs bins > 0, range_h > 0 and k >= 2");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        firecast_core::dataset::hex(&Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nepoch = 3").is_err());
        assert!(RunConfig::from_toml("[dataset.obs]\ncopies = 2\nextra = 1").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml("seed = 5\n[train]\nepochs = 3").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch, 16);
        assert_eq!(c.train_config().seed, 5);
        assert_eq!(c.dataset_config().seed, 5);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn mismatched_architecture_resolution_is_rejected() {
        let mut c = RunConfig::default();
        c.model.generator = Some(GeneratorConfig::for_resolution(128).unwrap());
        assert!(c.validate().is_err());
    }
}
