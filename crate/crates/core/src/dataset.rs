//! Training set generation: simulate fires, augment each arrival field,
//! draw several measurements per augmented field, and store the resulting
//! `(τ, τ̄, h)` tuples with a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_pair, zero_ignition, AugmentParams};
use crate::error::{Error, Result};
use crate::obs::{apply_observation, max_burned, ObsParams, MIN_OBSERVABLE_HOURS};
use crate::raster::{self, normalize_arrival, normalize_terrain, GeoPoint, GridSpec, Raster, DOMAIN_EXTENT_M};
use crate::seed;
use crate::surrogate::simulate_fire;

const MANIFEST: &str = "manifest.json";
const FIRE_DONE: &str = "done.json";
const MAX_AUGMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Output pixels per side over the 12.8 km domain.
    pub resolution: usize,
    pub n_fires: usize,
    /// The last `val_fires` fires form the validation split.
    pub val_fires: usize,
    pub augment_factor: usize,
    pub meas_factor: usize,
    pub seed: u64,
    /// Side of the square simulation grid in meters.
    pub source_extent_m: f64,
    pub center: GeoPoint,
    pub obs: ObsParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            resolution: 512,
            n_fires: 140,
            val_fires: 12,
            augment_factor: 25,
            meas_factor: 5,
            seed: 0,
            source_extent_m: 30_000.0,
            center: GeoPoint::new(39.0, -120.0),
            obs: ObsParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_fires == 0 {
            return bad("n_fires must be >= 1".into());
        }
        if self.val_fires > self.n_fires {
            return bad(format!("val_fires {} exceeds n_fires {}", self.val_fires, self.n_fires));
        }
        if self.augment_factor == 0 || self.meas_factor == 0 {
            return bad("augment and measurement factors must be >= 1".into());
        }
        if self.resolution < 16 {
            return bad(format!("resolution {} too small", self.resolution));
        }
        if self.source_extent_m < DOMAIN_EXTENT_M * std::f64::consts::SQRT_2 + 1500.0 {
            return bad(format!(
                "source extent {} m cannot hold a rotated, translated crop",
                self.source_extent_m
            ));
        }
        self.obs.validate()
    }

    pub fn cell_size(&self) -> f64 {
        DOMAIN_EXTENT_M / self.resolution as f64
    }

    pub fn crop_grid(&self) -> GridSpec {
        GridSpec::domain(self.center, self.resolution)
    }

    pub fn source_grid(&self) -> GridSpec {
        let n = (self.source_extent_m / self.cell_size()).round() as usize;
        GridSpec::centered(self.center, n, n, self.cell_size())
    }

    pub fn tuples_per_fire(&self) -> usize {
        self.augment_factor * self.meas_factor
    }

    pub fn total_tuples(&self) -> usize {
        self.n_fires * self.tuples_per_fire()
    }

    pub fn split_of(&self, fire: usize) -> Split {
        if fire >= self.n_fires - self.val_fires {
            Split::Validation
        } else {
            Split::Train
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleMeta {
    pub fire: usize,
    pub augment: usize,
    pub measure: usize,
    pub fire_seed: u64,
    pub obs_seed: u64,
    pub split: Split,
    pub augment_params: AugmentParams,
}

/// Raw (un-normalized) training triple: arrival hours, measurement hours,
/// terrain meters.
#[derive(Debug, Clone)]
pub struct SampleTuple {
    pub arrival: Raster,
    pub measurement: Raster,
    pub terrain: Raster,
    pub meta: TupleMeta,
}

/// The same triple scaled into [0, 1].
#[derive(Debug, Clone)]
pub struct UnitTuple {
    pub arrival: Raster,
    pub measurement: Raster,
    pub terrain: Raster,
}

impl SampleTuple {
    pub fn normalized(&self) -> Result<UnitTuple> {
        Ok(UnitTuple {
            arrival: normalize_arrival(&self.arrival)?,
            measurement: normalize_arrival(&self.measurement)?,
            terrain: normalize_terrain(&self.terrain)?,
        })
    }
}

/// All tuples derived from fire `fire` of the configuration.
pub fn fire_tuples(cfg: &DatasetConfig, fire: usize) -> Result<Vec<SampleTuple>> {
    let fire_seed = seed::derive(cfg.seed, "fire", fire as u64);
    let sim = simulate_fire(fire_seed, &cfg.source_grid())?;
    let tau = zero_ignition(&sim.arrival)?;
    let crop = cfg.crop_grid();
    let mut out = Vec::with_capacity(cfg.tuples_per_fire());
    for a in 0..cfg.augment_factor {
        let mut rng = seed::rng(seed::derive(fire_seed, "augment", a as u64));
        let mut attempt = 0;
        let (params, tau_a, h_a) = loop {
            attempt += 1;
            if attempt > MAX_AUGMENT_ATTEMPTS {
                return Err(Error::FireTooSmall(max_burned(&tau).unwrap_or(0.0) as f64));
            }
            let p = AugmentParams::sample(&mut rng, crop);
            match augment_pair(&tau, &sim.terrain, &p) {
                Ok((t, h)) if max_burned(&t).is_some_and(|m| m as f64 > MIN_OBSERVABLE_HOURS) => break (p, t, h),
                Ok(_) | Err(Error::CropOutOfBounds) => continue,
                Err(e) => return Err(e),
            }
        };
        for m in 0..cfg.meas_factor {
            let obs_seed = seed::derive(fire_seed, "measure", (a * cfg.meas_factor + m) as u64);
            let (meas, _) = apply_observation(&tau_a, &cfg.obs.with_seed(obs_seed))?;
            out.push(SampleTuple {
                arrival: tau_a.clone(),
                measurement: meas,
                terrain: h_a.clone(),
                meta: TupleMeta {
                    fire,
                    augment: a,
                    measure: m,
                    fire_seed,
                    obs_seed,
                    split: cfg.split_of(fire),
                    augment_params: params,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub meta: TupleMeta,
    /// Paths relative to the dataset root.
    pub arrival: PathBuf,
    pub measurement: PathBuf,
    pub terrain: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "dataset manifest",
            detail: e.to_string(),
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.meta.split == split)
    }
}

pub fn load_tuple(root: impl AsRef<Path>, entry: &ManifestEntry) -> Result<SampleTuple> {
    let root = root.as_ref();
    Ok(SampleTuple {
        arrival: raster::load(root.join(&entry.arrival))?,
        measurement: raster::load(root.join(&entry.measurement))?,
        terrain: raster::load(root.join(&entry.terrain))?,
        meta: entry.meta.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildReport {
    pub tuples: usize,
    pub fires_built: usize,
    pub fires_reused: usize,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse {
        what: "json output",
        detail: e.to_string(),
    })?;
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_fire(root: &Path, cfg: &DatasetConfig, fire: usize) -> Result<Vec<ManifestEntry>> {
    let rel = PathBuf::from(format!("fire_{fire:04}"));
    let dir = root.join(&rel);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let result = (|| {
        let tuples = fire_tuples(cfg, fire)?;
        let mut entries = Vec::with_capacity(tuples.len());
        for t in &tuples {
            let stem = format!("a{:02}", t.meta.augment);
            let arrival = rel.join(format!("{stem}_arrival.fcr"));
            let terrain = rel.join(format!("{stem}_terrain.fcr"));
            let measurement = rel.join(format!("{stem}_m{}_measurement.fcr", t.meta.measure));
            if t.meta.measure == 0 {
                raster::save(&t.arrival, root.join(&arrival))?;
                raster::save(&t.terrain, root.join(&terrain))?;
            }
            raster::save(&t.measurement, root.join(&measurement))?;
            entries.push(ManifestEntry {
                id: format!("f{fire:04}_a{:02}_m{}", t.meta.augment, t.meta.measure),
                meta: t.meta.clone(),
                arrival,
                measurement,
                terrain,
            });
        }
        write_json(&dir.join(FIRE_DONE), &entries)?;
        Ok(entries)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&dir);
    }
    result
}

fn reuse_fire(root: &Path, fire: usize) -> Option<Vec<ManifestEntry>> {
    let path = root.join(format!("fire_{fire:04}")).join(FIRE_DONE);
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Builds (or resumes) the dataset under `root`. Fires with a completion
/// marker are reused; a complete manifest with a matching config hash makes
/// the call a no-op. A manifest from a different config is an error.
pub fn build_dataset(cfg: &DatasetConfig, root: impl AsRef<Path>) -> Result<(Manifest, BuildReport)> {
    cfg.validate()?;
    let root = root.as_ref();
    let hash = cfg.hash();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = root.join("config_hash");
    match fs::read_to_string(&stamp) {
        Ok(existing) if existing.trim() != hash => {
            return Err(Error::InvalidParameter(format!(
                "{} holds a dataset built from a different configuration",
                root.display()
            )));
        }
        Ok(_) => {
            if let Ok(m) = Manifest::load(root) {
                if m.config_hash == hash && m.entries.len() == cfg.total_tuples() {
                    let report = BuildReport {
                        tuples: m.entries.len(),
                        fires_built: 0,
                        fires_reused: cfg.n_fires,
                    };
                    return Ok((m, report));
                }
            }
        }
        Err(_) => fs::write(&stamp, &hash).map_err(|e| Error::io(&stamp, e))?,
    }

    let per_fire: Vec<(Vec<ManifestEntry>, bool)> = (0..cfg.n_fires)
        .into_par_iter()
        .map(|fire| match reuse_fire(root, fire) {
            Some(entries) if entries.len() == cfg.tuples_per_fire() => Ok((entries, false)),
            _ => {
                log::info!("simulating fire {fire}");
                write_fire(root, cfg, fire).map(|e| (e, true))
            }
        })
        .collect::<Result<_>>()?;
    let fires_built = per_fire.iter().filter(|(_, built)| *built).count();
    let entries: Vec<ManifestEntry> = per_fire.into_iter().flat_map(|(e, _)| e).collect();
    let manifest = Manifest {
        config: cfg.clone(),
        config_hash: hash,
        entries,
    };
    write_json(&root.join(MANIFEST), &manifest)?;
    let report = BuildReport {
        tuples: manifest.entries.len(),
        fires_built,
        fires_reused: cfg.n_fires - fires_built,
    };
    Ok((manifest, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            resolution: 32,
            n_fires: 2,
            val_fires: 1,
            augment_factor: 2,
            meas_factor: 2,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn geometry_scales_with_resolution() {
        let c = DatasetConfig::default();
        assert_eq!(c.source_grid().rows, 1200);
        assert_eq!(c.crop_grid().rows, 512);
        let d = DatasetConfig { resolution: 64, ..c };
        assert_eq!(d.source_grid().rows, 150);
        assert_eq!(d.cell_size(), 200.0);
    }

    #[test]
    fn tuple_counts() {
        let c = DatasetConfig::default();
        assert_eq!(c.total_tuples(), 17_500);
        assert_eq!(DatasetConfig { n_fires: 1, ..c.clone() }.total_tuples(), 125);
        assert_eq!(DatasetConfig { n_fires: 2, ..c }.total_tuples(), 250);
    }

    #[test]
    fn tuples_are_deterministic_and_valid() {
        let cfg = small();
        let a = fire_tuples(&cfg, 0).unwrap();
        let b = fire_tuples(&cfg, 0).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.arrival, y.arrival);
            assert_eq!(x.measurement, y.measurement);
            assert_eq!(x.terrain, y.terrain);
            x.arrival.validate().unwrap();
            x.measurement.validate().unwrap();
            assert!(max_burned(&x.arrival).unwrap() as f64 > MIN_OBSERVABLE_HOURS);
            let u = x.normalized().unwrap();
            u.terrain.validate().unwrap();
        }
        assert_ne!(a[0].measurement, a[1].measurement);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(DatasetConfig { n_fires: 0, ..small() }.validate().is_err());
        assert!(DatasetConfig { val_fires: 3, ..small() }.validate().is_err());
        assert!(DatasetConfig { source_extent_m: 13_000.0, ..small() }.validate().is_err());
        assert_ne!(small().hash(), DatasetConfig { seed: 12, ..small() }.hash());
    }
}
