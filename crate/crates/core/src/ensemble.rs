//! Conditional sampling statistics: pixelwise mean and standard deviation of
//! generator draws, and time-threshold perimeters of the mean map.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::contour::{marching_squares, Contour};
use crate::error::{Error, Result};
use crate::raster::{FieldKind, Raster, BACKGROUND_HOURS};
use crate::seed;

/// Arrival values at or above this are treated as the "not burned" sentinel.
pub const SENTINEL_THRESHOLD_H: f32 = 47.99;

/// Anything that can draw normalized arrival maps given normalized
/// measurement and terrain plus one latent vector per requested sample.
pub trait ConditionalSampler {
    fn latent_dim(&self) -> usize;

    /// Returns one normalized (unit) arrival raster per latent vector.
    fn sample(&self, measurement: &Raster, terrain: &Raster, latents: &[Vec<f32>]) -> Result<Vec<Raster>>;
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// Denormalized samples in hours, kept only on request.
    pub samples: Option<Vec<Raster>>,
    pub mean: Raster,
    /// Population standard deviation in hours.
    pub std: Raster,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub k: usize,
    pub seed: u64,
    /// Latent vectors per generator call.
    pub batch: usize,
    pub keep_samples: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            k: 500,
            seed: 0,
            batch: 8,
            keep_samples: false,
        }
    }
}

/// Single-pass (Welford) pixelwise moments in f64.
#[derive(Debug, Clone)]
pub struct RunningMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, sample: &[f32]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let x = x as f64;
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|&s| (s / n).max(0.0)).collect()
    }
}

/// Mean and population standard deviation of equally-gridded samples.
pub fn ensemble_stats(samples: &[Raster]) -> Result<(Raster, Raster)> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let first = &samples[0];
    let mut acc = RunningMoments::new(first.data.len());
    for s in samples {
        first.check_same_grid(s)?;
        acc.push(&s.data);
    }
    Ok(moments_to_rasters(&acc, first))
}

fn moments_to_rasters(acc: &RunningMoments, like: &Raster) -> (Raster, Raster) {
    let mean = Raster {
        grid: like.grid,
        kind: FieldKind::Arrival,
        data: acc.mean().iter().map(|&m| m as f32).collect(),
    };
    let std = Raster {
        grid: like.grid,
        kind: FieldKind::StdDev,
        data: acc.variance().iter().map(|&v| v.sqrt() as f32).collect(),
    };
    (mean, std)
}

/// Draws `k` latent vectors from a standard normal, in a fixed order per seed.
pub fn latent_draws(dim: usize, k: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = seed::rng(seed::derive(seed, "latent", 0));
    (0..k)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// K generator draws for one (measurement, terrain) pair, reduced to mean and
/// standard deviation maps in hours.
pub fn sample_ensemble<S: ConditionalSampler + ?Sized>(
    sampler: &S,
    measurement: &Raster,
    terrain: &Raster,
    opts: &SamplingOptions,
) -> Result<EnsembleResult> {
    if opts.k < 2 {
        return Err(Error::TooFewSamples(opts.k));
    }
    measurement.check_same_grid(terrain)?;
    let latents = latent_draws(sampler.latent_dim(), opts.k, opts.seed);
    let mut acc = RunningMoments::new(measurement.data.len());
    let mut kept = opts.keep_samples.then(Vec::new);
    for chunk in latents.chunks(opts.batch.max(1)) {
        let draws = sampler.sample(measurement, terrain, chunk)?;
        if draws.len() != chunk.len() {
            return Err(Error::InvalidParameter(format!(
                "sampler returned {} draws for {} latents",
                draws.len(),
                chunk.len()
            )));
        }
        for d in draws {
            measurement.check_same_grid(&d)?;
            let hours = d.map(FieldKind::Arrival, |u| u * BACKGROUND_HOURS);
            acc.push(&hours.data);
            if let Some(k) = kept.as_mut() {
                k.push(hours);
            }
        }
    }
    let (mean, std) = moments_to_rasters(&acc, measurement);
    Ok(EnsembleResult {
        samples: kept,
        mean,
        std,
        k: opts.k,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone)]
pub struct Perimeter {
    pub time: f64,
    /// 1 where the mean arrival is at or before `time`.
    pub mask: Raster,
    pub contour: Contour,
}

/// Is a pixel burned by time `t`? Sentinel values never count.
#[inline]
pub fn burned_by(v: f32, t: f64) -> bool {
    v < SENTINEL_THRESHOLD_H && (v as f64) <= t
}

/// Burned mask and iso-contour of an arrival map at `t` hours.
pub fn perimeter_at(arrival: &Raster, t: f64) -> Result<Perimeter> {
    if !(0.0..=BACKGROUND_HOURS as f64).contains(&t) {
        return Err(Error::InvalidParameter(format!("perimeter time {t} outside [0, 48] h")));
    }
    let mask = arrival.map(FieldKind::Mask, |v| if burned_by(v, t) { 1.0 } else { 0.0 });
    let contour = marching_squares(arrival, t, |r, c| mask.get(r, c) > 0.5);
    Ok(Perimeter { time: t, mask, contour })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{GeoPoint, GridSpec};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn grid(n: usize) -> GridSpec {
        GridSpec::centered(GeoPoint::new(36.0, -119.0), n, n, 200.0)
    }

    /// Returns a fixed field regardless of the latent vector.
    struct Constant(Raster);

    impl ConditionalSampler for Constant {
        fn latent_dim(&self) -> usize {
            3
        }
        fn sample(&self, _: &Raster, _: &Raster, latents: &[Vec<f32>]) -> Result<Vec<Raster>> {
            Ok(latents.iter().map(|_| self.0.clone()).collect())
        }
    }

    /// Shifts a base field by the first latent component.
    struct Shifted(Raster);

    impl ConditionalSampler for Shifted {
        fn latent_dim(&self) -> usize {
            2
        }
        fn sample(&self, _: &Raster, _: &Raster, latents: &[Vec<f32>]) -> Result<Vec<Raster>> {
            Ok(latents
                .iter()
                .map(|z| self.0.map(FieldKind::Unit, |v| (v + 0.05 * z[0]).clamp(0.0, 1.0)))
                .collect())
        }
    }

    fn two_pass(samples: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>) {
        let n = samples.len() as f64;
        let len = samples[0].len();
        let mean: Vec<f64> = (0..len).map(|i| samples.iter().map(|s| s[i] as f64).sum::<f64>() / n).collect();
        let var = (0..len)
            .map(|i| samples.iter().map(|s| (s[i] as f64 - mean[i]).powi(2)).sum::<f64>() / n)
            .collect();
        (mean, var)
    }

    #[test]
    fn z_blind_sampler_has_zero_spread() {
        let g = grid(8);
        let base = Raster::filled(g, FieldKind::Unit, 0.25);
        let input = Raster::filled(g, FieldKind::Unit, 1.0);
        let res = sample_ensemble(&Constant(base), &input, &input, &SamplingOptions { k: 10, ..Default::default() }).unwrap();
        assert!(res.std.data.iter().all(|&s| s == 0.0));
        assert!(res.mean.data.iter().all(|&m| m == 12.0));
    }

    #[test]
    fn two_point_closed_form() {
        let g = grid(1);
        let a = Raster::new(g, FieldKind::Arrival, vec![3.0]).unwrap();
        let b = Raster::new(g, FieldKind::Arrival, vec![10.0]).unwrap();
        let (m, s) = ensemble_stats(&[a, b]).unwrap();
        assert_eq!(m.data[0], 6.5);
        assert_eq!(s.data[0], 3.5);
    }

    #[test]
    fn fewer_than_two_samples_is_rejected() {
        let g = grid(2);
        let x = Raster::filled(g, FieldKind::Unit, 0.5);
        assert!(matches!(
            sample_ensemble(&Constant(x.clone()), &x, &x, &SamplingOptions { k: 1, ..Default::default() }),
            Err(Error::TooFewSamples(1))
        ));
        assert!(ensemble_stats(&[x]).is_err());
    }

    #[test]
    fn batching_does_not_change_statistics() {
        let g = grid(6);
        let base = Raster::new(g, FieldKind::Unit, (0..36).map(|i| i as f32 / 40.0).collect()).unwrap();
        let run = |batch| {
            sample_ensemble(&Shifted(base.clone()), &base, &base, &SamplingOptions { k: 17, seed: 3, batch, keep_samples: true })
                .unwrap()
        };
        let (a, b) = (run(1), run(5));
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.std, b.std);
        assert_eq!(a.samples.unwrap().len(), 17);
    }

    #[test]
    fn perimeter_thresholds() {
        let g = grid(3);
        let f = Raster::new(g, FieldKind::Arrival, vec![0.0, 4.0, 8.0, 12.0, 47.995, 48.0, 30.0, 2.0, 47.5]).unwrap();
        let at0 = perimeter_at(&f, 0.0).unwrap();
        assert_eq!(at0.mask.data, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let at48 = perimeter_at(&f, 48.0).unwrap();
        assert_eq!(at48.mask.data, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(perimeter_at(&f, 48.5).is_err());
        assert!(perimeter_at(&f, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn streaming_matches_two_pass(seed in 0u64..1000, k in 2usize..40) {
            let mut rng = seed::rng(seed);
            let samples: Vec<Vec<f32>> = (0..k).map(|_| (0..25).map(|_| rng.random_range(0.0..48.0f32)).collect()).collect();
            let rasters: Vec<Raster> = samples.iter().map(|s| Raster::new(grid(5), FieldKind::Arrival, s.clone()).unwrap()).collect();
            let (m, s) = ensemble_stats(&rasters).unwrap();
            let (em, ev) = two_pass(&samples);
            for i in 0..25 {
                prop_assert!((m.data[i] as f64 - em[i]).abs() <= 1e-5 * em[i].abs().max(1.0));
                prop_assert!((s.data[i] as f64 - ev[i].sqrt()).abs() <= 1e-5 * ev[i].sqrt().max(1.0));
            }
        }

        #[test]
        fn statistics_ignore_sample_order(seed in 0u64..1000) {
            let mut rng = seed::rng(seed);
            let mut rasters: Vec<Raster> = (0..9)
                .map(|_| Raster::new(grid(2), FieldKind::Arrival, (0..4).map(|_| rng.random_range(0.0..48.0f32)).collect()).unwrap())
                .collect();
            let (m1, s1) = ensemble_stats(&rasters).unwrap();
            rasters.reverse();
            let (m2, s2) = ensemble_stats(&rasters).unwrap();
            for i in 0..4 {
                prop_assert!((m1.data[i] - m2.data[i]).abs() <= 1e-5);
                prop_assert!((s1.data[i] - s2.data[i]).abs() <= 1e-5);
            }
        }

        #[test]
        fn perimeters_nest(vals in proptest::collection::vec(0.0f32..48.0, 16), t1 in 0.0f64..48.0, dt in 0.0f64..48.0) {
            let f = Raster::new(grid(4), FieldKind::Arrival, vals).unwrap();
            let t2 = (t1 + dt).min(48.0);
            let a = perimeter_at(&f, t1).unwrap();
            let b = perimeter_at(&f, t2).unwrap();
            for (x, y) in a.mask.data.iter().zip(&b.mask.data) {
                prop_assert!(x <= y);
            }
        }
    }
}
