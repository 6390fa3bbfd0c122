use firecast_core::ensemble::{ensemble_stats, sample_ensemble, ConditionalSampler, SamplingOptions};
use firecast_core::eval::{
    agreement, agreement_raster, confusion_areas, evaluate_masks, pool_differences, sc_pod_far, terrain_ablation,
    AblationInput, Histogram,
};
use firecast_core::{FieldKind, GeoPoint, GridSpec, Raster, Result};
use proptest::prelude::*;

fn grid(n: usize) -> GridSpec {
    GridSpec::centered(GeoPoint::new(40.0, -105.0), n, n, 200.0)
}

fn mask(bits: &[bool]) -> Raster {
    let n = (bits.len() as f64).sqrt() as usize;
    Raster::new(grid(n), FieldKind::Mask, bits.iter().map(|&b| b as u8 as f32).collect()).unwrap()
}

fn rasters(vals: &[Vec<f32>]) -> Vec<Raster> {
    vals.iter()
        .map(|v| Raster::new(grid(3), FieldKind::Arrival, v.clone()).unwrap())
        .collect()
}

/// Returns `measurement + a * terrain + b * z[0]`, clamped to [0, 1].
struct Affine {
    a: f32,
    b: f32,
}

impl ConditionalSampler for Affine {
    fn latent_dim(&self) -> usize {
        3
    }

    fn sample(&self, m: &Raster, h: &Raster, latents: &[Vec<f32>]) -> Result<Vec<Raster>> {
        Ok(latents
            .iter()
            .map(|z| {
                let data = m
                    .data
                    .iter()
                    .zip(&h.data)
                    .map(|(&m, &h)| (m + self.a * h + self.b * z[0]).clamp(0.0, 1.0))
                    .collect();
                Raster::new(m.grid, FieldKind::Unit, data).unwrap()
            })
            .collect())
    }
}

proptest! {
    #[test]
    fn stats_match_two_pass_oracle(vals in prop::collection::vec(prop::collection::vec(0.0f32..48.0, 9), 2..30)) {
        let (mean, std) = ensemble_stats(&rasters(&vals)).unwrap();
        let k = vals.len() as f64;
        for i in 0..9 {
            let m = vals.iter().map(|v| v[i] as f64).sum::<f64>() / k;
            let var = vals.iter().map(|v| (v[i] as f64 - m).powi(2)).sum::<f64>() / k;
            prop_assert!((mean.data[i] as f64 - m).abs() <= 1e-5);
            prop_assert!((std.data[i] as f64 - var.sqrt()).abs() <= 1e-5);
        }
        prop_assert!(std.validate().is_ok());
    }

    #[test]
    fn stats_ignore_sample_order(vals in prop::collection::vec(prop::collection::vec(0.0f32..48.0, 9), 2..20), rot in 0usize..20) {
        let mut shuffled = vals.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let (m1, s1) = ensemble_stats(&rasters(&vals)).unwrap();
        let (m2, s2) = ensemble_stats(&rasters(&shuffled)).unwrap();
        for i in 0..9 {
            prop_assert!((m1.data[i] - m2.data[i]).abs() <= 1e-5);
            prop_assert!((s1.data[i] - s2.data[i]).abs() <= 1e-5);
        }
    }

    #[test]
    fn two_samples_have_closed_form(a in prop::collection::vec(0.0f32..48.0, 9), b in prop::collection::vec(0.0f32..48.0, 9)) {
        let (mean, std) = ensemble_stats(&rasters(&[a.clone(), b.clone()])).unwrap();
        for i in 0..9 {
            let (x, y) = (a[i] as f64, b[i] as f64);
            prop_assert!((mean.data[i] as f64 - (x + y) / 2.0).abs() <= 1e-5);
            prop_assert!((std.data[i] as f64 - (x - y).abs() / 2.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn sc_is_dice(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let n = (bits.len() as f64).sqrt() as usize;
        let bits = &bits[..n * n];
        let p: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let r: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let areas = confusion_areas(&mask(&p), &mask(&r)).unwrap();
        let both = p.iter().zip(&r).filter(|(x, y)| **x && **y).count() as f64;
        let sizes = (p.iter().filter(|x| **x).count() + r.iter().filter(|x| **x).count()) as f64;
        match sc_pod_far(areas).sc {
            Some(sc) => prop_assert!((sc - 2.0 * both / sizes).abs() <= 1e-12),
            None => prop_assert_eq!(sizes, 0.0),
        }
    }

    #[test]
    fn swapping_masks_swaps_misses_and_false_alarms(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 64)) {
        let p: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let r: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let fwd = confusion_areas(&mask(&p), &mask(&r)).unwrap();
        let back = confusion_areas(&mask(&r), &mask(&p)).unwrap();
        prop_assert_eq!(fwd.swapped(), back);
    }

    #[test]
    fn agreement_classes_partition_pixels(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 64)) {
        let p: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let r: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let ag = agreement_raster(&mask(&p), &mask(&r)).unwrap();
        let areas = confusion_areas(&mask(&p), &mask(&r)).unwrap();
        let count = |code: f32| ag.data.iter().filter(|&&v| v == code).count() as u64;
        prop_assert_eq!(count(agreement::AGREE), areas.a);
        prop_assert_eq!(count(agreement::FALSE_NEGATIVE), areas.b);
        prop_assert_eq!(count(agreement::FALSE_POSITIVE), areas.c);
        prop_assert_eq!(areas.a + areas.b + areas.c + count(agreement::BACKGROUND), 64);
    }
}

#[test]
fn ensemble_is_seeded_and_batch_independent() {
    let g = grid(4);
    let m = Raster::filled(g, FieldKind::Unit, 0.5);
    let h = Raster::filled(g, FieldKind::Unit, 0.1);
    let s = Affine { a: 0.0, b: 0.05 };
    let opts = SamplingOptions { k: 40, seed: 7, batch: 8, keep_samples: true };
    let a = sample_ensemble(&s, &m, &h, &opts).unwrap();
    let b = sample_ensemble(&s, &m, &h, &SamplingOptions { batch: 3, ..opts }).unwrap();
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.std, b.std);
    let samples = a.samples.unwrap();
    assert_eq!(samples.len(), 40);
    let (mean, std) = ensemble_stats(&samples).unwrap();
    assert_eq!(mean.data, a.mean.data);
    assert_eq!(std.data, a.std.data);
    assert!(a.std.data.iter().all(|&v| v > 0.0));
    let c = sample_ensemble(&s, &m, &h, &SamplingOptions { seed: 8, ..opts }).unwrap();
    assert_ne!(a.mean, c.mean);
    assert!(sample_ensemble(&s, &m, &h, &SamplingOptions { k: 1, ..opts }).is_err());
}

#[test]
fn terrain_blind_sampler_gives_null_ablation() {
    let g = grid(5);
    let cases: Vec<AblationInput> = (0..3)
        .map(|i| AblationInput {
            measurement: Raster::new(g, FieldKind::Unit, (0..25).map(|j| ((i * 7 + j) % 25) as f32 / 24.0).collect())
                .unwrap(),
            terrain: Raster::new(g, FieldKind::Unit, (0..25).map(|j| (j as f32 / 25.0).powi(2)).collect()).unwrap(),
        })
        .collect();
    let opts = SamplingOptions { k: 6, seed: 1, batch: 4, keep_samples: false };
    let null = terrain_ablation(&Affine { a: 0.0, b: 0.02 }, &cases, &opts, 24, 6.0).unwrap();
    assert_eq!(null.pixels_total, 75);
    let kept = null.pixels_total - null.pixels_excluded;
    assert!(kept > 0);
    let centre = null.histogram.counts.len() / 2;
    assert_eq!(null.histogram.counts[centre], kept);
    assert_eq!(null.mean_diff_h, 0.0);
    assert_eq!(null.frac_within_half_hour, 1.0);
    let live = terrain_ablation(&Affine { a: 0.3, b: 0.02 }, &cases, &opts, 24, 6.0).unwrap();
    assert!(live.mean_diff_h < 0.0);
    assert!(live.histogram.counts[centre] < live.histogram.total());
}

#[test]
fn ablation_excludes_only_late_pixels() {
    let g = grid(2);
    let flat = Raster::new(g, FieldKind::Arrival, vec![47.5, 47.5, 10.0, 48.0]).unwrap();
    let truth = Raster::new(g, FieldKind::Arrival, vec![48.0, 46.0, 47.5, 47.01]).unwrap();
    let r = pool_differences(&[(flat, truth)], 12, 6.0).unwrap();
    assert_eq!((r.pixels_total, r.pixels_excluded), (4, 2));
    assert_eq!(r.histogram.total(), 2);
}

#[test]
fn histogram_bins_and_clamps() {
    let mut h = Histogram::new(-1.0, 1.0, 4).unwrap();
    for v in [-5.0, -0.75, -0.25, 0.0, 0.49, 0.5, 9.0] {
        h.add(v);
    }
    assert_eq!(h.counts, vec![2, 1, 2, 2]);
    assert!(Histogram::new(1.0, 1.0, 3).is_err());
    assert!(Histogram::new(0.0, 1.0, 0).is_err());
}

#[test]
fn mask_evaluation_uses_burned_by_time() {
    let g = grid(2);
    let mean = Raster::new(g, FieldKind::Arrival, vec![1.0, 30.0, 48.0, 5.0]).unwrap();
    let reference = Raster::new(g, FieldKind::Mask, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
    let ev = evaluate_masks(&mean, &reference, 24.0).unwrap();
    assert_eq!((ev.areas.a, ev.areas.b, ev.areas.c), (1, 2, 1));
    assert_eq!(ev.scores.sc, Some(0.4));
}
