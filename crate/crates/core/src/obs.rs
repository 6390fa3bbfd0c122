//! Approximate observation operator: degrades a true arrival field into a
//! sparse, coarse, noisy measurement resembling gridded 375 m active-fire
//! detections timed against a geostationary ignition estimate.
//!
//! Steps, in order: box-kernel coarsening, independent copies with random
//! pixel dropout, sorted observation times, window masking, min-combine,
//! ignition-time error, obstruction patches, background fill and nearest
//! upsampling back to the input grid.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    crop_center, pad_center, resample, FieldKind, GridSpec, Raster, ResampleMode, BACKGROUND_HOURS,
};
use crate::seed::{self, Rng};

/// Smallest burned maximum that leaves room for an observation time.
pub const MIN_OBSERVABLE_HOURS: f64 = 2.1;
const EARLIEST_OBSERVATION_H: f64 = 2.0;
const LATEST_MARGIN_H: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsParams {
    pub copies: usize,
    pub keep_prob: f64,
    /// Bounds (hours) of the window length δ.
    pub window: (f64, f64),
    /// Bounds (hours) of the ignition-time error δT.
    pub ignition_error: (f64, f64),
    pub patch_count: usize,
    pub patch_size_m: f64,
    /// Sensor resolution the truth is coarsened to.
    pub coarse_resolution_m: f64,
    pub seed: u64,
}

impl Default for ObsParams {
    fn default() -> Self {
        Self {
            copies: 4,
            keep_prob: 0.5,
            window: (6.0, 12.0),
            ignition_error: (0.0, 2.0),
            patch_count: 2,
            patch_size_m: 3000.0,
            coarse_resolution_m: 375.0,
            seed: 0,
        }
    }
}

impl ObsParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.copies == 0 {
            return bad("copies must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return bad(format!("keep_prob {} outside [0, 1]", self.keep_prob));
        }
        let (lo, hi) = self.window;
        if !(lo >= 0.0 && lo <= hi) {
            return bad(format!("window bounds ({lo}, {hi}) invalid"));
        }
        let (lo, hi) = self.ignition_error;
        if !(lo >= 0.0 && lo <= hi && hi <= EARLIEST_OBSERVATION_H) {
            return bad(format!("ignition error bounds ({lo}, {hi}) invalid"));
        }
        if !(self.patch_size_m >= 0.0) || !(self.coarse_resolution_m > 0.0) {
            return bad("patch size and coarse resolution must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// How a fine grid maps onto the sensor grid: a centered block of
/// `coarse_rows x coarse_cols` cells, each `factor x factor` fine pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseGeometry {
    pub factor: usize,
    pub coarse: GridSpec,
    pub fine: GridSpec,
}

impl CoarseGeometry {
    pub fn new(fine: &GridSpec, coarse_resolution_m: f64) -> Result<Self> {
        let factor = ((coarse_resolution_m / fine.cell_size).round() as usize).max(1);
        let (rows, cols) = (fine.rows / factor, fine.cols / factor);
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "{}x{} grid is smaller than one {factor}x{factor} sensor cell",
                fine.rows, fine.cols
            )));
        }
        let r0 = (fine.rows - rows * factor) / 2;
        let c0 = (fine.cols - cols * factor) / 2;
        let coarse = fine.window(r0 as isize, c0 as isize, rows, cols, fine.cell_size * factor as f64);
        Ok(Self {
            factor,
            coarse,
            fine: *fine,
        })
    }

    /// The fine-resolution grid exactly covered by the coarse cells.
    pub fn covered(&self) -> GridSpec {
        GridSpec {
            rows: self.coarse.rows * self.factor,
            cols: self.coarse.cols * self.factor,
            cell_size: self.fine.cell_size,
            origin: self.coarse.origin,
            north_up: self.coarse.north_up,
        }
    }

    /// Box-kernel coarsening of the covered region; the sentinel is averaged
    /// like any other value.
    pub fn coarsen(&self, field: &Raster) -> Result<Raster> {
        let inner = crop_center(field, self.coarse.rows * self.factor, self.coarse.cols * self.factor)?;
        resample(&inner, &self.coarse, ResampleMode::BlockMean)
    }

    /// Nearest upsampling back to the fine grid, padding the uncovered border.
    pub fn refine(&self, coarse: &Raster, fill: f32) -> Result<Raster> {
        let up = resample(coarse, &self.covered(), ResampleMode::Nearest)?;
        let mut out = pad_center(&up, &self.fine, fill)?;
        out.grid = self.fine;
        Ok(out)
    }
}

/// Four (or `copies`) ascending observation times drawn from U(2, max - 0.1).
pub fn sample_obs_times(max_arrival: f64, copies: usize, rng: &mut Rng) -> Result<Vec<f32>> {
    if !(max_arrival > MIN_OBSERVABLE_HOURS) {
        return Err(Error::FireTooSmall(max_arrival));
    }
    let hi = max_arrival - LATEST_MARGIN_H;
    let mut t: Vec<f32> = (0..copies)
        .map(|_| rng.random_range(EARLIEST_OBSERVATION_H..hi) as f32)
        .collect();
    t.sort_by(f32::total_cmp);
    Ok(t)
}

/// Sets arrivals inside (max(t - δ, 0), t] to `t`; everything else becomes background.
pub fn interval_mask(coarse: &Raster, t: f32, delta: f32) -> Raster {
    let lo = (t - delta).max(0.0);
    coarse.map(FieldKind::Measurement, |v| {
        if v > lo && v <= t {
            t
        } else {
            BACKGROUND_HOURS
        }
    })
}

/// Pixelwise minimum over equally-shaped measurement copies.
pub fn combine_min(copies: &[Raster]) -> Result<Raster> {
    let (first, rest) = copies
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("no copies to combine".into()))?;
    let mut out = first.clone();
    for c in rest {
        out.check_same_grid(c)?;
        for (o, &v) in out.data.iter_mut().zip(&c.data) {
            *o = o.min(v);
        }
    }
    Ok(out)
}

/// Every random choice the operator makes for one measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDraws {
    /// Retained coarse pixels per copy.
    pub keep: Vec<Vec<bool>>,
    pub times: Vec<f32>,
    pub windows: Vec<f32>,
    pub ignition_error: f32,
    /// Top-left coarse cell of each obstruction patch.
    pub patches: Vec<(usize, usize)>,
    pub patch_cells: usize,
}

impl ObservationDraws {
    pub fn sample(params: &ObsParams, geometry: &CoarseGeometry, max_arrival: f64, rng: &mut Rng) -> Result<Self> {
        let n = geometry.coarse.len();
        let keep = (0..params.copies)
            .map(|_| (0..n).map(|_| rng.random_bool(params.keep_prob)).collect())
            .collect();
        let times = sample_obs_times(max_arrival, params.copies, rng)?;
        let uniform = |rng: &mut Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi) as f32
            } else {
                lo as f32
            }
        };
        let windows = (0..params.copies).map(|_| uniform(rng, params.window)).collect();
        let ignition_error = uniform(rng, params.ignition_error);
        let patch_cells = ((params.patch_size_m / geometry.coarse.cell_size).round() as usize)
            .min(geometry.coarse.rows.min(geometry.coarse.cols));
        let patches = (0..params.patch_count)
            .map(|_| {
                (
                    rng.random_range(0..=geometry.coarse.rows - patch_cells),
                    rng.random_range(0..=geometry.coarse.cols - patch_cells),
                )
            })
            .collect();
        Ok(Self {
            keep,
            times,
            windows,
            ignition_error,
            patches,
            patch_cells,
        })
    }
}

/// Steps 2-10 on an already coarsened arrival field.
pub fn observe_coarse(coarse: &Raster, draws: &ObservationDraws) -> Result<Raster> {
    let copies = draws
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut retained = coarse.clone();
            if let Some(keep) = draws.keep.get(j) {
                for (v, &k) in retained.data.iter_mut().zip(keep) {
                    if !k {
                        *v = BACKGROUND_HOURS;
                    }
                }
            }
            interval_mask(&retained, t, draws.windows[j])
        })
        .collect::<Vec<_>>();
    let mut m = combine_min(&copies)?;
    for v in &mut m.data {
        if *v != BACKGROUND_HOURS {
            *v -= draws.ignition_error;
        }
    }
    let cols = m.cols();
    for &(r0, c0) in &draws.patches {
        for r in r0..(r0 + draws.patch_cells).min(m.rows()) {
            for c in c0..(c0 + draws.patch_cells).min(cols) {
                m.data[r * cols + c] = BACKGROUND_HOURS;
            }
        }
    }
    Ok(m)
}

/// Record of one application, enough to replay or audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTrace {
    pub seed: u64,
    pub max_arrival: f64,
    pub times: Vec<f32>,
    pub windows: Vec<f32>,
    pub ignition_error: f32,
    pub patches: Vec<(usize, usize)>,
    pub patch_cells: usize,
}

/// Largest burned (non-sentinel) arrival, if any.
pub fn max_burned(tau: &Raster) -> Option<f32> {
    tau.data
        .iter()
        .copied()
        .filter(|&v| v < BACKGROUND_HOURS)
        .reduce(f32::max)
}

/// Full operator: arrival field in, measurement field on the same grid out.
pub fn apply_observation(tau: &Raster, params: &ObsParams) -> Result<(Raster, ObservationTrace)> {
    params.validate()?;
    tau.check_finite()?;
    let max_arrival = max_burned(tau).ok_or(Error::FireTooSmall(0.0))? as f64;
    let geometry = CoarseGeometry::new(&tau.grid, params.coarse_resolution_m)?;
    let coarse = geometry.coarsen(tau)?;
    let mut rng = seed::rng(params.seed);
    let draws = ObservationDraws::sample(params, &geometry, max_arrival, &mut rng)?;
    let measured = observe_coarse(&coarse, &draws)?;
    let out = geometry.refine(&measured, BACKGROUND_HOURS)?;
    let trace = ObservationTrace {
        seed: params.seed,
        max_arrival,
        times: draws.times,
        windows: draws.windows,
        ignition_error: draws.ignition_error,
        patches: draws.patches,
        patch_cells: draws.patch_cells,
    };
    Ok((out.with_kind(FieldKind::Measurement), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoPoint;

    fn grid(n: usize, cell: f64) -> GridSpec {
        GridSpec::centered(GeoPoint::new(38.0, -122.0), n, n, cell)
    }

    fn coarse_of(vals: &[f32]) -> Raster {
        let n = (vals.len() as f64).sqrt() as usize;
        Raster::new(grid(n, 375.0), FieldKind::Arrival, vals.to_vec()).unwrap()
    }

    /// Cone fire centered in a 512 grid, 2 h per kilometer.
    fn cone(n: usize, cell: f64) -> Raster {
        let mut f = Raster::filled(grid(n, cell), FieldKind::Arrival, BACKGROUND_HOURS);
        let c = n as f64 / 2.0;
        for r in 0..n {
            for k in 0..n {
                let d = ((r as f64 - c).powi(2) + (k as f64 - c).powi(2)).sqrt() * cell / 1000.0;
                let t = 2.0 * d;
                if t < 40.0 {
                    f.set(r, k, t as f32);
                }
            }
        }
        f
    }

    #[test]
    fn times_are_sorted_and_bounded() {
        let mut rng = seed::rng(1);
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for _ in 0..10_000 {
            let t = sample_obs_times(48.0, 4, &mut rng).unwrap();
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            lo = lo.min(t[0]);
            hi = hi.max(t[3]);
        }
        assert!(lo >= 2.0 && hi <= 47.9, "{lo} {hi}");
        assert!(matches!(sample_obs_times(2.05, 4, &mut rng), Err(Error::FireTooSmall(_))));
    }

    #[test]
    fn interval_membership() {
        let m = interval_mask(&coarse_of(&[7.0, 3.0, 10.0, 48.0]), 10.0, 6.0);
        assert_eq!(m.data, vec![10.0, 48.0, 10.0, 48.0]);
        let m = interval_mask(&coarse_of(&[0.5, 5.0, 5.5, 0.0]), 5.0, 8.0);
        assert_eq!(m.data, vec![5.0, 5.0, 48.0, 48.0]);
    }

    #[test]
    fn min_combine() {
        let a = coarse_of(&[48.0, 1.0, 2.0, 48.0]);
        let b = coarse_of(&[48.0, 3.0, 1.0, 48.0]);
        let c = coarse_of(&[12.0, 3.0, 1.0, 48.0]);
        let d = coarse_of(&[20.0, 3.0, 1.0, 48.0]);
        assert_eq!(combine_min(&[a.clone(), a.clone(), a.clone(), a.clone()]).unwrap(), a);
        let abcd = combine_min(&[a.clone(), b.clone(), c.clone(), d.clone()]).unwrap();
        assert_eq!(abcd.data, vec![12.0, 1.0, 1.0, 48.0]);
        assert_eq!(combine_min(&[d, c, b, a]).unwrap(), abcd);
        assert!(combine_min(&[]).is_err());
    }

    #[test]
    fn canonical_geometry_pads_one_pixel() {
        let g = CoarseGeometry::new(&grid(512, 25.0), 375.0).unwrap();
        assert_eq!(g.factor, 15);
        assert_eq!((g.coarse.rows, g.coarse.cols), (34, 34));
        let desk = CoarseGeometry::new(&grid(64, 200.0), 375.0).unwrap();
        assert_eq!((desk.factor, desk.coarse.rows), (2, 32));
    }

    #[test]
    fn degenerate_parameters_reduce_to_thresholding() {
        let tau = cone(512, 25.0);
        let geometry = CoarseGeometry::new(&tau.grid, 375.0).unwrap();
        let coarse = geometry.coarsen(&tau).unwrap();
        let t = max_burned(&tau).unwrap();
        let draws = ObservationDraws {
            keep: vec![vec![true; coarse.data.len()]],
            times: vec![t],
            windows: vec![48.0],
            ignition_error: 0.0,
            patches: vec![],
            patch_cells: 0,
        };
        let m = observe_coarse(&coarse, &draws).unwrap();
        for (v, c) in m.data.iter().zip(&coarse.data) {
            if *c > 0.0 && *c <= t {
                assert_eq!(*v, t);
            } else {
                assert_eq!(*v, BACKGROUND_HOURS);
            }
        }
    }

    #[test]
    fn output_is_tile_constant_with_background_border() {
        let tau = cone(512, 25.0);
        let (m, trace) = apply_observation(&tau, &ObsParams::default().with_seed(4)).unwrap();
        m.validate().unwrap();
        assert_eq!(trace.times.len(), 4);
        for i in 0..512 {
            assert_eq!(m.get(0, i), BACKGROUND_HOURS);
            assert_eq!(m.get(511, i), BACKGROUND_HOURS);
        }
        for r in 1..511 {
            for c in 1..511 {
                let (tr, tc) = ((r - 1) / 15 * 15 + 1, (c - 1) / 15 * 15 + 1);
                assert_eq!(m.get(r, c), m.get(tr, tc));
            }
        }
    }

    #[test]
    fn same_seed_same_measurement() {
        let tau = cone(128, 100.0);
        let p = ObsParams::default().with_seed(77);
        assert_eq!(apply_observation(&tau, &p).unwrap(), apply_observation(&tau, &p).unwrap());
    }

    #[test]
    fn measurements_never_undercut_arrival_without_ignition_error() {
        let tau = cone(256, 50.0);
        let geometry = CoarseGeometry::new(&tau.grid, 375.0).unwrap();
        let coarse = geometry.coarsen(&tau).unwrap();
        let params = ObsParams {
            ignition_error: (0.0, 0.0),
            ..ObsParams::default()
        };
        for s in 0..50 {
            let (m, _) = apply_observation(&tau, &params.with_seed(s)).unwrap();
            let c = geometry.coarsen(&m).unwrap();
            for (mv, tv) in c.data.iter().zip(&coarse.data) {
                if *mv != BACKGROUND_HOURS {
                    assert!(mv >= tv);
                }
            }
        }
    }

    #[test]
    fn higher_retention_measures_more_pixels() {
        let tau = cone(128, 100.0);
        let count = |p: f64, s: u64| {
            let params = ObsParams {
                keep_prob: p,
                ..ObsParams::default()
            };
            let (m, _) = apply_observation(&tau, &params.with_seed(s)).unwrap();
            m.data.iter().filter(|&&v| v != BACKGROUND_HOURS).count()
        };
        let (mut low, mut high) = (0, 0);
        for s in 0..40 {
            low += count(0.2, s);
            high += count(0.8, s);
        }
        assert!(high > low, "{high} vs {low}");
    }

    #[test]
    fn too_small_fire_is_rejected() {
        let mut tau = Raster::filled(grid(64, 200.0), FieldKind::Arrival, BACKGROUND_HOURS);
        tau.set(30, 30, 0.0);
        tau.set(30, 31, 2.0);
        assert!(matches!(
            apply_observation(&tau, &ObsParams::default()),
            Err(Error::FireTooSmall(_))
        ));
    }
}
