//! Fast fire-spread surrogate: procedural terrain and fuels plus a
//! shortest-travel-time solver on a 16-neighbour stencil.
//!
//! Rate of spread follows a Rothermel-flavoured product of a per-fuel base
//! speed with slope and wind factors. Arrival times are exact shortest paths
//! over the stencil, so they satisfy the discrete Bellman condition.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FieldKind, GridSpec, Raster, BACKGROUND_HOURS};
use crate::seed::{self, Rng};

/// Number of Anderson (FBFM13) fuel models.
pub const FUEL_MODELS: usize = 13;
/// Marker for cells that cannot burn (water, rock).
pub const NON_BURNABLE: u8 = 0;

/// Base spread rate per fuel model, m/min, for models 1..=13.
pub const DEFAULT_BASE_ROS: [f64; FUEL_MODELS] = [
    1.6, 1.1, 2.0, 1.5, 0.6, 0.8, 0.7, 0.12, 0.35, 0.4, 0.25, 0.5, 0.65,
];

/// Grid steps (row, col) of the 16-neighbour stencil: the 8 king moves and
/// the 8 knight moves.
pub const STENCIL: [(isize, isize); 16] = [
    (-1, 0),
    (1, 0),
    (0, -1),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
    (-1, -2),
    (-1, 2),
    (1, -2),
    (1, 2),
    (-2, -1),
    (-2, 1),
    (2, -1),
    (2, 1),
];

/// Per-cell fuel model (1..=13) or [`NON_BURNABLE`].
#[derive(Debug, Clone, PartialEq)]
pub struct FuelMap {
    pub grid: GridSpec,
    pub category: Vec<u8>,
}

impl FuelMap {
    pub fn uniform(grid: GridSpec, category: u8) -> Self {
        Self {
            grid,
            category: vec![category; grid.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.category.len() != self.grid.len() {
            return Err(Error::GridMismatch {
                expected: format!("{} cells", self.grid.len()),
                actual: format!("{} cells", self.category.len()),
            });
        }
        match self
            .category
            .iter()
            .find(|&&c| c != NON_BURNABLE && !(1..=FUEL_MODELS as u8).contains(&c))
        {
            Some(&c) => Err(Error::UnknownFuel(c)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadConfig {
    /// m/min for fuel models 1..=13.
    pub base_ros: [f64; FUEL_MODELS],
    /// m/s; informational, the spread law uses `wind_gain`.
    pub wind_speed: f64,
    /// Direction the wind blows toward, degrees clockwise from north.
    pub wind_direction: f64,
    pub wind_gain: f64,
    pub slope_gain: f64,
    /// Ignition cell (row, col).
    pub ignition: (usize, usize),
    pub horizon_hours: f64,
    pub seed: u64,
}

impl SpreadConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.base_ros.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter("base spread rates must be positive".into()));
        }
        if !(self.horizon_hours > 0.0) {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if self.wind_gain < 0.0 || self.slope_gain < 0.0 {
            return Err(Error::InvalidParameter("gains must be non-negative".into()));
        }
        if self.ignition.0 >= grid.rows || self.ignition.1 >= grid.cols {
            return Err(Error::InvalidParameter(format!(
                "ignition {:?} outside {}x{} grid",
                self.ignition, grid.rows, grid.cols
            )));
        }
        Ok(())
    }

    /// Random weather and spread parameters for one synthetic fire. The
    /// ranges give fires roughly 2-12 km across after 48 h.
    pub fn sample(seed: u64, grid: &GridSpec) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "spread-config", 0));
        let ros_scale = rng.random_range(0.55..1.6);
        let mut base_ros = DEFAULT_BASE_ROS;
        for v in &mut base_ros {
            *v *= ros_scale;
        }
        let wind_speed: f64 = rng.random_range(0.5..9.0);
        let jitter = (1000.0 / grid.cell_size).round() as i64;
        let jr = rng.random_range(-jitter..=jitter) as isize;
        let jc = rng.random_range(-jitter..=jitter) as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        Self {
            base_ros,
            wind_speed,
            wind_direction: rng.random_range(0.0..360.0),
            wind_gain: 0.35 * wind_speed,
            slope_gain: rng.random_range(2.0..6.0),
            ignition: (
                clamp(grid.rows as isize / 2 + jr, grid.rows),
                clamp(grid.cols as isize / 2 + jc, grid.cols),
            ),
            horizon_hours: BACKGROUND_HOURS as f64,
            seed,
        }
    }

    /// Spread speed in m/min for `category` along a step with rise/run
    /// `slope` and cosine `wind_alignment` between step and wind direction.
    pub fn rate_of_spread(&self, category: u8, slope: f64, wind_alignment: f64) -> Result<f64> {
        if !(1..=FUEL_MODELS as u8).contains(&category) {
            return Err(Error::UnknownFuel(category));
        }
        Ok(self.base_ros[category as usize - 1]
            * (1.0 + self.slope_gain * slope.max(0.0))
            * (1.0 + self.wind_gain * wind_alignment.max(0.0)))
    }
}

/// Smooth lattice noise evaluated at physical coordinates, so grids of any
/// resolution over the same area see the same landscape.
struct ValueNoise {
    seed: u64,
}

impl ValueNoise {
    fn lattice(&self, octave: u64, i: i64, j: i64) -> f64 {
        let h = seed::derive(self.seed ^ octave.wrapping_mul(0x9E37), "lattice", (i as u64) << 32 ^ (j as u64 & 0xFFFF_FFFF));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn octave(&self, octave: u64, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(fx), s(fy));
        let (i, j) = (x0 as i64, y0 as i64);
        let a = self.lattice(octave, i, j);
        let b = self.lattice(octave, i + 1, j);
        let c = self.lattice(octave, i, j + 1);
        let d = self.lattice(octave, i + 1, j + 1);
        let top = a + (b - a) * sx;
        let bottom = c + (d - c) * sx;
        top + (bottom - top) * sy
    }

    /// Fractal sum with base wavelength `wavelength` meters.
    fn fractal(&self, x: f64, y: f64, wavelength: f64, octaves: u32) -> f64 {
        let mut total = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / wavelength;
        for o in 0..octaves {
            total += amp * self.octave(o as u64, x * freq, y * freq);
            amp *= 0.5;
            freq *= 2.0;
        }
        total
    }
}

/// Physical (east, south) meters of pixel centers relative to the grid center.
fn pixel_offsets(grid: &GridSpec) -> impl Iterator<Item = (f64, f64)> + '_ {
    let (h0, w0) = (grid.height_m() / 2.0, grid.width_m() / 2.0);
    (0..grid.rows).flat_map(move |r| {
        (0..grid.cols).map(move |c| {
            (
                (c as f64 + 0.5) * grid.cell_size - w0,
                (r as f64 + 0.5) * grid.cell_size - h0,
            )
        })
    })
}

/// Fractal terrain with exactly `relief` meters between lowest and highest cell.
pub fn synth_terrain(seed: u64, relief: f64, grid: &GridSpec) -> Result<Raster> {
    if !(relief >= 0.0) {
        return Err(Error::InvalidParameter(format!("relief must be >= 0, got {relief}")));
    }
    let mut rng = seed::rng(seed::derive(seed, "terrain-base", 0));
    let base: f64 = rng.random_range(100.0..2000.0);
    if relief == 0.0 {
        return Ok(Raster::filled(*grid, FieldKind::Terrain, base as f32));
    }
    let noise = ValueNoise {
        seed: seed::derive(seed, "terrain", 0),
    };
    let raw: Vec<f64> = pixel_offsets(grid)
        .map(|(x, y)| noise.fractal(x + 1e5, y + 1e5, 9000.0, 6))
        .collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let data = raw
        .iter()
        .map(|&v| (base + (v - lo) / span * relief) as f32)
        .collect();
    Raster::new(*grid, FieldKind::Terrain, data)
}

/// Patchy fuel map: a few dominant fuel models laid out as blobs, with sparse
/// non-burnable lakes/rock.
pub fn synth_fuel(seed: u64, grid: &GridSpec) -> FuelMap {
    let mut rng = seed::rng(seed::derive(seed, "fuel-palette", 0));
    let palette: Vec<u8> = (0..4).map(|_| rng.random_range(1..=FUEL_MODELS as u8)).collect();
    let noise = ValueNoise {
        seed: seed::derive(seed, "fuel", 0),
    };
    let barrier = ValueNoise {
        seed: seed::derive(seed, "barrier", 0),
    };
    let category = pixel_offsets(grid)
        .map(|(x, y)| {
            if barrier.fractal(x + 3e5, y + 3e5, 1500.0, 3) > 1.45 {
                return NON_BURNABLE;
            }
            let v = noise.fractal(x + 2e5, y + 2e5, 4000.0, 3) / 1.75;
            palette[((v * palette.len() as f64) as usize).min(palette.len() - 1)]
        })
        .collect();
    FuelMap {
        grid: *grid,
        category,
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    minutes: f64,
    index: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .minutes
            .total_cmp(&self.minutes)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Edge travel times over a terrain/fuel pair.
pub struct SpreadModel<'a> {
    terrain: &'a Raster,
    fuel: &'a FuelMap,
    config: &'a SpreadConfig,
    wind: (f64, f64),
}

impl<'a> SpreadModel<'a> {
    pub fn new(terrain: &'a Raster, fuel: &'a FuelMap, config: &'a SpreadConfig) -> Result<Self> {
        if !terrain.grid.same_shape(&fuel.grid) {
            return Err(Error::GridMismatch {
                expected: format!("{}x{}", terrain.rows(), terrain.cols()),
                actual: format!("{}x{}", fuel.grid.rows, fuel.grid.cols),
            });
        }
        fuel.validate()?;
        config.validate(&terrain.grid)?;
        terrain.check_finite()?;
        let th = config.wind_direction.to_radians();
        Ok(Self {
            terrain,
            fuel,
            config,
            wind: (th.sin(), th.cos()),
        })
    }

    fn burnable(&self, r: usize, c: usize) -> bool {
        self.fuel.category[r * self.fuel.grid.cols + c] != NON_BURNABLE
    }

    /// Minutes for the front to travel from cell `from` to its stencil
    /// neighbour `from + step`, or `None` when the edge cannot burn.
    pub fn edge_minutes(&self, from: (usize, usize), step: (isize, isize)) -> Option<f64> {
        let grid = &self.terrain.grid;
        let to_r = from.0 as isize + step.0;
        let to_c = from.1 as isize + step.1;
        if to_r < 0 || to_c < 0 || to_r >= grid.rows as isize || to_c >= grid.cols as isize {
            return None;
        }
        let to = (to_r as usize, to_c as usize);
        if !self.burnable(from.0, from.1) || !self.burnable(to.0, to.1) {
            return None;
        }
        if step.0.abs() + step.1.abs() == 3 {
            // Knight moves must not jump across a non-burnable cell.
            let (mr, mc) = (step.0 / 2, step.1 / 2);
            let a = ((from.0 as isize + mr) as usize, (from.1 as isize + mc) as usize);
            let b = ((to.0 as isize - mr) as usize, (to.1 as isize - mc) as usize);
            if !self.burnable(a.0, a.1) || !self.burnable(b.0, b.1) {
                return None;
            }
        }
        let (dr, dc) = (step.0 as f64, step.1 as f64);
        let len = (dr * dr + dc * dc).sqrt();
        let dist = len * grid.cell_size;
        let rise = (self.terrain.get(to.0, to.1) - self.terrain.get(from.0, from.1)) as f64;
        let slope = rise / dist;
        let north = if grid.north_up { -dr } else { dr };
        let align = (dc * self.wind.0 + north * self.wind.1) / len;
        let cat = |(r, c): (usize, usize)| self.fuel.category[r * grid.cols + c];
        let v_from = self.config.rate_of_spread(cat(from), slope, align).ok()?;
        let v_to = self.config.rate_of_spread(cat(to), slope, align).ok()?;
        Some(dist / (0.5 * (v_from + v_to)))
    }
}

/// Shortest-travel-time arrival field in hours; cells not reached within the
/// horizon hold the 48 h sentinel.
pub fn simulate_arrival(terrain: &Raster, fuel: &FuelMap, config: &SpreadConfig) -> Result<Raster> {
    let model = SpreadModel::new(terrain, fuel, config)?;
    let grid = terrain.grid;
    let horizon = config.horizon_hours * 60.0;
    let mut minutes = vec![f64::INFINITY; grid.len()];
    let mut done = vec![false; grid.len()];
    let mut heap = BinaryHeap::new();
    let start = config.ignition.0 * grid.cols + config.ignition.1;
    minutes[start] = 0.0;
    heap.push(Frontier {
        minutes: 0.0,
        index: start,
    });
    while let Some(Frontier { minutes: t, index }) = heap.pop() {
        if done[index] {
            continue;
        }
        if t > horizon {
            break;
        }
        done[index] = true;
        let cell = (index / grid.cols, index % grid.cols);
        for &step in &STENCIL {
            let Some(dt) = model.edge_minutes(cell, step) else {
                continue;
            };
            let j = (cell.0 as isize + step.0) as usize * grid.cols + (cell.1 as isize + step.1) as usize;
            let cand = t + dt;
            if !done[j] && cand < minutes[j] {
                minutes[j] = cand;
                heap.push(Frontier {
                    minutes: cand,
                    index: j,
                });
            }
        }
    }
    let data = minutes
        .iter()
        .map(|&m| {
            if m <= horizon {
                ((m / 60.0) as f32).min(BACKGROUND_HOURS)
            } else {
                BACKGROUND_HOURS
            }
        })
        .collect();
    Raster::new(grid, FieldKind::Arrival, data)
}

/// A complete synthetic fire: landscape, weather and its arrival field.
#[derive(Debug, Clone)]
pub struct SimulatedFire {
    pub terrain: Raster,
    pub fuel: FuelMap,
    pub config: SpreadConfig,
    pub arrival: Raster,
}

/// Samples a landscape and weather for `seed` and runs the spread solver.
pub fn simulate_fire(seed: u64, grid: &GridSpec) -> Result<SimulatedFire> {
    let mut rng: Rng = seed::rng(seed::derive(seed, "relief", 0));
    let relief = rng.random_range(50.0..1500.0);
    let terrain = synth_terrain(seed, relief, grid)?;
    let mut fuel = synth_fuel(seed, grid);
    let config = SpreadConfig::sample(seed, grid);
    // Keep the ignition neighbourhood burnable so every fire actually spreads.
    let (ir, ic) = config.ignition;
    for r in ir.saturating_sub(2)..(ir + 3).min(grid.rows) {
        for c in ic.saturating_sub(2)..(ic + 3).min(grid.cols) {
            let i = r * grid.cols + c;
            if fuel.category[i] == NON_BURNABLE {
                fuel.category[i] = 1 + (seed % FUEL_MODELS as u64) as u8;
            }
        }
    }
    let arrival = simulate_arrival(&terrain, &fuel, &config)?;
    Ok(SimulatedFire {
        terrain,
        fuel,
        config,
        arrival,
    })
}
