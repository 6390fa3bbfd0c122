//! Geometric augmentation of simulated (arrival, terrain) pairs into
//! fixed-size training crops.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FieldKind, GridSpec, Raster, BACKGROUND_HOURS};
use crate::seed::Rng;

/// Half-width of the translation box in meters.
pub const MAX_SHIFT_M: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Counter-clockwise rotation in degrees, [0, 360).
    pub rotation: f64,
    /// (east, north) shift in meters, each within +/-500 m.
    pub translation: (f64, f64),
    /// Output grid; its cell size may differ from the source grid's.
    pub crop: GridSpec,
}

impl AugmentParams {
    pub fn identity(crop: GridSpec) -> Self {
        Self {
            rotation: 0.0,
            translation: (0.0, 0.0),
            crop,
        }
    }

    pub fn sample(rng: &mut Rng, crop: GridSpec) -> Self {
        Self {
            rotation: rng.random_range(0.0..360.0),
            translation: (
                rng.random_range(-MAX_SHIFT_M..=MAX_SHIFT_M),
                rng.random_range(-MAX_SHIFT_M..=MAX_SHIFT_M),
            ),
            crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (dx, dy) = self.translation;
        if dx.abs() > MAX_SHIFT_M || dy.abs() > MAX_SHIFT_M {
            return Err(Error::InvalidParameter(format!(
                "translation ({dx}, {dy}) m outside the 1 km box"
            )));
        }
        if !self.rotation.is_finite() {
            return Err(Error::InvalidParameter("rotation must be finite".into()));
        }
        Ok(())
    }
}

/// Shifts burned arrivals so the earliest one is at time zero.
pub fn zero_ignition(tau: &Raster) -> Result<Raster> {
    let first = tau
        .data
        .iter()
        .copied()
        .filter(|&v| v < BACKGROUND_HOURS)
        .fold(f32::INFINITY, f32::min);
    if !first.is_finite() {
        return Err(Error::NothingBurned);
    }
    Ok(tau.map(tau.kind, |v| if v < BACKGROUND_HOURS { v - first } else { v }))
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Applies one rotate-translate-crop transform to both fields.
///
/// Arrival uses nearest-neighbour sampling so no new arrival values appear;
/// terrain is sampled bilinearly. Rotation is about the source center and the
/// translation is applied after it.
pub fn augment_pair(tau: &Raster, h: &Raster, params: &AugmentParams) -> Result<(Raster, Raster)> {
    tau.check_same_grid(h)?;
    params.validate()?;
    let src = tau.grid;
    let out = params.crop;
    let (sin, cos) = params.rotation.to_radians().sin_cos();
    let (tx, ty) = params.translation;
    let mut tau_out = Vec::with_capacity(out.len());
    let mut h_out = Vec::with_capacity(out.len());
    for r in 0..out.rows {
        for c in 0..out.cols {
            let east = (c as f64 + 0.5) * out.cell_size - out.width_m() / 2.0 - tx;
            let north = out.height_m() / 2.0 - (r as f64 + 0.5) * out.cell_size - ty;
            // Inverse rotation back into the source frame.
            let se = cos * east + sin * north;
            let sn = -sin * east + cos * north;
            let fc = snap((se + src.width_m() / 2.0) / src.cell_size - 0.5);
            let fr = snap((src.height_m() / 2.0 - sn) / src.cell_size - 0.5);
            let (nr, nc) = (fr.round(), fc.round());
            if nr < 0.0 || nc < 0.0 || nr >= src.rows as f64 || nc >= src.cols as f64 {
                return Err(Error::CropOutOfBounds);
            }
            tau_out.push(tau.get(nr as usize, nc as usize));
            h_out.push(bilinear(h, fr, fc));
        }
    }
    Ok((
        Raster::new(out, tau.kind, tau_out)?,
        Raster::new(out, FieldKind::Terrain, h_out)?,
    ))
}

fn bilinear(f: &Raster, fr: f64, fc: f64) -> f32 {
    let (rows, cols) = (f.rows() as f64, f.cols() as f64);
    let fr = fr.clamp(0.0, rows - 1.0);
    let fc = fc.clamp(0.0, cols - 1.0);
    let (r0, c0) = (fr.floor(), fc.floor());
    let (wr, wc) = (fr - r0, fc - c0);
    let (r0, c0) = (r0 as usize, c0 as usize);
    let r1 = (r0 + 1).min(f.rows() - 1);
    let c1 = (c0 + 1).min(f.cols() - 1);
    let v = |r, c| f.get(r, c) as f64;
    let top = v(r0, c0) * (1.0 - wc) + v(r0, c1) * wc;
    let bottom = v(r1, c0) * (1.0 - wc) + v(r1, c1) * wc;
    (top * (1.0 - wr) + bottom * wr) as f32
}
