//! Grid geometry, the single-band raster type, normalization and resampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arrival-time value (hours) marking "no burn / no measurement within the window".
pub const BACKGROUND_HOURS: f32 = 48.0;
/// Terrain normalization span in meters.
pub const TERRAIN_SCALE_M: f32 = 3000.0;
/// Canonical domain edge length in meters (512 cells of 25 m).
pub const DOMAIN_EXTENT_M: f64 = 12_800.0;

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const CONTAINER_MAGIC: &[u8; 8] = b"FCRASTER";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Axis-aligned raster geometry.
///
/// `origin` is the outer corner of pixel (0, 0): the north-west corner for a
/// north-up grid, the south-west corner otherwise. Geolocation uses a local
/// equirectangular approximation about the grid center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub origin: GeoPoint,
    #[serde(default = "default_north_up")]
    pub north_up: bool,
}

fn default_north_up() -> bool {
    true
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, cell_size: f64, origin: GeoPoint) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("grid must have at least one cell".into()));
        }
        Ok(Self {
            rows,
            cols,
            cell_size,
            origin,
            north_up: true,
        })
    }

    /// The 512 x 512, 25 m grid centered on `center`.
    pub fn canonical(center: GeoPoint) -> Self {
        Self::centered(center, 512, 512, 25.0)
    }

    /// A square grid covering the canonical 12.8 km domain at `resolution` cells per side.
    pub fn domain(center: GeoPoint, resolution: usize) -> Self {
        Self::centered(center, resolution, resolution, DOMAIN_EXTENT_M / resolution as f64)
    }

    pub fn centered(center: GeoPoint, rows: usize, cols: usize, cell_size: f64) -> Self {
        let half_h = rows as f64 * cell_size / 2.0;
        let half_w = cols as f64 * cell_size / 2.0;
        let lat = center.lat + half_h / meters_per_deg_lat();
        let lon = center.lon - half_w / meters_per_deg_lon(center.lat);
        Self {
            rows,
            cols,
            cell_size,
            origin: GeoPoint::new(lat, lon),
            north_up: true,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn center(&self) -> GeoPoint {
        let lat = self.center_lat();
        let lon = self.origin.lon + self.width_m() / 2.0 / meters_per_deg_lon(lat);
        GeoPoint::new(lat, lon)
    }

    fn center_lat(&self) -> f64 {
        let half = self.height_m() / 2.0 / meters_per_deg_lat();
        if self.north_up {
            self.origin.lat - half
        } else {
            self.origin.lat + half
        }
    }

    /// Sub-grid whose pixel (0, 0) is this grid's pixel (`row`, `col`).
    pub fn window(&self, row: isize, col: isize, rows: usize, cols: usize, cell_size: f64) -> Self {
        let p = self.corner_latlon(row as f64, col as f64);
        Self {
            rows,
            cols,
            cell_size,
            origin: p,
            north_up: self.north_up,
        }
    }

    /// Lat/lon of fractional pixel coordinates, where (r, c) = (0, 0) is the
    /// outer corner and (r + 0.5, c + 0.5) the center of pixel (r, c).
    pub fn corner_latlon(&self, r: f64, c: f64) -> GeoPoint {
        let clat = self.center_lat();
        let dy = r * self.cell_size / meters_per_deg_lat();
        let lat = if self.north_up {
            self.origin.lat - dy
        } else {
            self.origin.lat + dy
        };
        let lon = self.origin.lon + c * self.cell_size / meters_per_deg_lon(clat);
        GeoPoint::new(lat, lon)
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> GeoPoint {
        self.corner_latlon(row as f64 + 0.5, col as f64 + 0.5)
    }

    /// Fractional (row, col) of a location; pixel (r, c) spans [r, r+1) x [c, c+1).
    pub fn fractional_pixel(&self, p: GeoPoint) -> (f64, f64) {
        let clat = self.center_lat();
        let dy = (p.lat - self.origin.lat) * meters_per_deg_lat() / self.cell_size;
        let r = if self.north_up { -dy } else { dy };
        let c = (p.lon - self.origin.lon) * meters_per_deg_lon(clat) / self.cell_size;
        (r, c)
    }

    /// Pixel containing a location, if it is inside the grid.
    pub fn locate(&self, p: GeoPoint) -> Option<(usize, usize)> {
        let (r, c) = self.fractional_pixel(p);
        if r < 0.0 || c < 0.0 {
            return None;
        }
        let (r, c) = (r.floor() as usize, c.floor() as usize);
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.locate(p).is_some()
    }
}

fn meters_per_deg_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

fn meters_per_deg_lon(lat: f64) -> f64 {
    meters_per_deg_lat() * lat.to_radians().cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Hours since ignition, sentinel 48 for unburned.
    Arrival,
    /// Meters above reference.
    Terrain,
    /// Observed arrival hours, sentinel 48 for background.
    Measurement,
    /// Normalized, dimensionless in [0, 1].
    Unit,
    /// Ensemble standard deviation in hours.
    StdDev,
    /// Per-pixel agreement class codes.
    Agreement,
    /// 0/1 mask.
    Mask,
}

impl FieldKind {
    pub fn units(self) -> &'static str {
        match self {
            FieldKind::Arrival | FieldKind::Measurement | FieldKind::StdDev => "hours",
            FieldKind::Terrain => "meters",
            FieldKind::Unit => "normalized",
            FieldKind::Agreement | FieldKind::Mask => "class",
        }
    }
}

/// Single-band, row-major, single-precision raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: GridSpec,
    pub kind: FieldKind,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(grid: GridSpec, kind: FieldKind, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: format!("{} values", grid.len()),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self { grid, kind, data })
    }

    pub fn filled(grid: GridSpec, kind: FieldKind, value: f32) -> Self {
        Self {
            grid,
            kind,
            data: vec![value; grid.len()],
        }
    }

    /// Builds a raster and checks the invariant of its kind.
    pub fn validated(grid: GridSpec, kind: FieldKind, data: Vec<f32>) -> Result<Self> {
        let r = Self::new(grid, kind, data)?;
        r.validate()?;
        Ok(r)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.grid.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.grid.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.grid.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        let cols = self.grid.cols;
        self.data[row * cols + col] = v;
    }

    pub fn with_kind(mut self, kind: FieldKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn map(&self, kind: FieldKind, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            grid: self.grid,
            kind,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                row: i / self.grid.cols,
                col: i % self.grid.cols,
                value: self.data[i],
            }),
        }
    }

    pub fn check_same_grid(&self, other: &Raster) -> Result<()> {
        if self.grid.same_shape(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: format!("{}x{}", self.rows(), self.cols()),
                actual: format!("{}x{}", other.rows(), other.cols()),
            })
        }
    }

    /// Checks the value-range invariant of this raster's kind.
    pub fn validate(&self) -> Result<()> {
        self.check_finite()?;
        let bad = |what: &str, v: f32| Err(Error::Invariant(format!("{what}: {v}")));
        match self.kind {
            FieldKind::Arrival => {
                if let Some(&v) = self.data.iter().find(|&&v| !(0.0..=BACKGROUND_HOURS).contains(&v)) {
                    return bad("arrival outside [0, 48]", v);
                }
            }
            FieldKind::Measurement => {
                if let Some(&v) = self
                    .data
                    .iter()
                    .find(|&&v| v != BACKGROUND_HOURS && !(v > -2.0 && v < BACKGROUND_HOURS))
                {
                    return bad("measurement neither background nor in (-2, 48)", v);
                }
            }
            FieldKind::Unit | FieldKind::Mask => {
                if let Some(&v) = self.data.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
                    return bad("normalized value outside [0, 1]", v);
                }
            }
            FieldKind::StdDev => {
                if let Some(&v) = self.data.iter().find(|&&v| v < 0.0) {
                    return bad("negative standard deviation", v);
                }
            }
            FieldKind::Terrain | FieldKind::Agreement => {}
        }
        Ok(())
    }
}

/// Divides arrival or measurement hours by 48 and clamps into [0, 1].
pub fn normalize_arrival(field: &Raster) -> Result<Raster> {
    match field.kind {
        FieldKind::Arrival | FieldKind::Measurement => {}
        other => {
            return Err(Error::WrongKind {
                expected: "arrival or measurement",
                actual: other,
            })
        }
    }
    field.check_finite()?;
    Ok(field.map(FieldKind::Unit, |v| (v / BACKGROUND_HOURS).clamp(0.0, 1.0)))
}

/// Inverse of [`normalize_arrival`] on its unclamped range.
pub fn denormalize_arrival(unit: &Raster, kind: FieldKind) -> Raster {
    unit.map(kind, |u| u * BACKGROUND_HOURS)
}

/// Subtracts the minimum elevation, divides by 3000 m and clamps into [0, 1].
pub fn normalize_terrain(h: &Raster) -> Result<Raster> {
    if h.kind != FieldKind::Terrain {
        return Err(Error::WrongKind {
            expected: "terrain",
            actual: h.kind,
        });
    }
    h.check_finite()?;
    let (lo, _) = h.min_max();
    Ok(h.map(FieldKind::Unit, |v| ((v - lo) / TERRAIN_SCALE_M).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Box-kernel average of each `factor x factor` block.
    BlockMean,
    /// Replicates each coarse value into its `factor x factor` block.
    Nearest,
}

fn integer_ratio(big: f64, small: f64) -> Result<usize> {
    let ratio = big / small;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::NonIntegerRatio(ratio));
    }
    Ok(rounded as usize)
}

/// Resamples between grids whose cell sizes differ by an integer factor and
/// whose extents coincide.
pub fn resample(field: &Raster, target: &GridSpec, mode: ResampleMode) -> Result<Raster> {
    let src = &field.grid;
    match mode {
        ResampleMode::BlockMean => {
            let f = integer_ratio(target.cell_size, src.cell_size)?;
            if target.rows * f != src.rows || target.cols * f != src.cols {
                return Err(Error::GridMismatch {
                    expected: format!("{}x{} source cells", target.rows * f, target.cols * f),
                    actual: format!("{}x{}", src.rows, src.cols),
                });
            }
            let norm = 1.0 / (f * f) as f64;
            let mut out = Vec::with_capacity(target.len());
            for r in 0..target.rows {
                for c in 0..target.cols {
                    let mut acc = 0.0f64;
                    for i in r * f..(r + 1) * f {
                        let row = &field.data[i * src.cols + c * f..i * src.cols + (c + 1) * f];
                        acc += row.iter().map(|&v| v as f64).sum::<f64>();
                    }
                    out.push((acc * norm) as f32);
                }
            }
            Raster::new(*target, field.kind, out)
        }
        ResampleMode::Nearest => {
            let f = integer_ratio(src.cell_size, target.cell_size)?;
            if src.rows * f != target.rows || src.cols * f != target.cols {
                return Err(Error::GridMismatch {
                    expected: format!("{}x{} target cells", src.rows * f, src.cols * f),
                    actual: format!("{}x{}", target.rows, target.cols),
                });
            }
            let mut out = Vec::with_capacity(target.len());
            for r in 0..target.rows {
                let sr = r / f;
                for c in 0..target.cols {
                    out.push(field.data[sr * src.cols + c / f]);
                }
            }
            Raster::new(*target, field.kind, out)
        }
    }
}

/// Offsets that center an `inner` extent in an `outer` one; odd remainders go
/// to the bottom/right.
fn center_offset(outer: usize, inner: usize) -> usize {
    (outer - inner) / 2
}

/// Embeds `field` in the middle of a larger grid filled with `fill`.
pub fn pad_center(field: &Raster, target: &GridSpec, fill: f32) -> Result<Raster> {
    let (rows, cols) = (field.rows(), field.cols());
    if target.rows < rows || target.cols < cols {
        return Err(Error::TargetTooSmall {
            rows,
            cols,
            target_rows: target.rows,
            target_cols: target.cols,
        });
    }
    let (r0, c0) = (center_offset(target.rows, rows), center_offset(target.cols, cols));
    let mut out = Raster::filled(*target, field.kind, fill);
    for r in 0..rows {
        let dst = (r + r0) * target.cols + c0;
        out.data[dst..dst + cols].copy_from_slice(&field.data[r * cols..(r + 1) * cols]);
    }
    Ok(out)
}

/// Cuts the central `rows x cols` window out of `field`; inverse of [`pad_center`].
pub fn crop_center(field: &Raster, rows: usize, cols: usize) -> Result<Raster> {
    if rows > field.rows() || cols > field.cols() {
        return Err(Error::CropOutOfBounds);
    }
    let (r0, c0) = (center_offset(field.rows(), rows), center_offset(field.cols(), cols));
    let grid = field
        .grid
        .window(r0 as isize, c0 as isize, rows, cols, field.grid.cell_size);
    let mut data = Vec::with_capacity(rows * cols);
    for r in r0..r0 + rows {
        data.extend_from_slice(&field.data[r * field.cols() + c0..r * field.cols() + c0 + cols]);
    }
    Raster::new(grid, field.kind, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    rows: usize,
    cols: usize,
    cell_size: f64,
    origin: GeoPoint,
    north_up: bool,
    kind: FieldKind,
    units: String,
}

/// Writes the binary container: 8-byte magic, little-endian u32 header length,
/// JSON header, then `rows * cols` little-endian f32 values in row-major order.
pub fn write_container<W: Write>(field: &Raster, mut w: W) -> std::io::Result<()> {
    let header = ContainerHeader {
        format: "fcraster-1".into(),
        rows: field.rows(),
        cols: field.cols(),
        cell_size: field.grid.cell_size,
        origin: field.grid.origin,
        north_up: field.grid.north_up,
        kind: field.kind,
        units: field.kind.units().into(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut bytes = Vec::with_capacity(field.data.len() * 4);
    for v in &field.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()
}

pub fn read_container<R: Read>(mut r: R) -> Result<Raster> {
    let parse = |detail: String| Error::Parse {
        what: "raster container",
        detail,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| parse(e.to_string()))?;
    if &magic != CONTAINER_MAGIC {
        return Err(parse("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|e| parse(e.to_string()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|e| parse(e.to_string()))?;
    let h: ContainerHeader = serde_json::from_slice(&json).map_err(|e| parse(e.to_string()))?;
    let mut grid = GridSpec::new(h.rows, h.cols, h.cell_size, h.origin)?;
    grid.north_up = h.north_up;
    let mut bytes = vec![0u8; grid.len() * 4];
    r.read_exact(&mut bytes).map_err(|e| parse(e.to_string()))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Raster::new(grid, h.kind, data)
}

pub fn save(field: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_container(field, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_container(BufReader::new(f))
}
