//! Perimeter agreement metrics and the terrain ablation harness.

use serde::{Deserialize, Serialize};

use crate::ensemble::{perimeter_at, sample_ensemble, ConditionalSampler, SamplingOptions};
use crate::error::{Error, Result};
use crate::raster::{FieldKind, GeoPoint, GridSpec, Raster};

/// Pixel counts: agreement, false negative (missed), false positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgreementAreas {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

impl AgreementAreas {
    pub fn swapped(self) -> Self {
        Self {
            a: self.a,
            b: self.c,
            c: self.b,
        }
    }
}

fn mask_value(v: f32) -> bool {
    v > 0.5
}

pub fn confusion_areas(pred: &Raster, reference: &Raster) -> Result<AgreementAreas> {
    pred.check_same_grid(reference)?;
    let mut out = AgreementAreas::default();
    for (&p, &r) in pred.data.iter().zip(&reference.data) {
        match (mask_value(p), mask_value(r)) {
            (true, true) => out.a += 1,
            (false, true) => out.b += 1,
            (true, false) => out.c += 1,
            (false, false) => {}
        }
    }
    Ok(out)
}

/// Sørensen-Dice coefficient, probability of detection and false alarm
/// ratio. A ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub sc: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
}

pub fn sc_pod_far(areas: AgreementAreas) -> Scores {
    let (a, b, c) = (areas.a as f64, areas.b as f64, areas.c as f64);
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    Scores {
        sc: ratio(2.0 * a, 2.0 * a + b + c),
        pod: ratio(a, a + b),
        far: ratio(c, a + c),
    }
}

/// Codes of the agreement raster.
pub mod agreement {
    pub const BACKGROUND: f32 = 0.0;
    pub const AGREE: f32 = 1.0;
    pub const FALSE_NEGATIVE: f32 = 2.0;
    pub const FALSE_POSITIVE: f32 = 3.0;
}

pub fn agreement_raster(pred: &Raster, reference: &Raster) -> Result<Raster> {
    pred.check_same_grid(reference)?;
    let data = pred
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&p, &r)| match (mask_value(p), mask_value(r)) {
            (true, true) => agreement::AGREE,
            (false, true) => agreement::FALSE_NEGATIVE,
            (true, false) => agreement::FALSE_POSITIVE,
            (false, false) => agreement::BACKGROUND,
        })
        .collect();
    Raster::new(pred.grid, FieldKind::Agreement, data)
}

/// A geolocated polygon: outer ring first, then holes. Rings hold
/// (lat, lon) vertices; closure is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub rings: Vec<Vec<GeoPoint>>,
}

/// Parses either GeoJSON (Polygon, MultiPolygon, Feature or
/// FeatureCollection) or plain ring text: one `lat lon` or `lat,lon` pair
/// per line, blank lines separating rings, `#` comments ignored.
pub fn parse_polygons(text: &str) -> Result<Vec<Polygon>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            what: "perimeter GeoJSON",
            detail: e.to_string(),
        })?;
        let mut out = Vec::new();
        collect_geojson(&v, &mut out)?;
        if out.is_empty() {
            return Err(Error::Parse {
                what: "perimeter GeoJSON",
                detail: "no polygon geometry found".into(),
            });
        }
        return Ok(out);
    }
    let mut rings: Vec<Vec<GeoPoint>> = vec![Vec::new()];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if !rings.last().unwrap().is_empty() {
                rings.push(Vec::new());
            }
            continue;
        }
        let nums: Vec<f64> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                what: "perimeter ring",
                detail: format!("line {}: {e}", n + 1),
            })?;
        if nums.len() != 2 {
            return Err(Error::Parse {
                what: "perimeter ring",
                detail: format!("line {}: expected `lat lon`", n + 1),
            });
        }
        rings.last_mut().unwrap().push(checked_point(nums[0], nums[1])?);
    }
    rings.retain(|r| !r.is_empty());
    if rings.iter().any(|r| r.len() < 3) || rings.is_empty() {
        return Err(Error::Parse {
            what: "perimeter ring",
            detail: "each ring needs at least 3 vertices".into(),
        });
    }
    Ok(vec![Polygon { rings }])
}

fn checked_point(lat: f64, lon: f64) -> Result<GeoPoint> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Parse {
            what: "perimeter vertex",
            detail: format!("({lat}, {lon}) outside valid lat/lon range"),
        });
    }
    Ok(GeoPoint::new(lat, lon))
}

fn collect_geojson(v: &serde_json::Value, out: &mut Vec<Polygon>) -> Result<()> {
    let bad = |d: &str| Error::Parse {
        what: "perimeter GeoJSON",
        detail: d.to_string(),
    };
    let ring_of = |r: &serde_json::Value| -> Result<Vec<GeoPoint>> {
        r.as_array()
            .ok_or_else(|| bad("ring is not an array"))?
            .iter()
            .map(|p| {
                let lon = p.get(0).and_then(|x| x.as_f64()).ok_or_else(|| bad("bad position"))?;
                let lat = p.get(1).and_then(|x| x.as_f64()).ok_or_else(|| bad("bad position"))?;
                checked_point(lat, lon)
            })
            .collect()
    };
    let polygon_of = |coords: &serde_json::Value| -> Result<Polygon> {
        let rings = coords
            .as_array()
            .ok_or_else(|| bad("polygon coordinates are not an array"))?
            .iter()
            .map(ring_of)
            .collect::<Result<Vec<_>>>()?;
        Ok(Polygon { rings })
    };
    match v.get("type").and_then(|t| t.as_str()) {
        Some("FeatureCollection") => {
            for f in v["features"].as_array().ok_or_else(|| bad("features is not an array"))? {
                collect_geojson(f, out)?;
            }
        }
        Some("Feature") => collect_geojson(&v["geometry"], out)?,
        Some("Polygon") => out.push(polygon_of(&v["coordinates"])?),
        Some("MultiPolygon") => {
            for p in v["coordinates"].as_array().ok_or_else(|| bad("coordinates is not an array"))? {
                out.push(polygon_of(p)?);
            }
        }
        _ => {}
    }
    Ok(())
}

/// Even-odd point-in-ring test in fractional pixel space.
fn inside_ring(ring: &[(f64, f64)], r: f64, c: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (r1, c1) = ring[i];
        let (r2, c2) = ring[(i + 1) % n];
        if (r1 > r) != (r2 > r) {
            let cross = c1 + (r - r1) / (r2 - r1) * (c2 - c1);
            if c < cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Mask of pixels whose centers fall inside any polygon (holes excluded).
pub fn rasterize_polygons(polygons: &[Polygon], grid: &GridSpec) -> Raster {
    let projected: Vec<Vec<Vec<(f64, f64)>>> = polygons
        .iter()
        .map(|p| {
            p.rings
                .iter()
                .map(|ring| ring.iter().map(|&q| grid.fractional_pixel(q)).collect())
                .collect()
        })
        .collect();
    let mut mask = Raster::filled(*grid, FieldKind::Mask, 0.0);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (pr, pc) = (r as f64 + 0.5, c as f64 + 0.5);
            let hit = projected
                .iter()
                .any(|rings| rings.iter().filter(|ring| inside_ring(ring, pr, pc)).count() % 2 == 1);
            if hit {
                mask.set(r, c, 1.0);
            }
        }
    }
    mask
}

#[derive(Debug, Clone)]
pub struct FireEvaluation {
    pub ref_time: f64,
    pub areas: AgreementAreas,
    pub scores: Scores,
    pub agreement: Raster,
}

/// Compares the mean-arrival perimeter at `ref_time` with a reference mask.
pub fn evaluate_masks(mean: &Raster, reference: &Raster, ref_time: f64) -> Result<FireEvaluation> {
    let pred = perimeter_at(mean, ref_time)?.mask;
    let areas = confusion_areas(&pred, reference)?;
    Ok(FireEvaluation {
        ref_time,
        areas,
        scores: sc_pod_far(areas),
        agreement: agreement_raster(&pred, reference)?,
    })
}

/// Rasterizes a geolocated reference perimeter onto the prediction grid and
/// scores the predicted perimeter against it.
pub fn evaluate_fire(mean: &Raster, reference: &[Polygon], ref_time: f64) -> Result<FireEvaluation> {
    let mask = rasterize_polygons(reference, &mean.grid);
    if mask.data.iter().all(|&v| v == 0.0) {
        return Err(Error::PerimeterOutsideDomain);
    }
    evaluate_masks(mean, &mask, ref_time)
}

/// Fixed-width histogram over a closed range; values outside land in the
/// edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::InvalidParameter(format!("histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let w = (hi - lo) / bins as f64;
        Ok(Self {
            edges: (0..=bins).map(|i| lo + w * i as f64).collect(),
            counts: vec![0; bins],
        })
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        let i = (((v - lo) / (hi - lo)) * bins as f64).floor();
        let i = (i.max(0.0) as usize).min(bins - 1);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// One validation case for the ablation: normalized measurement and terrain.
#[derive(Debug, Clone)]
pub struct AblationInput {
    pub measurement: Raster,
    pub terrain: Raster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub histogram: Histogram,
    pub pixels_total: u64,
    pub pixels_excluded: u64,
    /// Fraction of pooled pixels with |diff| < 0.5 h.
    pub frac_within_half_hour: f64,
    /// Mean of flat-terrain mean minus true-terrain mean, in hours.
    pub mean_diff_h: f64,
}

/// Pixels where both means exceed this are dropped from the pool.
pub const ABLATION_EXCLUDE_H: f32 = 47.0;

/// Pools pixelwise differences between paired mean maps.
pub fn pool_differences(pairs: &[(Raster, Raster)], bins: usize, range_h: f64) -> Result<AblationReport> {
    let mut histogram = Histogram::new(-range_h, range_h, bins)?;
    let (mut total, mut excluded, mut within) = (0u64, 0u64, 0u64);
    let mut sum = 0.0f64;
    for (flat, truth) in pairs {
        flat.check_same_grid(truth)?;
        for (&f, &t) in flat.data.iter().zip(&truth.data) {
            total += 1;
            if f > ABLATION_EXCLUDE_H && t > ABLATION_EXCLUDE_H {
                excluded += 1;
                continue;
            }
            let d = (f - t) as f64;
            histogram.add(d);
            sum += d;
            if d.abs() < 0.5 {
                within += 1;
            }
        }
    }
    let kept = total - excluded;
    Ok(AblationReport {
        histogram,
        pixels_total: total,
        pixels_excluded: excluded,
        frac_within_half_hour: if kept > 0 { within as f64 / kept as f64 } else { 0.0 },
        mean_diff_h: if kept > 0 { sum / kept as f64 } else { 0.0 },
    })
}

/// Ensemble means with the true terrain and with a zero terrain channel, using
/// the same latent draws for both, pooled into a difference histogram.
pub fn terrain_ablation<S: ConditionalSampler + ?Sized>(
    sampler: &S,
    cases: &[AblationInput],
    opts: &SamplingOptions,
    bins: usize,
    range_h: f64,
) -> Result<AblationReport> {
    let mut pairs = Vec::with_capacity(cases.len());
    for (i, case) in cases.iter().enumerate() {
        let o = SamplingOptions {
            seed: crate::seed::derive(opts.seed, "ablation", i as u64),
            keep_samples: false,
            ..*opts
        };
        let flat_terrain = case.terrain.map(case.terrain.kind, |_| 0.0);
        let truth = sample_ensemble(sampler, &case.measurement, &case.terrain, &o)?;
        let flat = sample_ensemble(sampler, &case.measurement, &flat_terrain, &o)?;
        pairs.push((flat.mean, truth.mean));
    }
    pool_differences(&pairs, bins, range_h)
}
