//! Marching-squares iso-contours over pixel centers.

use std::collections::HashMap;

use serde_json::{json, Value};

use crate::raster::{GridSpec, Raster};

/// A closed ring in fractional pixel coordinates `(row, col)`, where pixel
/// (r, c) has its center at (r + 0.5, c + 0.5).
pub type Ring = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub level: f64,
    pub rings: Vec<Ring>,
}

type EdgeId = (usize, usize, u8);

/// Rings separating pixels where `inside` holds from the rest. Edge crossings
/// are placed by linear interpolation of `field` at `level`; the grid is
/// padded with an outside ring so every contour closes.
pub fn marching_squares(field: &Raster, level: f64, inside: impl Fn(usize, usize) -> bool) -> Contour {
    let (rows, cols) = (field.rows(), field.cols());
    let (pr, pc) = (rows + 2, cols + 2);
    let mut mask = vec![false; pr * pc];
    for r in 0..rows {
        for c in 0..cols {
            mask[(r + 1) * pc + c + 1] = inside(r, c);
        }
    }
    let value = |i: usize, j: usize| -> Option<f64> {
        (i >= 1 && j >= 1 && i <= rows && j <= cols).then(|| field.get(i - 1, j - 1) as f64)
    };
    let crossing = |a: (usize, usize), b: (usize, usize)| -> f64 {
        let (ia, ib) = (mask[a.0 * pc + a.1], mask[b.0 * pc + b.1]);
        let (from_in, from_out) = if ia && !ib { (a, b) } else { (b, a) };
        let frac = match (value(from_in.0, from_in.1), value(from_out.0, from_out.1)) {
            (Some(vi), Some(vo)) if (vo - vi).abs() > 1e-12 => ((level - vi) / (vo - vi)).clamp(0.0, 1.0),
            _ => 0.5,
        };
        // Fraction measured from `a` toward `b`.
        if from_in == a {
            frac
        } else {
            1.0 - frac
        }
    };
    let point = |e: EdgeId| -> (f64, f64) {
        let (i, j, dir) = e;
        let (a, b) = if dir == 0 { ((i, j), (i, j + 1)) } else { ((i, j), (i + 1, j)) };
        let t = crossing(a, b);
        let r = a.0 as f64 + t * (b.0 as f64 - a.0 as f64);
        let c = a.1 as f64 + t * (b.1 as f64 - a.1 as f64);
        // Padded index i sits at pixel center row (i - 1) + 0.5.
        (r - 0.5, c - 0.5)
    };

    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    for i in 0..pr - 1 {
        for j in 0..pc - 1 {
            let tl = mask[i * pc + j];
            let tr = mask[i * pc + j + 1];
            let br = mask[(i + 1) * pc + j + 1];
            let bl = mask[(i + 1) * pc + j];
            let case = (tl as u8) << 3 | (tr as u8) << 2 | (br as u8) << 1 | bl as u8;
            let top = (i, j, 0u8);
            let bottom = (i + 1, j, 0u8);
            let left = (i, j, 1u8);
            let right = (i, j + 1, 1u8);
            match case {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((top, right)),
                6 | 9 => segments.push((top, bottom)),
                7 | 8 => segments.push((left, top)),
                // Saddles: keep diagonal inside corners apart.
                5 => {
                    segments.push((top, right));
                    segments.push((left, bottom));
                }
                10 => {
                    segments.push((left, top));
                    segments.push((bottom, right));
                }
                _ => unreachable!(),
            }
        }
    }

    let mut by_edge: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (k, &(a, b)) in segments.iter().enumerate() {
        by_edge.entry(a).or_default().push(k);
        by_edge.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut rings = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, mut cursor) = segments[start];
        let mut ring = vec![point(first), point(cursor)];
        while cursor != first {
            let next = by_edge[&cursor].iter().copied().find(|&k| !used[k]);
            let Some(k) = next else { break };
            used[k] = true;
            let (a, b) = segments[k];
            cursor = if a == cursor { b } else { a };
            ring.push(point(cursor));
        }
        rings.push(ring);
    }
    Contour { level, rings }
}

/// GeoJSON FeatureCollection with one LineString per ring and a `time_h`
/// property holding the contour level.
pub fn contours_to_geojson(contours: &[Contour], grid: &GridSpec) -> Value {
    let features: Vec<Value> = contours
        .iter()
        .flat_map(|c| {
            c.rings.iter().map(move |ring| {
                let coords: Vec<[f64; 2]> = ring
                    .iter()
                    .map(|&(r, col)| {
                        let p = grid.corner_latlon(r, col);
                        [p.lon, p.lat]
                    })
                    .collect();
                json!({
                    "type": "Feature",
                    "properties": { "time_h": c.level },
                    "geometry": { "type": "LineString", "coordinates": coords },
                })
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{FieldKind, GeoPoint};

    fn radial(n: usize) -> Raster {
        let g = GridSpec::centered(GeoPoint::new(0.0, 0.0), n, n, 1.0);
        let mut f = Raster::filled(g, FieldKind::Arrival, 48.0);
        let c = n as f64 / 2.0;
        for r in 0..n {
            for k in 0..n {
                let d = ((r as f64 + 0.5 - c).powi(2) + (k as f64 + 0.5 - c).powi(2)).sqrt();
                f.set(r, k, d as f32);
            }
        }
        f
    }

    fn area(ring: &Ring) -> f64 {
        ring.windows(2)
            .map(|w| w[0].1 * w[1].0 - w[1].1 * w[0].0)
            .sum::<f64>()
            .abs()
            / 2.0
    }

    #[test]
    fn circle_contour_is_one_closed_ring_of_right_area() {
        let f = radial(40);
        let c = marching_squares(&f, 10.0, |r, k| f.get(r, k) as f64 <= 10.0);
        assert_eq!(c.rings.len(), 1);
        let ring = &c.rings[0];
        assert_eq!(ring.first(), ring.last());
        let a = area(ring);
        let exact = std::f64::consts::PI * 100.0;
        assert!((a - exact).abs() / exact < 0.02, "{a} vs {exact}");
    }

    #[test]
    fn empty_mask_has_no_rings_and_two_blobs_have_two() {
        let f = radial(20);
        assert!(marching_squares(&f, 1.0, |_, _| false).rings.is_empty());
        let c = marching_squares(&f, 0.0, |r, k| (r == 2 && k == 2) || (r == 15 && k == 15));
        assert_eq!(c.rings.len(), 2);
    }

    #[test]
    fn full_mask_traces_the_border() {
        let f = radial(5);
        let c = marching_squares(&f, 0.0, |_, _| true);
        assert_eq!(c.rings.len(), 1);
        let g = contours_to_geojson(&[c], &f.grid);
        assert_eq!(g["features"].as_array().unwrap().len(), 1);
        assert_eq!(g["features"][0]["properties"]["time_h"], 0.0);
    }
}
