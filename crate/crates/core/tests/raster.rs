use firecast_core::raster::{
    crop_center, denormalize_arrival, normalize_arrival, normalize_terrain, pad_center, read_container, resample,
    write_container, ResampleMode,
};
use firecast_core::{FieldKind, GeoPoint, GridSpec, Raster, BACKGROUND_HOURS};
use proptest::prelude::*;

fn grid(rows: usize, cols: usize, cell: f64) -> GridSpec {
    GridSpec::centered(GeoPoint::new(37.5, -119.0), rows, cols, cell)
}

fn kind() -> impl Strategy<Value = FieldKind> {
    prop_oneof![
        Just(FieldKind::Arrival),
        Just(FieldKind::Terrain),
        Just(FieldKind::Measurement),
        Just(FieldKind::Unit),
        Just(FieldKind::StdDev),
        Just(FieldKind::Agreement),
        Just(FieldKind::Mask),
    ]
}

proptest! {
    #[test]
    fn arrival_normalization_round_trips(vals in prop::collection::vec(0.0f32..=1.0, 1..64)) {
        let n = vals.len();
        let unit = Raster::new(grid(1, n, 25.0), FieldKind::Unit, vals.clone()).unwrap();
        let hours = denormalize_arrival(&unit, FieldKind::Arrival);
        let back = normalize_arrival(&hours).unwrap();
        prop_assert_eq!(back.kind, FieldKind::Unit);
        for (a, b) in back.data.iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn normalized_fields_stay_in_unit_range(vals in prop::collection::vec(-100.0f32..5000.0, 1..64)) {
        let n = vals.len();
        let h = Raster::new(grid(1, n, 25.0), FieldKind::Terrain, vals.clone()).unwrap();
        let u = normalize_terrain(&h).unwrap();
        prop_assert!(u.validate().is_ok());
        let min = vals.iter().copied().fold(f32::INFINITY, f32::min);
        prop_assert!(u.data.iter().zip(&vals).all(|(&u, &v)| (v == min) == (u == 0.0)));
        let tau = h.map(FieldKind::Arrival, |v| v.abs().min(BACKGROUND_HOURS));
        prop_assert!(normalize_arrival(&tau).unwrap().validate().is_ok());
    }

    #[test]
    fn block_mean_of_constant_is_constant(c in -1000.0f32..1000.0, factor in 1usize..6, coarse in 1usize..6) {
        let n = factor * coarse;
        let fine = Raster::filled(grid(n, n, 25.0), FieldKind::Terrain, c);
        let target = grid(coarse, coarse, 25.0 * factor as f64);
        let out = resample(&fine, &target, ResampleMode::BlockMean).unwrap();
        prop_assert_eq!(out.data.len(), coarse * coarse);
        for v in out.data {
            prop_assert!((v - c).abs() <= c.abs() * 1e-6, "{} vs {}", v, c);
        }
    }

    #[test]
    fn nearest_then_block_mean_is_identity(vals in prop::collection::vec(0.0f32..48.0, 9), factor in 1usize..5) {
        let coarse = Raster::new(grid(3, 3, 25.0 * factor as f64), FieldKind::Arrival, vals.clone()).unwrap();
        let fine_grid = grid(3 * factor, 3 * factor, 25.0);
        let up = resample(&coarse, &fine_grid, ResampleMode::Nearest).unwrap();
        for r in 0..up.rows() {
            for c in 0..up.cols() {
                prop_assert_eq!(up.get(r, c), vals[(r / factor) * 3 + c / factor]);
            }
        }
        let down = resample(&up, &coarse.grid, ResampleMode::BlockMean).unwrap();
        for (a, b) in down.data.iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn pad_center_keeps_interior_and_crop_inverts(
        rows in 1usize..8,
        cols in 1usize..8,
        extra_r in 0usize..6,
        extra_c in 0usize..6,
        seed in any::<u64>(),
    ) {
        let vals: Vec<f32> = (0..rows * cols).map(|i| ((seed >> (i % 48)) & 0xFF) as f32 + i as f32 * 0.5).collect();
        let f = Raster::new(grid(rows, cols, 25.0), FieldKind::Terrain, vals.clone()).unwrap();
        let target = grid(rows + extra_r, cols + extra_c, 25.0);
        let padded = pad_center(&f, &target, -7.0).unwrap();
        let mut inner: Vec<f32> = padded.data.iter().copied().filter(|&v| v != -7.0).collect();
        let mut orig = vals.clone();
        inner.sort_by(f32::total_cmp);
        orig.sort_by(f32::total_cmp);
        prop_assert_eq!(inner, orig);
        prop_assert_eq!(padded.data.iter().filter(|&&v| v == -7.0).count(), target.len() - rows * cols);
        prop_assert_eq!(crop_center(&padded, rows, cols).unwrap().data, vals);
    }

    #[test]
    fn geolocation_round_trips_every_pixel(
        n in 1usize..40,
        cell in 5.0f64..500.0,
        lat in -60.0f64..60.0,
        lon in -179.0f64..179.0,
    ) {
        let g = GridSpec::centered(GeoPoint::new(lat, lon), n, n + 3, cell);
        for r in 0..g.rows {
            for c in 0..g.cols {
                prop_assert_eq!(g.locate(g.pixel_center(r, c)), Some((r, c)));
            }
        }
        let center = g.center();
        prop_assert!((center.lat - lat).abs() < 1e-9 && (center.lon - lon).abs() < 1e-9);
    }

    #[test]
    fn container_round_trips(k in kind(), vals in prop::collection::vec(-1e6f32..1e6, 12)) {
        let f = Raster::new(grid(3, 4, 12.5), k, vals).unwrap();
        let mut bytes = Vec::new();
        write_container(&f, &mut bytes).unwrap();
        let back = read_container(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, f);
    }
}

#[test]
fn container_rejects_damage() {
    let f = Raster::filled(grid(4, 4, 25.0), FieldKind::Arrival, 3.0);
    let mut bytes = Vec::new();
    write_container(&f, &mut bytes).unwrap();
    assert!(read_container(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xFF;
    assert!(read_container(bad.as_slice()).is_err());
    assert!(read_container(&bytes[..3]).is_err());
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.fcr");
    let f = Raster::new(grid(2, 2, 200.0), FieldKind::Measurement, vec![48.0, 1.5, -0.5, 48.0]).unwrap();
    firecast_core::raster::save(&f, &path).unwrap();
    assert_eq!(firecast_core::raster::load(&path).unwrap(), f);
    assert!(firecast_core::raster::load(dir.path().join("missing.fcr")).is_err());
}

#[test]
fn kinds_reject_out_of_range_values() {
    let g = grid(1, 2, 25.0);
    assert!(Raster::validated(g, FieldKind::Arrival, vec![0.0, 49.0]).is_err());
    assert!(Raster::validated(g, FieldKind::Unit, vec![0.0, 1.5]).is_err());
    assert!(Raster::validated(g, FieldKind::StdDev, vec![-0.1, 1.0]).is_err());
    assert!(Raster::validated(g, FieldKind::Measurement, vec![48.0, 47.5]).is_ok());
    assert!(Raster::new(g, FieldKind::Terrain, vec![f32::NAN, 0.0]).unwrap().check_finite().is_err());
    assert!(Raster::new(g, FieldKind::Terrain, vec![0.0]).is_err());
}
