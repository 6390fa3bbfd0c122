use chrono::{DateTime, Duration, TimeZone, Utc};
use firecast_core::ingest::{
    estimate_ignition, grid_viirs, hours_since, read_records, write_records, Confidence, DetectionRecord, DomainSpec,
    IgnitionSearch, Source,
};
use firecast_core::{raster, GeoPoint, BACKGROUND_HOURS};
use proptest::prelude::*;

fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 7, 14, 18, 0, 0).unwrap()
}

fn record(p: GeoPoint, t: DateTime<Utc>, confidence: Confidence, source: Source) -> DetectionRecord {
    DetectionRecord {
        lat: p.lat,
        lon: p.lon,
        time: t,
        confidence,
        source,
        footprint: if source == Source::Goes { 2000.0 } else { 375.0 },
    }
}

fn confidence() -> impl Strategy<Value = Confidence> {
    prop_oneof![Just(Confidence::Low), Just(Confidence::Nominal), Just(Confidence::High)]
}

/// Detections scattered over the domain, minutes after the start.
fn records() -> impl Strategy<Value = Vec<(f64, f64, i64, Confidence, bool)>> {
    prop::collection::vec((0.02f64..0.98, 0.02f64..0.98, 0i64..2400, confidence(), any::<bool>()), 1..40)
}

fn build(domain: &DomainSpec, raw: &[(f64, f64, i64, Confidence, bool)]) -> Vec<DetectionRecord> {
    raw.iter()
        .map(|&(fr, fc, min, conf, viirs)| {
            let p = domain.grid.corner_latlon(fr * domain.grid.rows as f64, fc * domain.grid.cols as f64);
            let src = if viirs { Source::Viirs } else { Source::Goes };
            record(p, start() + Duration::minutes(min), conf, src)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn measured_values_are_detection_times(raw in records()) {
        let domain = DomainSpec::new(GeoPoint::new(38.5, -121.3), 128);
        let recs = build(&domain, &raw);
        let ignition = start() - Duration::minutes(30);
        let m = grid_viirs(&recs, ignition, &domain).unwrap();
        prop_assert!(m.validate().is_ok());
        let times: Vec<f32> = recs
            .iter()
            .filter(|r| r.source == Source::Viirs && r.confidence == Confidence::High)
            .map(|r| hours_since(ignition, r.time) as f32)
            .collect();
        for &v in m.data.iter().filter(|&&v| v != BACKGROUND_HOURS) {
            prop_assert!((0.0..BACKGROUND_HOURS).contains(&v));
            prop_assert!(times.contains(&v), "{} is not a detection time", v);
        }
        let again = grid_viirs(&recs, ignition, &domain).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        raster::write_container(&m, &mut a).unwrap();
        raster::write_container(&again, &mut b).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ignition_is_earliest_high_confidence_goes(raw in records()) {
        let domain = DomainSpec::new(GeoPoint::new(38.5, -121.3), 64);
        let recs = build(&domain, &raw);
        let search = IgnitionSearch { window_hours: 1.0, max_window_hours: 48.0 };
        let expected = recs
            .iter()
            .filter(|r| r.source == Source::Goes && r.confidence == Confidence::High)
            .map(|r| r.time)
            .min();
        match (estimate_ignition(&recs, &domain, start(), &search), expected) {
            (Ok(t), Some(e)) => prop_assert_eq!(t, e),
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "got {:?}, expected {:?}", got, want),
        }
    }
}

#[test]
fn records_round_trip_through_csv() {
    let domain = DomainSpec::new(GeoPoint::new(34.0, -118.0), 64);
    let recs = vec![
        record(domain.center, start(), Confidence::High, Source::Goes),
        record(domain.center, start() + Duration::hours(5), Confidence::Nominal, Source::Viirs),
    ];
    let mut buf = Vec::new();
    write_records(&recs, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("lat,lon,time,confidence,source,footprint"));
    assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
}

#[test]
fn malformed_records_are_rejected() {
    let bad = [
        "lat,lon,time,confidence,source,footprint\n95,0,2021-07-14T18:00:00Z,high,GOES,2000\n",
        "lat,lon,time,confidence,source,footprint\n34,-118,yesterday,high,GOES,2000\n",
        "lat,lon,time,confidence,source,footprint\n34,-118,2021-07-14T18:00:00Z,certain,GOES,2000\n",
        "lat,lon,time,confidence,source,footprint\n34,-118,2021-07-14T18:00:00Z,high,MODIS,2000\n",
        "lat,lon,time,confidence,source,footprint\n34,-118,2021-07-14T18:00:00Z,high,VIIRS,0\n",
    ];
    for text in bad {
        assert!(read_records(text.as_bytes()).is_err(), "{text}");
    }
}

#[test]
fn out_of_domain_and_early_records_are_handled() {
    let domain = DomainSpec::new(GeoPoint::new(34.0, -118.0), 64);
    let far = GeoPoint::new(35.0, -118.0);
    let recs = vec![
        record(far, start(), Confidence::High, Source::Goes),
        record(far, start(), Confidence::High, Source::Viirs),
        record(domain.center, start() - Duration::hours(2), Confidence::High, Source::Viirs),
    ];
    let search = IgnitionSearch::default();
    assert!(estimate_ignition(&recs, &domain, start(), &search).is_err());
    let m = grid_viirs(&recs, start(), &domain).unwrap();
    let measured: Vec<f32> = m.data.iter().copied().filter(|&v| v != BACKGROUND_HOURS).collect();
    assert!(!measured.is_empty());
    assert!(measured.iter().all(|&v| v == 0.0));
}
