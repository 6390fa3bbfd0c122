//! Satellite detection records to model inputs: ignition time from
//! geostationary detections and a gridded measurement from polar-orbiter
//! active-fire detections.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::CoarseGeometry;
use crate::raster::{FieldKind, GeoPoint, GridSpec, Raster, BACKGROUND_HOURS, DOMAIN_EXTENT_M};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    Nominal,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "GOES", alias = "goes")]
    Goes,
    #[serde(rename = "VIIRS", alias = "viirs")]
    Viirs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub lat: f64,
    pub lon: f64,
    #[serde(with = "iso_time")]
    pub time: DateTime<Utc>,
    pub confidence: Confidence,
    pub source: Source,
    /// Nominal pixel size in meters.
    pub footprint: f64,
}

impl DetectionRecord {
    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Parse {
                what: "detection record",
                detail: format!("location ({}, {}) out of range", self.lat, self.lon),
            });
        }
        if !(self.footprint > 0.0) {
            return Err(Error::Parse {
                what: "detection record",
                detail: format!("footprint {} must be positive", self.footprint),
            });
        }
        Ok(())
    }
}

/// Parses ISO-8601 timestamps; offset-free forms are read as UTC.
pub fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::Parse {
        what: "timestamp",
        detail: format!("`{s}` is not ISO-8601"),
    })
}

mod iso_time {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_time(&s).map_err(serde::de::Error::custom)
    }
}

/// Reads a comma-separated record file with header
/// `lat,lon,time,confidence,source,footprint`.
pub fn read_records<R: Read>(r: R) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DetectionRecord>().enumerate() {
        let rec = row.map_err(|e| Error::Parse {
            what: "detection record",
            detail: format!("row {}: {e}", i + 1),
        })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(std::io::BufReader::new(file))
}

pub fn write_records<W: Write>(records: &[DetectionRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r).map_err(|e| Error::Parse {
            what: "detection record",
            detail: e.to_string(),
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<record writer>", e))
}

/// The square prediction domain around a fire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub center: GeoPoint,
    pub grid: GridSpec,
}

impl DomainSpec {
    /// The 12.8 km domain at `resolution` pixels per side.
    pub fn new(center: GeoPoint, resolution: usize) -> Self {
        Self {
            center,
            grid: GridSpec::domain(center, resolution),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extent = (self.grid.width_m(), self.grid.height_m());
        if (extent.0 - DOMAIN_EXTENT_M).abs() > 1e-6 || (extent.1 - DOMAIN_EXTENT_M).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "domain extent {:.1} x {:.1} m, expected 12800 m square",
                extent.0, extent.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgnitionSearch {
    /// Initial half-width of the search window in hours.
    pub window_hours: f64,
    /// Largest half-width tried before giving up.
    pub max_window_hours: f64,
}

impl Default for IgnitionSearch {
    fn default() -> Self {
        Self {
            window_hours: 1.0,
            max_window_hours: 24.0,
        }
    }
}

/// Earliest high-confidence in-domain geostationary detection within
/// +/- window of the start hint. The window doubles until a detection is
/// found or the cap is passed.
pub fn estimate_ignition(
    records: &[DetectionRecord],
    domain: &DomainSpec,
    approx_start: DateTime<Utc>,
    search: &IgnitionSearch,
) -> Result<DateTime<Utc>> {
    if !(search.window_hours > 0.0) || search.max_window_hours < search.window_hours {
        return Err(Error::InvalidParameter(format!("ignition search {search:?}")));
    }
    let candidates: Vec<&DetectionRecord> = records
        .iter()
        .filter(|r| r.source == Source::Goes && r.confidence == Confidence::High)
        .filter(|r| domain.grid.contains(r.location()))
        .collect();
    let mut window = search.window_hours;
    loop {
        let half = chrono::Duration::milliseconds((window * 3_600_000.0).round() as i64);
        let hit = candidates
            .iter()
            .filter(|r| r.time >= approx_start - half && r.time <= approx_start + half)
            .map(|r| r.time)
            .min();
        if let Some(t) = hit {
            return Ok(t);
        }
        if window >= search.max_window_hours {
            return Err(Error::IgnitionNotFound { window_hours: window });
        }
        log::debug!("no ignition detection within +/-{window} h, widening");
        window = (window * 2.0).min(search.max_window_hours);
    }
}

/// Hours from `ignition` to `t`.
pub fn hours_since(ignition: DateTime<Utc>, t: DateTime<Utc>) -> f64 {
    (t - ignition).num_milliseconds() as f64 / 3_600_000.0
}

/// Grids high-confidence polar-orbiter detections onto the sensor grid (per
/// cell earliest time since ignition), then upsamples to the domain grid.
pub fn grid_viirs(records: &[DetectionRecord], ignition: DateTime<Utc>, domain: &DomainSpec) -> Result<Raster> {
    let geometry = CoarseGeometry::new(&domain.grid, crate::obs::ObsParams::default().coarse_resolution_m)?;
    let mut coarse = Raster::filled(geometry.coarse, FieldKind::Measurement, BACKGROUND_HOURS);
    for r in records
        .iter()
        .filter(|r| r.source == Source::Viirs && r.confidence == Confidence::High)
    {
        let Some((row, col)) = geometry.coarse.locate(r.location()) else {
            continue;
        };
        let mut h = hours_since(ignition, r.time);
        if h < 0.0 {
            log::warn!(
                "detection at ({:.5}, {:.5}) precedes ignition by {:.2} h; clamping to 0",
                r.lat,
                r.lon,
                -h
            );
            h = 0.0;
        }
        let h = h as f32;
        if h >= BACKGROUND_HOURS {
            continue;
        }
        if h < coarse.get(row, col) {
            coarse.set(row, col, h);
        }
    }
    geometry.refine(&coarse, BACKGROUND_HOURS).map(|m| m.with_kind(FieldKind::Measurement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn bobcat() -> DomainSpec {
        DomainSpec::new(GeoPoint::new(34.24, -117.87), 512)
    }

    fn rec(p: GeoPoint, t: DateTime<Utc>, confidence: Confidence, source: Source) -> DetectionRecord {
        DetectionRecord {
            lat: p.lat,
            lon: p.lon,
            time: t,
            confidence,
            source,
            footprint: if source == Source::Goes { 2000.0 } else { 375.0 },
        }
    }

    fn at(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 9, 6, h, m, 0).unwrap()
    }

    #[test]
    fn earliest_high_confidence_detection_wins() {
        let d = bobcat();
        let c = d.center;
        let search = IgnitionSearch::default();
        let one = [rec(c, at(19, 16), Confidence::High, Source::Goes)];
        assert_eq!(estimate_ignition(&one, &d, at(19, 0), &search).unwrap(), at(19, 16));
        let two = [
            rec(c, at(19, 21), Confidence::High, Source::Goes),
            rec(c, at(19, 16), Confidence::High, Source::Goes),
            rec(c, at(19, 5), Confidence::Nominal, Source::Goes),
            rec(GeoPoint::new(35.0, -117.87), at(19, 1), Confidence::High, Source::Goes),
        ];
        assert_eq!(estimate_ignition(&two, &d, at(19, 0), &search).unwrap(), at(19, 16));
    }

    #[test]
    fn window_widens_past_nominal_only_records() {
        let d = bobcat();
        let recs = [
            rec(d.center, at(19, 10), Confidence::Nominal, Source::Goes),
            rec(d.center, at(22, 40), Confidence::High, Source::Goes),
        ];
        let search = IgnitionSearch {
            window_hours: 1.0,
            max_window_hours: 8.0,
        };
        assert_eq!(estimate_ignition(&recs, &d, at(19, 0), &search).unwrap(), at(22, 40));
        let tight = IgnitionSearch {
            window_hours: 1.0,
            max_window_hours: 2.0,
        };
        assert!(matches!(
            estimate_ignition(&recs, &d, at(19, 0), &tight),
            Err(Error::IgnitionNotFound { .. })
        ));
    }

    #[test]
    fn no_detections_give_all_background() {
        let m = grid_viirs(&[], at(19, 16), &bobcat()).unwrap();
        assert!(m.data.iter().all(|&v| v == BACKGROUND_HOURS));
        assert_eq!((m.rows(), m.cols()), (512, 512));
    }

    #[test]
    fn one_detection_fills_one_block() {
        let d = bobcat();
        let g = CoarseGeometry::new(&d.grid, 375.0).unwrap();
        assert_eq!((g.coarse.rows, g.factor), (34, 15));
        let p = g.coarse.pixel_center(10, 20);
        let m = grid_viirs(&[rec(p, at(19, 16) + chrono::Duration::hours(10), Confidence::High, Source::Viirs)], at(19, 16), &d).unwrap();
        for r in 0..512 {
            for c in 0..512 {
                let inside = (1 + 150..1 + 165).contains(&r) && (1 + 300..1 + 315).contains(&c);
                assert_eq!(m.get(r, c), if inside { 10.0 } else { 48.0 }, "({r}, {c})");
            }
        }
    }

    #[test]
    fn collisions_keep_minimum_and_early_detections_clamp() {
        let d = bobcat();
        let g = CoarseGeometry::new(&d.grid, 375.0).unwrap();
        let p = g.coarse.pixel_center(17, 17);
        let ign = at(12, 0);
        let recs = [
            rec(p, ign + chrono::Duration::hours(14), Confidence::High, Source::Viirs),
            rec(p, ign + chrono::Duration::hours(10), Confidence::High, Source::Viirs),
            rec(g.coarse.pixel_center(3, 3), ign - chrono::Duration::minutes(30), Confidence::High, Source::Viirs),
            rec(g.coarse.pixel_center(5, 5), ign + chrono::Duration::hours(2), Confidence::Low, Source::Viirs),
        ];
        let m = grid_viirs(&recs, ign, &d).unwrap();
        assert_eq!(m.get(1 + 17 * 15, 1 + 17 * 15), 10.0);
        assert_eq!(m.get(1 + 3 * 15 + 7, 1 + 3 * 15 + 7), 0.0);
        assert_eq!(m.get(1 + 5 * 15, 1 + 5 * 15), 48.0);
        m.validate().unwrap();
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let d = bobcat();
        let recs = vec![
            rec(d.center, at(19, 16), Confidence::High, Source::Goes),
            rec(d.center, at(20, 0), Confidence::Nominal, Source::Viirs),
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lat,lon,time,confidence,source,footprint"));
        assert_eq!(read_records(&buf[..]).unwrap(), recs);
        let naive = "lat,lon,time,confidence,source,footprint\n34.2,-117.9,2020-09-06T19:16:00,high,GOES,2000\n";
        assert_eq!(read_records(naive.as_bytes()).unwrap()[0].time, at(19, 16));
        assert!(read_records("lat,lon,time,confidence,source,footprint\n91,0,2020-09-06T19:16:00Z,high,GOES,2000\n".as_bytes()).is_err());
        assert!(read_records("lat,lon,time,confidence,source,footprint\n1,0,yesterday,high,GOES,2000\n".as_bytes()).is_err());
    }
}
