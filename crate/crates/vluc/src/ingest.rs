//! Raw trajectory parsing, cleaning, and constant-rate calibration.
//!
//! Input format is trajectory-CSV: UTF-8, header
//! `object_id,timestamp,lat,lon`, timestamps `YYYY-MM-DD HH:MM:SS`, one
//! record per line, LF endings.

use std::collections::BTreeMap;
use std::io::BufRead;

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{Result, VlucError};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub object_id: String,
    /// Seconds since epoch, naive local civil time.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
}

impl RawRecord {
    pub fn datetime(&self) -> NaiveDateTime {
        chrono::DateTime::from_timestamp(self.timestamp, 0)
            .expect("in-range timestamp")
            .naive_utc()
    }

    pub fn day(&self) -> NaiveDate {
        self.datetime().date()
    }

    pub fn second_of_day(&self) -> i64 {
        self.timestamp.rem_euclid(SECONDS_PER_DAY)
    }
}

/// One object's day resampled to a fixed interval. Slot 0 is 00:00:00;
/// only slots inside the observed span (rounded outward) are present.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedTrajectory {
    pub object_id: String,
    pub day: NaiveDate,
    pub delta_tau: i64,
    /// (slot_index, lat, lon), sorted by slot, consecutive entries exactly
    /// one slot apart.
    pub points: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawRecord>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

pub fn parse_timestamp(text: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .expect("in-range timestamp")
        .naive_utc()
        .format(TIMESTAMP_FORMAT)
        .to_string()
}

/// Parse trajectory-CSV. Malformed lines are reported with their line
/// number, never silently dropped; an unreadable stream is fatal.
pub fn parse_trajectories<R: BufRead>(reader: R) -> Result<ParseOutcome> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(VlucError::data("empty stream: missing header")),
    };
    if header.trim() != "object_id,timestamp,lat,lon" {
        return Err(VlucError::data(format!(
            "unexpected header {:?}, want \"object_id,timestamp,lat,lon\"",
            header
        )));
    }
    let mut out = ParseOutcome::default();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2; // 1-based, after header
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(rec) => out.records.push(rec),
            Err(msg) => out.diagnostics.push(ParseDiagnostic {
                line: line_no,
                message: msg,
            }),
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<RawRecord, String> {
    let mut fields = line.split(',');
    let object_id = fields.next().ok_or("missing object_id")?.trim();
    let ts = fields.next().ok_or("missing timestamp")?.trim();
    let lat = fields.next().ok_or("missing lat")?.trim();
    let lon = fields.next().ok_or("missing lon")?.trim();
    if fields.next().is_some() {
        return Err("too many fields".to_string());
    }
    if object_id.is_empty() {
        return Err("empty object_id".to_string());
    }
    let timestamp = parse_timestamp(ts).ok_or_else(|| format!("bad timestamp {:?}", ts))?;
    let lat: f64 = lat.parse().map_err(|_| format!("bad lat {:?}", lat))?;
    let lon: f64 = lon.parse().map_err(|_| format!("bad lon {:?}", lon))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat {} out of range", lat));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon {} out of range", lon));
    }
    Ok(RawRecord {
        object_id: object_id.to_string(),
        timestamp,
        lat,
        lon,
    })
}

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const R: f64 = 6_371_000.0;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * a.sqrt().asin()
}

/// Deduplicate exact (object, timestamp) pairs and drop records implying
/// speeds above `max_speed` m/s from their kept predecessor. Output is
/// sorted by (object_id, timestamp). Idempotent.
pub fn clean(records: &[RawRecord], max_speed: f64) -> Vec<RawRecord> {
    let mut sorted: Vec<RawRecord> = records.to_vec();
    sorted.sort_by(|a, b| {
        a.object_id
            .cmp(&b.object_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    let mut out: Vec<RawRecord> = Vec::with_capacity(sorted.len());
    for rec in &sorted {
        let keep = match out.last() {
            Some(p) if p.object_id == rec.object_id => {
                if p.timestamp == rec.timestamp {
                    false // duplicate timestamp: first kept after stable sort
                } else {
                    let dt = (rec.timestamp - p.timestamp) as f64;
                    let dist = haversine_m(p.lat, p.lon, rec.lat, rec.lon);
                    dist / dt <= max_speed
                }
            }
            _ => true,
        };
        if keep {
            out.push(rec.clone());
        }
    }
    out
}

/// Calibrate one object-day to a constant rate. `delta_tau` must divide
/// 86400. Slots inside [first_obs, last_obs] rounded outward are emitted;
/// within the raw span locations are linear interpolations, and the
/// boundary slots clamp to the nearest observation.
pub fn calibrate(records: &[RawRecord], delta_tau: i64) -> Result<CalibratedTrajectory> {
    if records.is_empty() {
        return Err(VlucError::data("empty object-day"));
    }
    if delta_tau <= 0 || SECONDS_PER_DAY % delta_tau != 0 {
        return Err(VlucError::InvalidInput(format!(
            "delta_tau {} must divide 86400",
            delta_tau
        )));
    }
    let object_id = records[0].object_id.clone();
    let day = records[0].day();
    for r in records {
        if r.object_id != object_id || r.day() != day {
            return Err(VlucError::data(
                "calibrate expects records from a single object-day",
            ));
        }
    }
    let mut obs: Vec<&RawRecord> = records.iter().collect();
    obs.sort_by_key(|r| r.timestamp);

    let steps = (SECONDS_PER_DAY / delta_tau) as usize;
    let first_sec = obs[0].second_of_day();
    let last_sec = obs[obs.len() - 1].second_of_day();
    let first_slot = (first_sec / delta_tau) as usize;
    let last_slot = (((last_sec + delta_tau - 1) / delta_tau) as usize).min(steps - 1);

    let mut points = Vec::with_capacity(last_slot - first_slot + 1);
    let mut seg = 0usize; // index of the observation bracketing from the left
    for slot in first_slot..=last_slot {
        let t = slot as i64 * delta_tau;
        let (lat, lon) = if t <= first_sec {
            (obs[0].lat, obs[0].lon)
        } else if t >= last_sec {
            let last = obs[obs.len() - 1];
            (last.lat, last.lon)
        } else {
            while seg + 1 < obs.len() && obs[seg + 1].second_of_day() < t {
                seg += 1;
            }
            let a = obs[seg];
            let b = obs[seg + 1];
            let (ta, tb) = (a.second_of_day(), b.second_of_day());
            if t == ta {
                (a.lat, a.lon) // exact observation reused bit-for-bit
            } else if t == tb {
                (b.lat, b.lon)
            } else {
                let u = (t - ta) as f64 / (tb - ta) as f64;
                (a.lat + u * (b.lat - a.lat), a.lon + u * (b.lon - a.lon))
            }
        };
        points.push((slot, lat, lon));
    }
    Ok(CalibratedTrajectory {
        object_id,
        day,
        delta_tau,
        points,
    })
}

/// Group cleaned records by (object, day) and calibrate each group.
/// Output is sorted by (object_id, day) so results are independent of any
/// processing order.
pub fn calibrate_all(records: &[RawRecord], delta_tau: i64) -> Result<Vec<CalibratedTrajectory>> {
    let mut groups: BTreeMap<(String, NaiveDate), Vec<RawRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.object_id.clone(), r.day()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_values()
        .map(|g| calibrate(&g, delta_tau))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn rec(id: &str, ts: &str, lat: f64, lon: f64) -> RawRecord {
        RawRecord {
            object_id: id.to_string(),
            timestamp: parse_timestamp(ts).unwrap(),
            lat,
            lon,
        }
    }

    #[test]
    fn parse_well_formed_line() {
        let csv = "object_id,timestamp,lat,lon\nu1,2017-04-01 09:14:10,35.681,139.767\n";
        let out = parse_trajectories(Cursor::new(csv)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.diagnostics.is_empty());
        let r = &out.records[0];
        assert_eq!(r.object_id, "u1");
        assert_eq!(r.second_of_day(), 9 * 3600 + 14 * 60 + 10);
        assert_eq!(r.lat, 35.681);
        assert_eq!(r.lon, 139.767);
    }

    #[test]
    fn header_only_gives_empty_sequence() {
        let out = parse_trajectories(Cursor::new("object_id,timestamp,lat,lon\n")).unwrap();
        assert!(out.records.is_empty());
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn non_numeric_lat_is_a_diagnostic() {
        let csv = "object_id,timestamp,lat,lon\nu1,2017-04-01 09:14:10,oops,139.767\n";
        let out = parse_trajectories(Cursor::new(csv)).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].line, 2);
    }

    #[test]
    fn missing_header_is_fatal() {
        let csv = "u1,2017-04-01 09:14:10,35.0,139.0\n";
        assert!(parse_trajectories(Cursor::new(csv)).is_err());
    }

    #[test]
    fn clean_removes_duplicates() {
        let r = rec("u1", "2017-04-01 09:00:00", 35.0, 139.0);
        let out = clean(&[r.clone(), r.clone()], 50.0);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn clean_drops_teleporting_point() {
        // Tokyo, then ~500 km away 60 s later: speed >> 50 m/s
        let a = rec("u1", "2017-04-01 09:00:00", 35.68, 139.77);
        let b = rec("u1", "2017-04-01 09:01:00", 34.69, 135.50); // Osaka
        let dist = haversine_m(a.lat, a.lon, b.lat, b.lon);
        assert!(dist / 60.0 > 50.0, "oracle: speed {}", dist / 60.0);
        let out = clean(&[a.clone(), b], 50.0);
        assert_eq!(out, vec![a]);
    }

    #[test]
    fn clean_is_idempotent() {
        let recs = vec![
            rec("u1", "2017-04-01 09:00:00", 35.0, 139.0),
            rec("u1", "2017-04-01 09:10:00", 35.001, 139.001),
            rec("u2", "2017-04-01 08:00:00", 35.5, 139.5),
        ];
        let once = clean(&recs, 50.0);
        let twice = clean(&once, 50.0);
        assert_eq!(once, twice);
        assert_eq!(once.len(), 3);
    }

    #[test]
    fn calibrate_fig3_scenario() {
        // raw points at 09:14:10 .. 09:51:40, delta_tau = 600 s
        let recs = vec![
            rec("u1", "2017-04-01 09:14:10", 35.10, 139.10),
            rec("u1", "2017-04-01 09:27:53", 35.20, 139.20),
            rec("u1", "2017-04-01 09:38:20", 35.30, 139.30),
            rec("u1", "2017-04-01 09:45:00", 35.40, 139.40),
            rec("u1", "2017-04-01 09:51:40", 35.50, 139.50),
        ];
        let cal = calibrate(&recs, 600).unwrap();
        let slots: Vec<usize> = cal.points.iter().map(|p| p.0).collect();
        // 09:10:00 .. 10:00:00 inclusive
        assert_eq!(slots, vec![55, 56, 57, 58, 59, 60]);
        // 09:10 clamps back to the first observation
        assert_eq!((cal.points[0].1, cal.points[0].2), (35.10, 139.10));
        // 09:30:00 interpolates between 09:27:53 and 09:38:20
        let u = (9.0 * 3600.0 + 30.0 * 60.0 - (9.0 * 3600.0 + 27.0 * 60.0 + 53.0))
            / ((9.0 * 3600.0 + 38.0 * 60.0 + 20.0) - (9.0 * 3600.0 + 27.0 * 60.0 + 53.0));
        let expect_lat = 35.20 + u * (35.30 - 35.20);
        assert!((cal.points[2].1 - expect_lat).abs() < 1e-9);
        // 10:00 clamps forward to the last observation
        assert_eq!((cal.points[5].1, cal.points[5].2), (35.50, 139.50));
    }

    #[test]
    fn calibrate_single_record_on_slot() {
        let recs = vec![rec("u1", "2017-04-01 09:20:00", 35.1, 139.1)];
        let cal = calibrate(&recs, 600).unwrap();
        assert_eq!(cal.points, vec![(56, 35.1, 139.1)]);
    }

    #[test]
    fn calibrate_midpoint() {
        let recs = vec![
            rec("u1", "2017-04-01 09:00:00", 35.0, 139.0),
            rec("u1", "2017-04-01 09:20:00", 35.2, 139.2),
        ];
        let cal = calibrate(&recs, 600).unwrap();
        let mid = cal.points.iter().find(|p| p.0 == 55).unwrap();
        assert!((mid.1 - 35.1).abs() < 1e-12);
        assert!((mid.2 - 139.1).abs() < 1e-12);
    }

    #[test]
    fn calibrate_exact_observation_is_bitwise() {
        let lat = 35.123456789;
        let lon = 139.987654321;
        let recs = vec![
            rec("u1", "2017-04-01 09:00:00", lat, lon),
            rec("u1", "2017-04-01 09:23:00", 35.2, 139.2),
        ];
        let cal = calibrate(&recs, 600).unwrap();
        let p = cal.points.iter().find(|p| p.0 == 54).unwrap();
        assert_eq!(p.1, lat);
        assert_eq!(p.2, lon);
    }

    #[test]
    fn calibrate_consecutive_slots_differ_by_one() {
        let recs = vec![
            rec("u1", "2017-04-01 01:02:03", 35.0, 139.0),
            rec("u1", "2017-04-01 05:59:59", 35.4, 139.4),
        ];
        let cal = calibrate(&recs, 300).unwrap();
        for pair in cal.points.windows(2) {
            assert_eq!(pair[1].0, pair[0].0 + 1);
        }
    }

    #[test]
    fn calibrate_interpolation_stays_in_bracket_box() {
        let recs = vec![
            rec("u1", "2017-04-01 09:01:00", 35.0, 139.4),
            rec("u1", "2017-04-01 09:59:00", 35.4, 139.0),
        ];
        let cal = calibrate(&recs, 600).unwrap();
        for (_, lat, lon) in &cal.points {
            assert!((35.0..=35.4).contains(lat));
            assert!((139.0..=139.4).contains(lon));
        }
    }

    #[test]
    fn calibrate_empty_is_error() {
        assert!(calibrate(&[], 600).is_err());
    }

    #[test]
    fn late_night_span_clamps_to_last_slot() {
        let recs = vec![
            rec("u1", "2017-04-01 23:50:01", 35.0, 139.0),
            rec("u1", "2017-04-01 23:59:59", 35.1, 139.1),
        ];
        let cal = calibrate(&recs, 600).unwrap();
        assert_eq!(cal.points.last().unwrap().0, 143);
    }
}
