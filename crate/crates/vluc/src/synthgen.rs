//! Seeded synthetic commuting trajectories.
//!
//! Objects live at a fixed home location and (on weekdays) commute to a
//! work location, with jittered departure times and irregular sampling.
//! A per-day activity level modulates how many objects report at all, so
//! consecutive days differ in overall volume — recent frames carry signal
//! that a purely periodic predictor misses.

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};
use crate::ingest::RawRecord;
use crate::rasterize::MeshSpec;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub mesh: MeshSpec,
    /// Approximate records per active object per day.
    pub records_per_day: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 || self.n_days == 0 {
            return Err(VlucError::Config("n_objects and n_days must be positive".into()));
        }
        if self.records_per_day < 4 {
            return Err(VlucError::Config("records_per_day must be at least 4".into()));
        }
        self.mesh.validate()
    }
}

struct Profile {
    home: (f64, f64), // (lat, lon)
    work: (f64, f64),
    depart: i64,   // seconds of day
    return_at: i64,
    commute: i64, // seconds spent travelling
}

fn day_timestamp(start: NaiveDate, day: usize) -> i64 {
    let date = start + chrono::Days::new(day as u64);
    date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp()
}

fn lerp(a: (f64, f64), b: (f64, f64), f: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
}

/// Position of a commuter at second-of-day `s`.
fn position(p: &Profile, s: i64, weekday: bool) -> (f64, f64) {
    if !weekday {
        return p.home;
    }
    if s < p.depart {
        p.home
    } else if s < p.depart + p.commute {
        lerp(p.home, p.work, (s - p.depart) as f64 / p.commute as f64)
    } else if s < p.return_at {
        p.work
    } else if s < p.return_at + p.commute {
        lerp(p.work, p.home, (s - p.return_at) as f64 / p.commute as f64)
    } else {
        p.home
    }
}

fn interior_point(rng: &mut ChaCha8Rng, mesh: &MeshSpec) -> (f64, f64) {
    // Keep a half-cell margin so jitter cannot leave the mesh.
    let lat_lo = mesh.lat_min + 0.5 * mesh.d_lat;
    let lat_hi = mesh.lat_max - 0.5 * mesh.d_lat;
    let lon_lo = mesh.lon_min + 0.5 * mesh.d_lon;
    let lon_hi = mesh.lon_max - 0.5 * mesh.d_lon;
    (
        rng.gen_range(lat_lo..lat_hi),
        rng.gen_range(lon_lo..lon_hi),
    )
}

fn clamp_to_mesh(mesh: &MeshSpec, p: (f64, f64)) -> (f64, f64) {
    let eps_lat = 1e-7 * mesh.d_lat;
    let eps_lon = 1e-7 * mesh.d_lon;
    (
        p.0.clamp(mesh.lat_min, mesh.lat_max - eps_lat),
        p.1.clamp(mesh.lon_min, mesh.lon_max - eps_lon),
    )
}

fn build_profiles(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Profile> {
    (0..cfg.n_objects)
        .map(|_| {
            let home = interior_point(rng, &cfg.mesh);
            let work = interior_point(rng, &cfg.mesh);
            Profile {
                home,
                work,
                depart: rng.gen_range(6 * 3600..10 * 3600),
                return_at: rng.gen_range(16 * 3600..20 * 3600),
                commute: rng.gen_range(1200..3600),
            }
        })
        .collect()
}

fn emit_day(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    profile: &Profile,
    object_id: &str,
    day: usize,
    weekday: bool,
    closed_world: bool,
    out: &mut Vec<RawRecord>,
) {
    let base = day_timestamp(cfg.start_date, day);
    let n = if closed_world {
        cfg.records_per_day
    } else {
        // irregular sampling volume, roughly records_per_day
        rng.gen_range(cfg.records_per_day * 3 / 4..=cfg.records_per_day * 5 / 4)
    };
    let mut seconds: Vec<i64> = Vec::with_capacity(n + 2);
    if closed_world {
        seconds.push(0);
        seconds.push(86_399);
    }
    for _ in 0..n {
        seconds.push(rng.gen_range(0..86_400));
    }
    seconds.sort_unstable();
    seconds.dedup();
    for s in seconds {
        let mut p = position(profile, s, weekday);
        // small GPS noise, about a tenth of a cell
        p.0 += rng.gen_range(-0.05..0.05) * cfg.mesh.d_lat;
        p.1 += rng.gen_range(-0.05..0.05) * cfg.mesh.d_lon;
        p = clamp_to_mesh(&cfg.mesh, p);
        out.push(RawRecord {
            object_id: object_id.to_string(),
            timestamp: base + s,
            lat: p.0,
            lon: p.1,
        });
    }
}

fn generate_inner(cfg: &SynthConfig, seed: u64, closed_world: bool) -> Result<Vec<RawRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = build_profiles(&mut rng, cfg);
    // Day-level activity: which share of the population reports that day.
    let activity: Vec<f64> = (0..cfg.n_days)
        .map(|_| rng.gen_range(0.35..1.0))
        .collect();
    let mut out = Vec::new();
    for day in 0..cfg.n_days {
        let date = cfg.start_date + chrono::Days::new(day as u64);
        let weekday = date.weekday().num_days_from_monday() < 5;
        for (i, profile) in profiles.iter().enumerate() {
            let active = closed_world || rng.gen_range(0.0..1.0) < activity[day];
            if !active {
                continue;
            }
            let object_id = format!("obj{i:05}");
            emit_day(&mut rng, cfg, profile, &object_id, day, weekday, closed_world, &mut out);
        }
    }
    out.sort_by(|a, b| (&a.object_id, a.timestamp).cmp(&(&b.object_id, b.timestamp)));
    Ok(out)
}

/// Irregular, noisy commuting records with per-day activity variation.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<RawRecord>> {
    generate_inner(cfg, seed, false)
}

/// Every object reports every day with records pinned at 00:00:00 and
/// 23:59:59, so the population inside the mesh is constant over each day.
pub fn make_closed_world(cfg: &SynthConfig, seed: u64) -> Result<Vec<RawRecord>> {
    generate_inner(cfg, seed, true)
}
