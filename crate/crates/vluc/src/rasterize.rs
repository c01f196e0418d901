//! Mesh-grid rasterization: map calibrated trajectories to cells and
//! aggregate density / in-out flow video tensors, plus the on-disk
//! formats (VLUC binary tensor, viewer grid-CSV).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VlucError};
use crate::ingest::{CalibratedTrajectory, SECONDS_PER_DAY};

/// Regular lat/lon partition of an urban bounding box. Row 0 is the
/// southernmost (lat_min) row, col 0 the westernmost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub d_lon: f64,
    pub d_lat: f64,
    pub frame_interval: i64,
}

impl MeshSpec {
    pub fn rows(&self) -> usize {
        ((self.lat_max - self.lat_min) / self.d_lat).round() as usize
    }

    pub fn cols(&self) -> usize {
        ((self.lon_max - self.lon_min) / self.d_lon).round() as usize
    }

    pub fn steps_per_day(&self) -> usize {
        (SECONDS_PER_DAY / self.frame_interval) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows() < 1 || self.cols() < 1 {
            return Err(VlucError::InvalidInput("mesh must have >= 1 cell".into()));
        }
        if self.d_lat <= 0.0 || self.d_lon <= 0.0 {
            return Err(VlucError::InvalidInput("mesh cell size must be positive".into()));
        }
        if self.frame_interval <= 0 || SECONDS_PER_DAY % self.frame_interval != 0 {
            return Err(VlucError::InvalidInput(format!(
                "frame_interval {} must divide 86400",
                self.frame_interval
            )));
        }
        Ok(())
    }

    /// Cell containing a point under half-open [edge, edge + d) intervals,
    /// or None outside the bounding box.
    pub fn grid_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let row = bin(lat, self.lat_min, self.d_lat, self.rows())?;
        let col = bin(lon, self.lon_min, self.d_lon, self.cols())?;
        Some((row, col))
    }

    /// Cell center, used by the synthetic generator.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.lat_min + (row as f64 + 0.5) * self.d_lat,
            self.lon_min + (col as f64 + 0.5) * self.d_lon,
        )
    }
}

fn bin(value: f64, min: f64, d: f64, n: usize) -> Option<usize> {
    let x = (value - min) / d;
    if x < 0.0 {
        return None;
    }
    let mut i = x.floor();
    // snap values a hair below a cell edge onto the edge (float noise from
    // the division, not a semantic reassignment)
    if x - i > 1.0 - 1e-9 {
        i += 1.0;
    }
    let i = i as usize;
    if i < n {
        Some(i)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoKind {
    Density,
    Flow,
}

impl VideoKind {
    pub fn channels(&self) -> usize {
        match self {
            VideoKind::Density => 1,
            VideoKind::Flow => 2,
        }
    }

    pub fn channel_labels(&self) -> Vec<String> {
        match self {
            VideoKind::Density => vec!["density".to_string()],
            VideoKind::Flow => vec!["inflow".to_string(), "outflow".to_string()],
        }
    }
}

/// (T,H,W,C) frame stack. Values are produced as exact integers but stored
/// as f64 for tensor uniformity.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// Row-major with C fastest.
    pub data: Vec<f64>,
    /// Seconds since epoch of frame 0 (naive local time).
    pub start_timestamp: i64,
    pub frame_interval: i64,
    pub channel_labels: Vec<String>,
}

impl VideoTensor {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize, start: i64, interval: i64) -> VideoTensor {
        VideoTensor {
            t,
            h,
            w,
            c,
            data: vec![0.0; t * h * w * c],
            start_timestamp: start,
            frame_interval: interval,
            channel_labels: (0..c).map(|i| format!("ch{}", i)).collect(),
        }
    }

    #[inline]
    pub fn index(&self, t: usize, row: usize, col: usize, ch: usize) -> usize {
        ((t * self.h + row) * self.w + col) * self.c + ch
    }

    #[inline]
    pub fn get(&self, t: usize, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(t, row, col, ch)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let len = self.h * self.w * self.c;
        &self.data[t * len..(t + 1) * len]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Per-object cell occupancy on the frame timeline: None when the object
/// is absent or outside the box.
pub type CellTrack = Vec<Option<(usize, usize)>>;

/// Expand calibrated trajectories into per-object cell tracks over
/// `n_days * steps_per_day` frames starting at `start_day`. The engine
/// samples every (frame_interval / delta_tau)-th calibration slot.
pub fn cell_tracks(
    trajectories: &[CalibratedTrajectory],
    mesh: &MeshSpec,
    start_day: NaiveDate,
    n_days: usize,
) -> Result<BTreeMap<String, CellTrack>> {
    mesh.validate()?;
    let steps = mesh.steps_per_day();
    let total = n_days * steps;
    let mut tracks: BTreeMap<String, CellTrack> = BTreeMap::new();
    for traj in trajectories {
        if mesh.frame_interval % traj.delta_tau != 0 {
            return Err(VlucError::data(format!(
                "delta_tau {} does not divide frame_interval {}",
                traj.delta_tau, mesh.frame_interval
            )));
        }
        let stride = (mesh.frame_interval / traj.delta_tau) as usize;
        let day_offset = (traj.day - start_day).num_days();
        if day_offset < 0 || day_offset as usize >= n_days {
            continue;
        }
        let base_frame = day_offset as usize * steps;
        let track = tracks
            .entry(traj.object_id.clone())
            .or_insert_with(|| vec![None; total]);
        for &(slot, lat, lon) in &traj.points {
            if slot % stride != 0 {
                continue;
            }
            let frame = base_frame + slot / stride;
            track[frame] = mesh.grid_of(lat, lon);
        }
    }
    Ok(tracks)
}

/// Density at one timestamp: per-cell count of objects located there.
pub fn density_frame(
    positions: &[Option<(usize, usize)>],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut frame = vec![0.0; h * w];
    for pos in positions.iter().flatten() {
        frame[pos.0 * w + pos.1] += 1.0;
    }
    frame
}

/// In-out flow between consecutive timestamps; channel 0 inflow,
/// channel 1 outflow. An object absent/outside on exactly one side counts
/// on the present side (its other cell differs from every mesh cell).
pub fn flow_frame(
    prev: &[Option<(usize, usize)>],
    curr: &[Option<(usize, usize)>],
    h: usize,
    w: usize,
) -> Vec<f64> {
    assert_eq!(prev.len(), curr.len(), "same object universe at both slots");
    let mut frame = vec![0.0; h * w * 2];
    for (p, q) in prev.iter().zip(curr.iter()) {
        if p == q {
            continue;
        }
        if let Some((r, c)) = q {
            frame[(r * w + c) * 2] += 1.0; // inflow
        }
        if let Some((r, c)) = p {
            frame[(r * w + c) * 2 + 1] += 1.0; // outflow
        }
    }
    frame
}

/// Assemble a full video tensor from per-object cell tracks. Flow videos
/// have an all-zero frame 0 (no predecessor).
pub fn build_video(
    tracks: &BTreeMap<String, CellTrack>,
    mesh: &MeshSpec,
    kind: VideoKind,
    start_day: NaiveDate,
    n_days: usize,
) -> Result<VideoTensor> {
    mesh.validate()?;
    let (h, w) = (mesh.rows(), mesh.cols());
    let total = n_days * mesh.steps_per_day();
    for track in tracks.values() {
        if track.len() != total {
            return Err(VlucError::data("cell track length mismatch"));
        }
    }
    let start_ts = start_day.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp();
    let mut video = VideoTensor::zeros(total, h, w, kind.channels(), start_ts, mesh.frame_interval);
    video.channel_labels = kind.channel_labels();
    let objects: Vec<&CellTrack> = tracks.values().collect();
    let flen = h * w * kind.channels();
    for t in 0..total {
        let frame = match kind {
            VideoKind::Density => {
                let positions: Vec<_> = objects.iter().map(|tr| tr[t]).collect();
                density_frame(&positions, h, w)
            }
            VideoKind::Flow => {
                if t == 0 {
                    vec![0.0; flen]
                } else {
                    let prev: Vec<_> = objects.iter().map(|tr| tr[t - 1]).collect();
                    let curr: Vec<_> = objects.iter().map(|tr| tr[t]).collect();
                    flow_frame(&prev, &curr, h, w)
                }
            }
        };
        video.data[t * flen..(t + 1) * flen].copy_from_slice(&frame);
    }
    Ok(video)
}

/// Zero every value strictly below k. Idempotent, per-cell non-increasing.
pub fn k_anonymize(video: &VideoTensor, k: f64) -> VideoTensor {
    let mut out = video.clone();
    for v in &mut out.data {
        if *v < k {
            *v = 0.0;
        }
    }
    out
}

pub const VLUC_MAGIC: &[u8; 4] = b"VLUC";
pub const VLUC_FORMAT_VERSION: u32 = 1;

/// Serialize as the VLUC binary tensor: magic `VLUC`, version u32, then
/// T,H,W,C u32, start_timestamp i64, frame_interval u32, then T*H*W*C f32
/// values row-major with C fastest. Everything little-endian.
pub fn write_vluc<W: Write>(video: &VideoTensor, mut out: W) -> Result<()> {
    out.write_all(VLUC_MAGIC)?;
    out.write_all(&VLUC_FORMAT_VERSION.to_le_bytes())?;
    for dim in [video.t, video.h, video.w, video.c] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    out.write_all(&video.start_timestamp.to_le_bytes())?;
    out.write_all(&(video.frame_interval as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(video.data.len() * 4);
    for v in &video.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_vluc<R: Read>(mut input: R) -> Result<VideoTensor> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != VLUC_MAGIC {
        return Err(VlucError::data("bad magic: not a VLUC tensor"));
    }
    let version = read_u32(&mut input)?;
    if version != VLUC_FORMAT_VERSION {
        return Err(VlucError::data(format!("unsupported format version {}", version)));
    }
    let t = read_u32(&mut input)? as usize;
    let h = read_u32(&mut input)? as usize;
    let w = read_u32(&mut input)? as usize;
    let c = read_u32(&mut input)? as usize;
    let mut ts = [0u8; 8];
    input.read_exact(&mut ts)?;
    let start_timestamp = i64::from_le_bytes(ts);
    let frame_interval = read_u32(&mut input)? as i64;
    let n = t * h * w * c;
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(VideoTensor {
        t,
        h,
        w,
        c,
        data,
        start_timestamp,
        frame_interval,
        channel_labels: (0..c).map(|i| format!("ch{}", i)).collect(),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Viewer-compatible grid export: header `timestamp,row,col,value`, one
/// line per nonzero cell per frame. Multi-channel videos export channel 0
/// (inflow) unless a channel is named.
pub fn write_grid_csv<W: Write>(video: &VideoTensor, channel: usize, mut out: W) -> Result<()> {
    if channel >= video.c {
        return Err(VlucError::InvalidInput(format!(
            "channel {} out of range (C={})",
            channel, video.c
        )));
    }
    writeln!(out, "timestamp,row,col,value")?;
    for t in 0..video.t {
        let ts = crate::ingest::format_timestamp(
            video.start_timestamp + t as i64 * video.frame_interval,
        );
        for row in 0..video.h {
            for col in 0..video.w {
                let v = video.get(t, row, col, channel);
                if v != 0.0 {
                    writeln!(out, "{},{},{},{}", ts, row, col, v)?;
                }
            }
        }
    }
    Ok(())
}
