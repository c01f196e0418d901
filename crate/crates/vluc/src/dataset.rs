//! Supervised sample construction: Min-Max scaling, Closeness/Period/Trend
//! windows, metadata encoding, chronological splits.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VlucError};
use crate::neural::Tensor;
use crate::rasterize::VideoTensor;

/// Dataset-wide Min-Max scaler mapping [min, max] -> [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min_value: f64,
    pub max_value: f64,
}

impl Scaler {
    pub fn identity() -> Scaler {
        Scaler {
            min_value: 0.0,
            max_value: 1.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.max_value == self.min_value
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (x - self.min_value) / (self.max_value - self.min_value)
        }
    }

    pub fn inverse_scale(&self, y: f64) -> f64 {
        if self.is_degenerate() {
            self.min_value
        } else {
            y * (self.max_value - self.min_value) + self.min_value
        }
    }
}

/// Min/max over the entire tensor (all channels share one scaler).
pub fn fit_scaler(video: &VideoTensor) -> Result<Scaler> {
    if video.data.is_empty() {
        return Err(VlucError::data("cannot fit scaler on empty video"));
    }
    Ok(Scaler {
        min_value: video.min_value(),
        max_value: video.max_value(),
    })
}

/// Fit over the chronological training region only (first `fraction` of
/// frames), offered behind a flag for anyone who prefers leak-free stats.
pub fn fit_scaler_train_only(video: &VideoTensor, fraction: f64) -> Result<Scaler> {
    if video.data.is_empty() {
        return Err(VlucError::data("cannot fit scaler on empty video"));
    }
    let frames = ((video.t as f64 * fraction).floor() as usize).max(1);
    let len = frames * video.h * video.w * video.c;
    let slice = &video.data[..len];
    Ok(Scaler {
        min_value: slice.iter().cloned().fold(f64::INFINITY, f64::min),
        max_value: slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Window geometry: length l_c and the Closeness/Period/Trend offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub l_c: usize,
    pub t_c: usize,
    pub t_p: usize,
    pub t_t: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.l_c < 1 {
            return Err(VlucError::InvalidInput("l_c must be >= 1".into()));
        }
        if !(self.t_c < self.t_p && self.t_p < self.t_t) {
            return Err(VlucError::InvalidInput(
                "window offsets must satisfy T_c < T_p < T_t".into(),
            ));
        }
        Ok(())
    }

    /// Earliest frame index usable as a target.
    pub fn first_target(&self) -> usize {
        self.t_t + self.l_c
    }

    /// Frame indices of one window: [t - offset - l_c, t - offset - 1].
    pub fn window_indices(&self, t: usize, offset: usize) -> Vec<usize> {
        (0..self.l_c).map(|j| t - offset - self.l_c + j).collect()
    }
}

/// Calendar context for metadata encoding: date of frame 0, frames per
/// day, and the configured holiday list.
#[derive(Debug, Clone)]
pub struct Calendar {
    pub start_date: NaiveDate,
    pub steps_per_day: usize,
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn date_of(&self, t_index: usize) -> NaiveDate {
        self.start_date + chrono::Duration::days((t_index / self.steps_per_day) as i64)
    }

    pub fn slot_of(&self, t_index: usize) -> usize {
        t_index % self.steps_per_day
    }

    /// Monday = 0.
    pub fn weekday_of(&self, t_index: usize) -> usize {
        self.date_of(t_index).weekday().num_days_from_monday() as usize
    }

    pub fn is_holiday(&self, t_index: usize) -> bool {
        self.holidays.contains(&self.date_of(t_index))
    }

    /// Weekday = Mon-Fri and not in the holiday list.
    pub fn is_weekday(&self, t_index: usize) -> bool {
        self.weekday_of(t_index) < 5 && !self.is_holiday(t_index)
    }

    pub fn meta_dim(&self) -> usize {
        self.steps_per_day + 7 + 1
    }
}

/// One-hot time-of-day + one-hot day-of-week + holiday flag.
pub fn encode_meta(t_index: usize, calendar: &Calendar) -> Vec<f64> {
    let mut v = vec![0.0; calendar.meta_dim()];
    v[calendar.slot_of(t_index)] = 1.0;
    v[calendar.steps_per_day + calendar.weekday_of(t_index)] = 1.0;
    if calendar.is_holiday(t_index) {
        v[calendar.steps_per_day + 7] = 1.0;
    }
    v
}

/// One supervised instance. All frame tensors are already scaled.
#[derive(Debug, Clone)]
pub struct Sample {
    pub closeness: Tensor, // (l_c,H,W,C)
    pub period: Tensor,    // (l_c,H,W,C)
    pub trend: Tensor,     // (l_c,H,W,C)
    /// Per-frame metadata rows, (3*l_c, meta_dim), ordered
    /// closeness | period | trend.
    pub meta: Tensor,
    pub target: Tensor, // (H,W,C)
    pub t_index: usize,
}

fn scaled_frames(video: &VideoTensor, indices: &[usize], scaler: &Scaler) -> Tensor {
    let flen = video.h * video.w * video.c;
    let mut data = Vec::with_capacity(indices.len() * flen);
    for &t in indices {
        data.extend(video.frame(t).iter().map(|v| scaler.scale(*v)));
    }
    Tensor::from_vec(&[indices.len(), video.h, video.w, video.c], data)
        .expect("volume matches by construction")
}

/// One sample per target t in [T_t + l_c, T - 1].
pub fn make_samples(
    video: &VideoTensor,
    spec: &WindowSpec,
    scaler: &Scaler,
    calendar: &Calendar,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    let min_len = spec.first_target() + 1;
    if video.t < min_len {
        return Err(VlucError::data(format!(
            "video too short: {} frames, need at least {} (T_t + l_c + 1)",
            video.t, min_len
        )));
    }
    let meta_dim = calendar.meta_dim();
    let mut samples = Vec::with_capacity(video.t - spec.first_target());
    for t in spec.first_target()..video.t {
        let ci = spec.window_indices(t, spec.t_c);
        let pi = spec.window_indices(t, spec.t_p);
        let ti = spec.window_indices(t, spec.t_t);
        let mut meta = Vec::with_capacity(3 * spec.l_c * meta_dim);
        for idx in ci.iter().chain(pi.iter()).chain(ti.iter()) {
            meta.extend(encode_meta(*idx, calendar));
        }
        let target: Vec<f64> = video.frame(t).iter().map(|v| scaler.scale(*v)).collect();
        samples.push(Sample {
            closeness: scaled_frames(video, &ci, scaler),
            period: scaled_frames(video, &pi, scaler),
            trend: scaled_frames(video, &ti, scaler),
            meta: Tensor::from_vec(&[3 * spec.l_c, meta_dim], meta)?,
            target: Tensor::from_vec(&[video.h, video.w, video.c], target)?,
            t_index: t,
        });
    }
    Ok(samples)
}

/// Chronological split: train = [0, floor(0.64 n)),
/// val = [floor(0.64 n), floor(0.8 n)), test = the rest.
pub fn split<T>(samples: &[T]) -> Result<(&[T], &[T], &[T])> {
    let n = samples.len();
    if n < 5 {
        return Err(VlucError::data(format!(
            "need at least 5 samples to split, got {}",
            n
        )));
    }
    let b1 = (n as f64 * 0.64).floor() as usize;
    let b2 = (n as f64 * 0.80).floor() as usize;
    Ok((&samples[..b1], &samples[b1..b2], &samples[b2..]))
}
