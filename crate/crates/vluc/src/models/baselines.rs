//! Non-parametric reference predictors.

use crate::dataset::Calendar;
use crate::error::{Result, VlucError};
use crate::neural::Tensor;
use crate::rasterize::VideoTensor;

/// Predict frame `t` as the mean of all earlier frames in
/// `train_range` that share its time-of-day slot and weekday/weekend type.
pub fn historical_average(
    video: &VideoTensor,
    calendar: &Calendar,
    train_range: std::ops::Range<usize>,
    t: usize,
) -> Result<Tensor> {
    if t >= video.t {
        return Err(VlucError::data(format!("frame {t} out of range")));
    }
    let spd = calendar.steps_per_day;
    let slot = t % spd;
    let weekday = calendar.is_weekday(t);
    let flen = video.h * video.w * video.c;
    let mut acc = vec![0.0; flen];
    let mut n = 0usize;
    for s in train_range {
        if s >= video.t {
            break;
        }
        if s % spd == slot && calendar.is_weekday(s) == weekday {
            for (a, v) in acc.iter_mut().zip(video.frame(s)) {
                *a += v;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(VlucError::data(format!(
            "historical average: no training frame matches slot {slot} ({})",
            if weekday { "weekday" } else { "weekend" }
        )));
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Tensor::from_vec(&[video.h, video.w, video.c], acc)
}

/// Predict frame `t` as the frame exactly one day earlier.
pub fn copy_yesterday(video: &VideoTensor, steps_per_day: usize, t: usize) -> Result<Tensor> {
    if t >= video.t {
        return Err(VlucError::data(format!("frame {t} out of range")));
    }
    if t < steps_per_day {
        return Err(VlucError::data(format!(
            "copy-yesterday needs t >= {steps_per_day}, got {t}"
        )));
    }
    Tensor::from_vec(
        &[video.h, video.w, video.c],
        video.frame(t - steps_per_day).to_vec(),
    )
}
