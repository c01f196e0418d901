//! Accuracy metrics, case studies, and efficiency reporting.

use std::io::Write;

use crate::dataset::{Calendar, Scaler};
use crate::error::{Result, VlucError};
use crate::models::TrainHistory;
use crate::neural::Tensor;

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// None when every target value is zero (MAPE undefined).
    pub mape: Option<f64>,
    pub n: usize,
    /// Number of values that contributed to MAPE (targets != 0).
    pub mape_support: usize,
}

/// Compute MSE/RMSE/MAE/MAPE in the original data scale: both predictions
/// and targets are inverse-scaled before differencing. MAPE skips values
/// whose true target is exactly zero.
pub fn metrics(pred: &[f64], target: &[f64], scaler: &Scaler) -> Result<MetricsReport> {
    if pred.len() != target.len() {
        return Err(VlucError::shape(format!(
            "metrics: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(VlucError::data("metrics over an empty set"));
    }
    let n = pred.len();
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut ape = 0.0;
    let mut support = 0usize;
    for (&p, &y) in pred.iter().zip(target) {
        let p = scaler.inverse_scale(p);
        let y = scaler.inverse_scale(y);
        let d = p - y;
        se += d * d;
        ae += d.abs();
        if y != 0.0 {
            ape += (d / y).abs();
            support += 1;
        }
    }
    let mse = se / n as f64;
    Ok(MetricsReport {
        mse,
        rmse: mse.sqrt(),
        mae: ae / n as f64,
        mape: if support > 0 { Some(ape / support as f64) } else { None },
        n,
        mape_support: support,
    })
}

/// Original-scale RMSE at a single grid cell over the prediction frames
/// whose time index matches `slot` (time of day) and `weekday` type.
#[allow(clippy::too_many_arguments)]
pub fn case_study(
    preds: &[Tensor],   // (H,W,C) per frame, scaled
    targets: &[Tensor], // (H,W,C) per frame, scaled
    t_indices: &[usize],
    calendar: &Calendar,
    scaler: &Scaler,
    cell: (usize, usize),
    channel: usize,
    slot: usize,
    weekday: bool,
) -> Result<(f64, usize)> {
    if preds.len() != targets.len() || preds.len() != t_indices.len() {
        return Err(VlucError::shape("case study inputs differ in length"));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for ((pred, target), &t) in preds.iter().zip(targets).zip(t_indices) {
        if calendar.slot_of(t) != slot || calendar.is_weekday(t) != weekday {
            continue;
        }
        let s = pred.shape();
        if s.len() != 3 || cell.0 >= s[0] || cell.1 >= s[1] || channel >= s[2] {
            return Err(VlucError::shape(format!(
                "cell {:?} channel {} out of frame {:?}",
                cell, channel, s
            )));
        }
        let at = (cell.0 * s[1] + cell.1) * s[2] + channel;
        let d = scaler.inverse_scale(pred.data()[at]) - scaler.inverse_scale(target.data()[at]);
        se += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(VlucError::data(format!(
            "case study: no frame matches slot {slot} ({})",
            if weekday { "weekday" } else { "weekend" }
        )));
    }
    Ok(((se / n as f64).sqrt(), n))
}

#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub trainable_params: usize,
    pub non_trainable_params: usize,
    pub total_params: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub mean_epoch_seconds: f64,
}

pub fn efficiency(counts: (usize, usize, usize), history: &TrainHistory) -> EfficiencyReport {
    let epochs = history.epochs.len();
    let mean = if epochs == 0 {
        0.0
    } else {
        history.epochs.iter().map(|e| e.seconds).sum::<f64>() / epochs as f64
    };
    EfficiencyReport {
        trainable_params: counts.0,
        non_trainable_params: counts.1,
        total_params: counts.2,
        epochs_run: epochs,
        best_epoch: history.best_epoch,
        mean_epoch_seconds: mean,
    }
}

/// One metrics row per model, CSV. Timing columns are deliberately kept in
/// a separate report so metric files are byte-stable across runs.
pub fn write_metrics_csv<W: Write>(
    rows: &[(String, MetricsReport)],
    mut out: W,
) -> Result<()> {
    writeln!(out, "model,mse,rmse,mae,mape,n,mape_support")?;
    for (name, m) in rows {
        let mape = m
            .mape
            .map(|v| format!("{v:.9}"))
            .unwrap_or_else(|| "undefined".to_string());
        writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{},{},{}",
            name, m.mse, m.rmse, m.mae, mape, m.n, m.mape_support
        )?;
    }
    Ok(())
}

pub fn write_efficiency_csv<W: Write>(
    rows: &[(String, EfficiencyReport)],
    mut out: W,
) -> Result<()> {
    writeln!(
        out,
        "model,trainable_params,non_trainable_params,total_params,epochs_run,best_epoch,mean_epoch_seconds"
    )?;
    for (name, e) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6}",
            name,
            e.trainable_params,
            e.non_trainable_params,
            e.total_params,
            e.epochs_run,
            e.best_epoch,
            e.mean_epoch_seconds
        )?;
    }
    Ok(())
}

pub fn write_case_study_csv<W: Write>(
    rows: &[(String, (usize, usize), usize, bool, f64, usize)],
    mut out: W,
) -> Result<()> {
    writeln!(out, "model,row,col,slot,day_type,rmse,frames")?;
    for (name, cell, slot, weekday, rmse, frames) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.9},{}",
            name,
            cell.0,
            cell.1,
            slot,
            if *weekday { "weekday" } else { "weekend" },
            rmse,
            frames
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        // pred = [1,2,3], target = [1,1,5], identity scale.
        // errors: 0, 1, -2 -> MSE = 5/3, MAE = 1, MAPE = (0 + 1 + 0.4)/3.
        let scaler = Scaler::identity();
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 1.0, 5.0], &scaler).unwrap();
        assert!((m.mse - 5.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.mae - 1.0).abs() < 1e-12);
        assert!((m.mape.unwrap() - (1.0 + 0.4) / 3.0).abs() < 1e-12);
        assert_eq!(m.n, 3);
        assert_eq!(m.mape_support, 3);
    }

    #[test]
    fn mape_masks_zero_targets() {
        let scaler = Scaler::identity();
        let m = metrics(&[1.0, 2.0], &[0.0, 4.0], &scaler).unwrap();
        // only target 4 counts: |2-4|/4 = 0.5
        assert!((m.mape.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(m.mape_support, 1);
        let all_zero = metrics(&[1.0, 2.0], &[0.0, 0.0], &scaler).unwrap();
        assert!(all_zero.mape.is_none());
        assert_eq!(all_zero.mape_support, 0);
    }

    #[test]
    fn metrics_are_in_original_scale() {
        // scale maps [0,10] -> [0,1]; scaled error 0.1 is true error 1.0.
        let scaler = Scaler { min_value: 0.0, max_value: 10.0 };
        let m = metrics(&[0.5], &[0.4], &scaler).unwrap();
        assert!((m.mae - 1.0).abs() < 1e-9);
        assert!((m.mse - 1.0).abs() < 1e-9);
    }
}
