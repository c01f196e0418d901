//! Glue between the experiment spec and the library stages. Used by the
//! CLI and by end-to-end tests.

use std::path::Path;

use chrono::NaiveDate;

use crate::config::{parse_date, ExperimentSpec};
use crate::dataset::{fit_scaler, make_samples, split, Calendar, Sample, Scaler};
use crate::error::{Result, VlucError};
use crate::ingest::{calibrate_all, clean, RawRecord};
use crate::models::{
    count_params, train, BatchProvider, CnnModel, ConvLstmModel, Model, ModelConfig,
    MultitaskData, MultitaskDf, SingleTaskData, TrainHistory, VlucNet, VlucVariant,
};
use crate::rasterize::{build_video, cell_tracks, k_anonymize, VideoKind, VideoTensor};
use crate::synthgen::{generate, make_closed_world, SynthConfig};

pub fn synth_records(spec: &ExperimentSpec, seed: u64) -> Result<Vec<RawRecord>> {
    let synth = spec
        .synth
        .as_ref()
        .ok_or_else(|| VlucError::Config("spec has no [synth] section".into()))?;
    let cfg = SynthConfig {
        n_objects: synth.n_objects,
        n_days: synth.n_days,
        start_date: parse_date(&synth.start_date)?,
        mesh: spec.mesh.clone(),
        records_per_day: synth.records_per_day,
    };
    if synth.closed_world {
        make_closed_world(&cfg, seed)
    } else {
        generate(&cfg, seed)
    }
}

/// Clean, calibrate, rasterize, and anonymize raw records into the density
/// and flow tensors.
pub fn build_videos(
    spec: &ExperimentSpec,
    records: &[RawRecord],
    start_day: NaiveDate,
    n_days: usize,
) -> Result<(VideoTensor, VideoTensor)> {
    let cleaned = clean(records, spec.data.max_speed);
    let trajectories = calibrate_all(&cleaned, spec.data.delta_tau)?;
    let tracks = cell_tracks(&trajectories, &spec.mesh, start_day, n_days)?;
    let k = spec.data.k_anonymity as f64;
    let density = k_anonymize(
        &build_video(&tracks, &spec.mesh, VideoKind::Density, start_day, n_days)?,
        k,
    );
    let flow = k_anonymize(
        &build_video(&tracks, &spec.mesh, VideoKind::Flow, start_day, n_days)?,
        k,
    );
    Ok((density, flow))
}

pub struct PreparedData {
    pub samples: Vec<Sample>,
    pub scaler: Scaler,
    pub calendar: Calendar,
}

impl PreparedData {
    pub fn splits(&self) -> Result<(&[Sample], &[Sample], &[Sample])> {
        split(&self.samples)
    }
}

pub fn prepare(spec: &ExperimentSpec, video: &VideoTensor, start_day: NaiveDate) -> Result<PreparedData> {
    let scaler = fit_scaler(video)?;
    let calendar = Calendar {
        start_date: start_day,
        steps_per_day: spec.mesh.steps_per_day(),
        holidays: spec.holiday_dates()?.into_iter().collect(),
    };
    let samples = make_samples(video, &spec.windows, &scaler, &calendar)?;
    Ok(PreparedData { samples, scaler, calendar })
}

pub fn model_config(spec: &ExperimentSpec, channels: usize) -> ModelConfig {
    ModelConfig {
        channels,
        l_c: spec.windows.l_c,
        filters: spec.model.filters,
        height: spec.mesh.rows(),
        width: spec.mesh.cols(),
        lambda: spec.model.lambda,
        meta_dim: spec.mesh.steps_per_day() + 7 + 1,
    }
}

pub fn build_model(spec: &ExperimentSpec, channels: usize, seed: u64) -> Result<Box<dyn Model>> {
    let cfg = model_config(spec, channels);
    Ok(match spec.model.kind.as_str() {
        "cnn" => Box::new(CnnModel::new(&cfg, seed)?),
        "convlstm" => Box::new(ConvLstmModel::new(&cfg, seed)?),
        "multitask" => Box::new(MultitaskDf::new(&cfg, seed)?),
        "vluc-net" => Box::new(VlucNet::new(&cfg, VlucVariant::parse(&spec.model.variant)?, seed)?),
        other => {
            return Err(VlucError::Config(format!(
                "model kind '{other}' is not trainable (use cnn|convlstm|multitask|vluc-net)"
            )))
        }
    })
}

/// Train a model on the chronological splits of already-prepared samples.
/// Returns the trained model's history; the model itself holds the
/// restored best-epoch weights.
pub struct TrainedRun {
    pub history: TrainHistory,
    pub param_counts: (usize, usize, usize),
}

pub fn train_single_task(
    model: &mut dyn Model,
    data: &PreparedData,
    cfg: &crate::models::TrainConfig,
    seed: u64,
    with_context: bool,
) -> Result<TrainedRun> {
    let (tr, va, _) = data.splits()?;
    let (train_data, val_data): (SingleTaskData, SingleTaskData) = if with_context {
        (SingleTaskData::full(tr), SingleTaskData::full(va))
    } else {
        (
            SingleTaskData::closeness_only(tr),
            SingleTaskData::closeness_only(va),
        )
    };
    let history = train(model, &train_data, &val_data, cfg, seed)?;
    Ok(TrainedRun { history, param_counts: count_params(model) })
}

pub fn train_multitask(
    model: &mut dyn Model,
    density: &PreparedData,
    flow: &PreparedData,
    cfg: &crate::models::TrainConfig,
    seed: u64,
) -> Result<TrainedRun> {
    let (dtr, dva, _) = density.splits()?;
    let (ftr, fva, _) = flow.splits()?;
    let train_data = MultitaskData::new(dtr, ftr)?;
    let val_data = MultitaskData::new(dva, fva)?;
    let history = train(model, &train_data, &val_data, cfg, seed)?;
    Ok(TrainedRun { history, param_counts: count_params(model) })
}

/// Flat predictions and targets over a sample slice (scaled space), plus
/// the per-sample (H,W,C) frames for case studies.
pub struct Predictions {
    pub pred_flat: Vec<f64>,
    pub target_flat: Vec<f64>,
    pub pred_frames: Vec<crate::neural::Tensor>,
    pub target_frames: Vec<crate::neural::Tensor>,
    pub t_indices: Vec<usize>,
}

pub fn predict_single_task(
    model: &mut dyn Model,
    samples: &[Sample],
    with_context: bool,
    batch_size: usize,
) -> Result<Predictions> {
    let provider = if with_context {
        SingleTaskData::full(samples)
    } else {
        SingleTaskData::closeness_only(samples)
    };
    let mut out = Predictions {
        pred_flat: Vec::new(),
        target_flat: Vec::new(),
        pred_frames: Vec::new(),
        target_frames: Vec::new(),
        t_indices: Vec::new(),
    };
    let mut start = 0;
    while start < samples.len() {
        let end = (start + batch_size).min(samples.len());
        let indices: Vec<usize> = (start..end).collect();
        let batch = provider.batch(&indices)?;
        let preds = model.forward(&batch, false)?;
        let pred = &preds[0];
        let shape = pred.shape();
        let flen: usize = shape[1..].iter().product();
        for (row, &i) in indices.iter().enumerate() {
            let sample = &samples[i];
            let frame = pred.data()[row * flen..(row + 1) * flen].to_vec();
            out.pred_flat.extend_from_slice(&frame);
            out.target_flat.extend_from_slice(sample.target.data());
            out.pred_frames
                .push(crate::neural::Tensor::from_vec(sample.target.shape(), frame)?);
            out.target_frames.push(sample.target.clone());
            out.t_indices.push(sample.t_index);
        }
        start = end;
    }
    Ok(out)
}

/// Load raw records either from the configured CSV or from the seeded
/// generator.
pub fn load_records(spec: &ExperimentSpec, seed: u64, config_dir: &Path) -> Result<Vec<RawRecord>> {
    if let Some(csv) = &spec.data.raw_csv {
        let path = if csv.is_absolute() { csv.clone() } else { config_dir.join(csv) };
        let file = std::fs::File::open(&path)
            .map_err(|e| VlucError::data(format!("{}: {e}", path.display())))?;
        let outcome = crate::ingest::parse_trajectories(std::io::BufReader::new(file))?;
        Ok(outcome.records)
    } else {
        synth_records(spec, seed)
    }
}

/// First day and day count covered by a record set (for rasterization).
pub fn day_span(records: &[RawRecord]) -> Result<(NaiveDate, usize)> {
    let first = records
        .iter()
        .map(|r| r.day())
        .min()
        .ok_or_else(|| VlucError::data("no records"))?;
    let last = records.iter().map(|r| r.day()).max().unwrap();
    let n_days = (last - first).num_days() as usize + 1;
    Ok((first, n_days))
}
