//! Mini-batch Adam training with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Result, VlucError};
use crate::neural::{mse, Adam, Tensor};

use super::{restore_params, snapshot_params, zero_grads, Batch, Model};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            learning_rate: 1e-4,
            max_epochs: 200,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

/// Assembles batches from sample indices. Single-task data wraps one
/// sample list; the multitask provider pairs density and flow samples at
/// the same target times.
pub trait BatchProvider {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn batch(&self, indices: &[usize]) -> Result<Batch>;
}

fn stack<'a>(tensors: impl Iterator<Item = &'a Tensor> + Clone) -> Result<Tensor> {
    let first = tensors
        .clone()
        .next()
        .ok_or_else(|| VlucError::data("cannot stack an empty batch"))?;
    let inner = first.shape().to_vec();
    let mut shape = vec![0usize];
    shape.extend(&inner);
    let mut data = Vec::new();
    for t in tensors {
        if t.shape() != &inner[..] {
            return Err(VlucError::shape("batch samples differ in shape"));
        }
        shape[0] += 1;
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&shape, data)
}

/// Single-task provider; `with_context` additionally carries the period and
/// trend windows plus metadata (needed by the attention models).
pub struct SingleTaskData<'a> {
    samples: &'a [Sample],
    with_context: bool,
}

impl<'a> SingleTaskData<'a> {
    pub fn closeness_only(samples: &'a [Sample]) -> SingleTaskData<'a> {
        SingleTaskData { samples, with_context: false }
    }

    pub fn full(samples: &'a [Sample]) -> SingleTaskData<'a> {
        SingleTaskData { samples, with_context: true }
    }
}

impl BatchProvider for SingleTaskData<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let picked: Vec<&Sample> = indices.iter().map(|&i| &self.samples[i]).collect();
        let closeness = stack(picked.iter().map(|s| &s.closeness))?;
        let targets = vec![stack(picked.iter().map(|s| &s.target))?];
        let (period, trend, meta) = if self.with_context {
            (
                Some(stack(picked.iter().map(|s| &s.period))?),
                Some(stack(picked.iter().map(|s| &s.trend))?),
                Some(stack(picked.iter().map(|s| &s.meta))?),
            )
        } else {
            (None, None, None)
        };
        Ok(Batch { closeness, period, trend, meta, flow_closeness: None, targets })
    }
}

/// Density samples drive `closeness`; flow samples (built from the flow
/// video with the same windowing) supply the second input and target.
pub struct MultitaskData<'a> {
    density: &'a [Sample],
    flow: &'a [Sample],
}

impl<'a> MultitaskData<'a> {
    pub fn new(density: &'a [Sample], flow: &'a [Sample]) -> Result<MultitaskData<'a>> {
        if density.len() != flow.len() {
            return Err(VlucError::data("density and flow sample counts differ"));
        }
        for (d, f) in density.iter().zip(flow) {
            if d.t_index != f.t_index {
                return Err(VlucError::data("density and flow samples are misaligned"));
            }
        }
        Ok(MultitaskData { density, flow })
    }
}

impl BatchProvider for MultitaskData<'_> {
    fn len(&self) -> usize {
        self.density.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let d: Vec<&Sample> = indices.iter().map(|&i| &self.density[i]).collect();
        let f: Vec<&Sample> = indices.iter().map(|&i| &self.flow[i]).collect();
        Ok(Batch {
            closeness: stack(d.iter().map(|s| &s.closeness))?,
            period: None,
            trend: None,
            meta: None,
            flow_closeness: Some(stack(f.iter().map(|s| &s.closeness))?),
            targets: vec![
                stack(d.iter().map(|s| &s.target))?,
                stack(f.iter().map(|s| &s.target))?,
            ],
        })
    }
}

/// Weighted multi-head MSE of one batch; gradients are pushed into the
/// model when `learn` is set.
fn batch_loss(model: &mut dyn Model, batch: &Batch, train: bool, learn: bool) -> Result<f64> {
    let preds = model.forward(batch, train)?;
    if preds.len() != batch.targets.len() {
        return Err(VlucError::shape("head count does not match target count"));
    }
    let weights = model.head_weights();
    let mut total = 0.0;
    let mut grads = Vec::new();
    for ((pred, target), weight) in preds.iter().zip(&batch.targets).zip(&weights) {
        pred.check_finite("model output")?;
        let (loss, mut grad) = mse(pred, target)?;
        total += weight * loss;
        if learn {
            grad.scale(*weight);
            grads.push(grad);
        }
    }
    if !total.is_finite() {
        return Err(VlucError::Numerical("training loss is not finite".into()));
    }
    if learn {
        model.backward(&grads)?;
    }
    Ok(total)
}

/// Mean weighted MSE over a whole provider (inference mode, no updates).
pub fn evaluate_provider(
    model: &mut dyn Model,
    data: &dyn BatchProvider,
    batch_size: usize,
) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(VlucError::data("cannot evaluate an empty sample set"));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let batch = data.batch(&indices)?;
        total += batch_loss(model, &batch, false, false)? * indices.len() as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Train with per-epoch seeded shuffling, early stopping on validation
/// MSE, and best-epoch weight restoration.
pub fn train(
    model: &mut dyn Model,
    train_data: &dyn BatchProvider,
    val_data: &dyn BatchProvider,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    if train_data.is_empty() || val_data.is_empty() {
        return Err(VlucError::data("training and validation sets must be non-empty"));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(VlucError::Config("batch_size and max_epochs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
    };
    let mut best = snapshot_params(model);
    let mut indices: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        indices.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            zero_grads(model);
            let batch = train_data.batch(chunk)?;
            train_total += batch_loss(model, &batch, true, true)? * chunk.len() as f64;
            optimizer.step(&mut model.params_mut());
        }
        let train_mse = train_total / train_data.len() as f64;
        let val_mse = evaluate_provider(model, val_data, cfg.batch_size)?;
        if !val_mse.is_finite() {
            return Err(VlucError::Numerical("validation loss is not finite".into()));
        }
        if val_mse < history.best_val_mse {
            history.best_val_mse = val_mse;
            history.best_epoch = epoch;
            best = snapshot_params(model);
        }
        history.epochs.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });
        if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    restore_params(model, &best)?;
    Ok(history)
}
