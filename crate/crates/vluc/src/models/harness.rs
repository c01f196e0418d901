//! Gradient-check harness for assembled models: fixed random batch,
//! weighted multi-head MSE loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::neural::harness::rand_tensor;
use crate::neural::{grad_check, mse, Differentiable, GradCheckReport, Param, Tensor};

use super::{Batch, CnnModel, ConvLstmModel, Model, ModelConfig, MultitaskDf, VlucNet, VlucVariant};

pub struct ModelHarness {
    pub model: Box<dyn Model>,
    pub batch: Batch,
}

impl ModelHarness {
    fn weighted_loss(&mut self, learn: bool) -> Result<f64> {
        let preds = self.model.forward(&self.batch, true)?;
        let weights = self.model.head_weights();
        let mut total = 0.0;
        let mut grads = Vec::new();
        for ((pred, target), weight) in preds.iter().zip(&self.batch.targets).zip(&weights) {
            let (l, mut g) = mse(pred, target)?;
            total += weight * l;
            if learn {
                g.scale(*weight);
                grads.push(g);
            }
        }
        if learn {
            self.model.backward(&grads)?;
        }
        Ok(total)
    }
}

impl Differentiable for ModelHarness {
    fn loss(&mut self) -> Result<f64> {
        self.weighted_loss(false)
    }
    fn loss_and_grad(&mut self) -> Result<f64> {
        self.weighted_loss(true)
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.params_mut()
    }
}

/// Small geometry keeps finite differencing affordable: 4x4 grid, window
/// length 3, few filters.
fn tiny_cfg(channels: usize) -> ModelConfig {
    ModelConfig {
        channels,
        l_c: 3,
        filters: 2,
        height: 4,
        width: 4,
        lambda: 0.3,
        meta_dim: 6,
    }
}

fn seq(rng: &mut ChaCha8Rng, channels: usize) -> Tensor {
    rand_tensor(rng, &[2, 3, 4, 4, channels])
}

/// Targets drawn strictly positive so the ReLU heads sit away from their
/// kink under finite perturbation.
fn target(rng: &mut ChaCha8Rng, channels: usize) -> Tensor {
    let mut t = rand_tensor(rng, &[2, 4, 4, channels]);
    for v in t.data_mut() {
        *v = v.abs() + 0.1;
    }
    t
}

pub fn cnn_harness(channels: usize, seed: u64) -> Result<ModelHarness> {
    let cfg = tiny_cfg(channels);
    let model = CnnModel::new(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    let batch = Batch {
        closeness: seq(&mut rng, channels),
        period: None,
        trend: None,
        meta: None,
        flow_closeness: None,
        targets: vec![target(&mut rng, channels)],
    };
    Ok(ModelHarness { model: Box::new(model), batch })
}

pub fn convlstm_harness(channels: usize, seed: u64) -> Result<ModelHarness> {
    let cfg = tiny_cfg(channels);
    let model = ConvLstmModel::new(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    let batch = Batch {
        closeness: seq(&mut rng, channels),
        period: None,
        trend: None,
        meta: None,
        flow_closeness: None,
        targets: vec![target(&mut rng, channels)],
    };
    Ok(ModelHarness { model: Box::new(model), batch })
}

pub fn multitask_harness(seed: u64) -> Result<ModelHarness> {
    let cfg = tiny_cfg(1);
    let model = MultitaskDf::new(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    let batch = Batch {
        closeness: seq(&mut rng, 1),
        period: None,
        trend: None,
        meta: None,
        flow_closeness: Some(seq(&mut rng, 2)),
        targets: vec![target(&mut rng, 1), target(&mut rng, 2)],
    };
    Ok(ModelHarness { model: Box::new(model), batch })
}

pub fn vluc_net_harness(variant: VlucVariant, seed: u64) -> Result<ModelHarness> {
    let cfg = tiny_cfg(1);
    let model = VlucNet::new(&cfg, variant, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
    let batch = Batch {
        closeness: seq(&mut rng, 1),
        period: Some(seq(&mut rng, 1)),
        trend: Some(seq(&mut rng, 1)),
        meta: Some(rand_tensor(&mut rng, &[2, 9, cfg.meta_dim])),
        flow_closeness: None,
        targets: vec![target(&mut rng, 1)],
    };
    Ok(ModelHarness { model: Box::new(model), batch })
}

/// Gradient checks for every layer type and every assembled model.
pub fn standard_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    use crate::neural::harness as lh;
    let mut out = Vec::new();
    out.push(("conv2d".to_string(), grad_check(&mut lh::conv_harness(seed))?));
    out.push(("batchnorm".to_string(), grad_check(&mut lh::batchnorm_harness(seed + 1))?));
    out.push(("convlstm".to_string(), grad_check(&mut lh::convlstm_harness(seed + 2))?));
    out.push(("attention".to_string(), grad_check(&mut lh::attention_harness(seed + 3))?));
    out.push(("dense".to_string(), grad_check(&mut lh::dense_harness(seed + 4))?));
    out.push(("cnn[density]".to_string(), grad_check(&mut cnn_harness(1, seed + 5)?)?));
    out.push(("cnn[flow]".to_string(), grad_check(&mut cnn_harness(2, seed + 6)?)?));
    out.push(("convlstm-net[density]".to_string(), grad_check(&mut convlstm_harness(1, seed + 7)?)?));
    out.push(("convlstm-net[flow]".to_string(), grad_check(&mut convlstm_harness(2, seed + 8)?)?));
    out.push(("multitask-df".to_string(), grad_check(&mut multitask_harness(seed + 9)?)?));
    out.push((
        "vluc-net[plain]".to_string(),
        grad_check(&mut vluc_net_harness(VlucVariant::Plain, seed + 10)?)?,
    ));
    out.push((
        "vluc-net[pyramid]".to_string(),
        grad_check(&mut vluc_net_harness(VlucVariant::Pyramid, seed + 11)?)?,
    ));
    Ok(out)
}
