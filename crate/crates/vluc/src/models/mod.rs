//! Benchmark predictors and the training loop.

pub mod baselines;
pub mod checkpoint;
pub mod cnn;
pub mod convlstm_net;
pub mod harness;
pub mod multitask;
pub mod train;
pub mod vluc_net;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VlucError};
use crate::neural::{Param, Tensor};

pub use baselines::{copy_yesterday, historical_average};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cnn::CnnModel;
pub use convlstm_net::ConvLstmModel;
pub use multitask::MultitaskDf;
pub use train::{
    evaluate_provider, train, BatchProvider, EpochStats, MultitaskData, SingleTaskData,
    TrainConfig, TrainHistory,
};
pub use vluc_net::{VlucNet, VlucVariant};

/// Hyper-parameters shared by the model builders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub l_c: usize,
    pub filters: usize,
    pub height: usize,
    pub width: usize,
    /// Multitask density-loss weight.
    pub lambda: f64,
    /// Metadata vector length (steps_per_day + 7 + 1).
    pub meta_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(VlucError::Config("lambda must be in [0,1]".into()));
        }
        if self.filters == 0 || self.channels == 0 || self.l_c == 0 {
            return Err(VlucError::Config("filters, channels, l_c must be positive".into()));
        }
        Ok(())
    }
}

/// One training batch. Single-task models read `closeness` (and, for
/// VLUC-Nets, the other windows plus metadata); the multitask model reads
/// the paired density/flow sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub closeness: Tensor,              // (B,L,H,W,C)
    pub period: Option<Tensor>,         // (B,L,H,W,C)
    pub trend: Option<Tensor>,          // (B,L,H,W,C)
    pub meta: Option<Tensor>,           // (B, 3L, meta_dim)
    pub flow_closeness: Option<Tensor>, // (B,L,H,W,2)
    pub targets: Vec<Tensor>,           // (B,H,W,C) per head
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.closeness.shape()[0]
    }
}

/// Common surface of every trainable predictor.
pub trait Model {
    fn name(&self) -> &str;
    /// One prediction tensor (B,H,W,C) per head.
    fn forward(&mut self, batch: &Batch, train: bool) -> Result<Vec<Tensor>>;
    /// Gradients w.r.t. each head's output, in head order.
    fn backward(&mut self, grads: &[Tensor]) -> Result<()>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Loss weight per head (multitask: lambda, 1 - lambda).
    fn head_weights(&self) -> Vec<f64> {
        vec![1.0]
    }
}

/// (trainable, non_trainable, total) parameter counts.
pub fn count_params(model: &mut dyn Model) -> (usize, usize, usize) {
    let mut trainable = 0;
    let mut frozen = 0;
    for p in model.params_mut() {
        if p.trainable {
            trainable += p.len();
        } else {
            frozen += p.len();
        }
    }
    (trainable, frozen, trainable + frozen)
}

pub fn zero_grads(model: &mut dyn Model) {
    for p in model.params_mut() {
        p.zero_grad();
    }
}

/// Snapshot / restore parameter values (used for best-epoch checkpoints).
pub fn snapshot_params(model: &mut dyn Model) -> Vec<Tensor> {
    model.params_mut().iter().map(|p| p.value.clone()).collect()
}

pub fn restore_params(model: &mut dyn Model, snapshot: &[Tensor]) -> Result<()> {
    let mut params = model.params_mut();
    if params.len() != snapshot.len() {
        return Err(VlucError::data("snapshot does not match model"));
    }
    for (p, s) in params.iter_mut().zip(snapshot) {
        p.value = s.clone();
    }
    Ok(())
}

/// Channel-stack a (B,L,H,W,C) sequence into (B,H,W,L*C): frame channels
/// are concatenated per timestep.
pub fn stack_channels(seq: &Tensor) -> Result<Tensor> {
    let s = seq.shape();
    if s.len() != 5 {
        return Err(VlucError::shape(format!("stack_channels expects rank 5, got {:?}", s)));
    }
    let (b, l, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let mut out = Tensor::zeros(&[b, h, w, l * c]);
    {
        let x = seq.data();
        let o = out.data_mut();
        for bi in 0..b {
            for t in 0..l {
                for px in 0..h * w {
                    let src = (((bi * l + t) * h * w) + px) * c;
                    let dst = (bi * h * w + px) * l * c + t * c;
                    o[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `stack_channels`.
pub fn unstack_channels(grad: &Tensor, l: usize, c: usize) -> Result<Tensor> {
    let s = grad.shape();
    if s.len() != 4 || s[3] != l * c {
        return Err(VlucError::shape(format!(
            "unstack_channels expects (B,H,W,{}), got {:?}",
            l * c,
            s
        )));
    }
    let (b, h, w) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(&[b, l, h, w, c]);
    {
        let g = grad.data();
        let o = out.data_mut();
        for bi in 0..b {
            for t in 0..l {
                for px in 0..h * w {
                    let dst = (((bi * l + t) * h * w) + px) * c;
                    let src = (bi * h * w + px) * l * c + t * c;
                    o[dst..dst + c].copy_from_slice(&g[src..src + c]);
                }
            }
        }
    }
    Ok(out)
}

/// Concatenate two equally-shaped-but-for-channels 5D sequences along the
/// channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 5 || sb.len() != 5 || sa[..4] != sb[..4] {
        return Err(VlucError::shape(format!(
            "concat_channels shapes {:?} vs {:?}",
            sa, sb
        )));
    }
    let (ca, cb) = (sa[4], sb[4]);
    let rows = sa[0] * sa[1] * sa[2] * sa[3];
    let mut out = Tensor::zeros(&[sa[0], sa[1], sa[2], sa[3], ca + cb]);
    {
        let o = out.data_mut();
        let da = a.data();
        let db = b.data();
        for r in 0..rows {
            let base = r * (ca + cb);
            o[base..base + ca].copy_from_slice(&da[r * ca..(r + 1) * ca]);
            o[base + ca..base + ca + cb].copy_from_slice(&db[r * cb..(r + 1) * cb]);
        }
    }
    Ok(out)
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(grad: &Tensor, ca: usize, cb: usize) -> Result<(Tensor, Tensor)> {
    let s = grad.shape();
    if s.len() != 5 || s[4] != ca + cb {
        return Err(VlucError::shape(format!(
            "split_channels expects C={} but got {:?}",
            ca + cb,
            s
        )));
    }
    let rows = s[0] * s[1] * s[2] * s[3];
    let mut a = Tensor::zeros(&[s[0], s[1], s[2], s[3], ca]);
    let mut b = Tensor::zeros(&[s[0], s[1], s[2], s[3], cb]);
    {
        let g = grad.data();
        let da = a.data_mut();
        let db = b.data_mut();
        for r in 0..rows {
            let base = r * (ca + cb);
            da[r * ca..(r + 1) * ca].copy_from_slice(&g[base..base + ca]);
            db[r * cb..(r + 1) * cb].copy_from_slice(&g[base + ca..base + ca + cb]);
        }
    }
    Ok((a, b))
}

/// Last timestep of a (B,L,H,W,C) sequence as (B,H,W,C).
pub fn last_timestep(seq: &Tensor) -> Result<Tensor> {
    let s = seq.shape();
    if s.len() != 5 {
        return Err(VlucError::shape(format!("last_timestep expects rank 5, got {:?}", s)));
    }
    let (b, l, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let flen = h * w * c;
    let mut out = Tensor::zeros(&[b, h, w, c]);
    {
        let o = out.data_mut();
        let x = seq.data();
        for bi in 0..b {
            let src = (bi * l + l - 1) * flen;
            o[bi * flen..(bi + 1) * flen].copy_from_slice(&x[src..src + flen]);
        }
    }
    Ok(out)
}

/// Scatter a (B,H,W,C) gradient into the last timestep of a zeroed
/// (B,L,H,W,C) gradient sequence.
pub fn grad_into_last_timestep(grad: &Tensor, l: usize) -> Result<Tensor> {
    let s = grad.shape();
    if s.len() != 4 {
        return Err(VlucError::shape("grad_into_last_timestep expects rank 4"));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let flen = h * w * c;
    let mut out = Tensor::zeros(&[b, l, h, w, c]);
    {
        let o = out.data_mut();
        let g = grad.data();
        for bi in 0..b {
            let dst = (bi * l + l - 1) * flen;
            o[dst..dst + flen].copy_from_slice(&g[bi * flen..(bi + 1) * flen]);
        }
    }
    Ok(out)
}

/// ReLU applied at a model head, with the mask kept for backward.
#[derive(Debug, Clone, Default)]
pub struct ReluGate {
    mask: Vec<bool>,
}

impl ReluGate {
    pub fn forward(&mut self, mut x: Tensor) -> Tensor {
        self.mask = x.data().iter().map(|v| *v > 0.0).collect();
        for v in x.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        x
    }

    pub fn backward(&self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for (v, keep) in g.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *v = 0.0;
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_unstack_roundtrip() {
        let seq = Tensor::from_vec(&[1, 2, 1, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let stacked = stack_channels(&seq).unwrap();
        assert_eq!(stacked.shape(), &[1, 1, 2, 4]);
        // pixel 0: frame0 ch(0,1) then frame1 ch(4,5)
        assert_eq!(&stacked.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        let back = unstack_channels(&stacked, 2, 2).unwrap();
        assert_eq!(back.data(), seq.data());
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::from_vec(&[1, 1, 1, 2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let (ga, gb) = split_channels(&cat, 1, 2).unwrap();
        assert_eq!(ga.data(), a.data());
        assert_eq!(gb.data(), b.data());
    }

    #[test]
    fn last_timestep_and_adjoint() {
        let seq = Tensor::from_vec(&[1, 3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let last = last_timestep(&seq).unwrap();
        assert_eq!(last.data(), &[3.0]);
        let g = grad_into_last_timestep(&last, 3).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 3.0]);
    }
}
