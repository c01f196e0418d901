//! Joint density + flow predictor with a shared ConvLSTM trunk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};
use crate::neural::{BatchNorm, ConvLstm, Param, Tensor};

use super::{
    concat_channels, grad_into_last_timestep, last_timestep, split_channels, Batch, Model,
    ModelConfig, ReluGate,
};

/// Two input branches (density 1ch, flow 2ch) are channel-concatenated
/// into a shared trunk; two ConvLSTM heads emit the per-task predictions.
/// The joint loss weights density by `lambda` and flow by `1 - lambda`.
pub struct MultitaskDf {
    branch_d: ConvLstm,
    branch_f: ConvLstm,
    bn_cat: BatchNorm,
    trunk1: ConvLstm,
    bn1: BatchNorm,
    trunk2: ConvLstm,
    bn2: BatchNorm,
    head_d: ConvLstm,
    head_f: ConvLstm,
    relu_d: ReluGate,
    relu_f: ReluGate,
    lambda: f64,
    filters: usize,
    seq_len: usize,
}

impl MultitaskDf {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<MultitaskDf> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.filters;
        Ok(MultitaskDf {
            branch_d: ConvLstm::new("branch_d", &mut rng, 3, 3, 1, f),
            branch_f: ConvLstm::new("branch_f", &mut rng, 3, 3, 2, f),
            bn_cat: BatchNorm::new("bn_cat", 2 * f),
            trunk1: ConvLstm::new("trunk1", &mut rng, 3, 3, 2 * f, f),
            bn1: BatchNorm::new("bn1", f),
            trunk2: ConvLstm::new("trunk2", &mut rng, 3, 3, f, f),
            bn2: BatchNorm::new("bn2", f),
            head_d: ConvLstm::new("head_d", &mut rng, 3, 3, f, 1),
            head_f: ConvLstm::new("head_f", &mut rng, 3, 3, f, 2),
            relu_d: ReluGate::default(),
            relu_f: ReluGate::default(),
            lambda: cfg.lambda,
            filters: f,
            seq_len: cfg.l_c,
        })
    }
}

impl Model for MultitaskDf {
    fn name(&self) -> &str {
        "multitask-df"
    }

    fn forward(&mut self, batch: &Batch, train: bool) -> Result<Vec<Tensor>> {
        let flow = batch
            .flow_closeness
            .as_ref()
            .ok_or_else(|| VlucError::data("multitask batch is missing the flow sequence"))?;
        let hd = self.branch_d.forward(&batch.closeness)?;
        let hf = self.branch_f.forward(flow)?;
        let mut x = self.bn_cat.forward(&concat_channels(&hd, &hf)?, train)?;
        x = self.trunk1.forward(&x)?;
        x = self.bn1.forward(&x, train)?;
        x = self.trunk2.forward(&x)?;
        x = self.bn2.forward(&x, train)?;
        let yd = self.relu_d.forward(last_timestep(&self.head_d.forward(&x)?)?);
        let yf = self.relu_f.forward(last_timestep(&self.head_f.forward(&x)?)?);
        Ok(vec![yd, yf])
    }

    fn backward(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != 2 {
            return Err(VlucError::shape("multitask expects two head gradients"));
        }
        let gd = self.relu_d.backward(&grads[0]);
        let gf = self.relu_f.backward(&grads[1]);
        let mut g = self
            .head_d
            .backward(&grad_into_last_timestep(&gd, self.seq_len)?)?;
        g.add_assign(&self.head_f.backward(&grad_into_last_timestep(&gf, self.seq_len)?)?)?;
        g = self.bn2.backward(&g)?;
        g = self.trunk2.backward(&g)?;
        g = self.bn1.backward(&g)?;
        g = self.trunk1.backward(&g)?;
        g = self.bn_cat.backward(&g)?;
        let (gd, gf) = split_channels(&g, self.filters, self.filters)?;
        self.branch_d.backward(&gd)?;
        self.branch_f.backward(&gf)?;
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        out.extend(self.branch_d.params_mut());
        out.extend(self.branch_f.params_mut());
        out.extend(self.bn_cat.params_mut());
        out.extend(self.trunk1.params_mut());
        out.extend(self.bn1.params_mut());
        out.extend(self.trunk2.params_mut());
        out.extend(self.bn2.params_mut());
        out.extend(self.head_d.params_mut());
        out.extend(self.head_f.params_mut());
        out
    }

    fn head_weights(&self) -> Vec<f64> {
        vec![self.lambda, 1.0 - self.lambda]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::count_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            channels: 1,
            l_c: 6,
            filters: 32,
            height: 4,
            width: 4,
            lambda: 0.3,
            meta_dim: 56,
        }
    }

    #[test]
    fn param_count() {
        let mut m = MultitaskDf::new(&cfg(), 1).unwrap();
        assert_eq!(count_params(&mut m).2, 266_176);
    }

    #[test]
    fn forward_emits_two_heads() {
        let mut m = MultitaskDf::new(&cfg(), 5).unwrap();
        let batch = Batch {
            closeness: Tensor::full(&[1, 6, 4, 4, 1], 0.3),
            period: None,
            trend: None,
            meta: None,
            flow_closeness: Some(Tensor::full(&[1, 6, 4, 4, 2], 0.2)),
            targets: vec![Tensor::zeros(&[1, 4, 4, 1]), Tensor::zeros(&[1, 4, 4, 2])],
        };
        let ys = m.forward(&batch, true).unwrap();
        assert_eq!(ys[0].shape(), &[1, 4, 4, 1]);
        assert_eq!(ys[1].shape(), &[1, 4, 4, 2]);
        assert_eq!(m.head_weights(), vec![0.3, 0.7]);
    }
}
