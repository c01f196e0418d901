//! Stacked ConvLSTM predictor on the closeness sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};
use crate::neural::{BatchNorm, ConvLstm, Param, Tensor};

use super::{grad_into_last_timestep, last_timestep, Batch, Model, ModelConfig, ReluGate};

/// ConvLSTM(F)-BN-ConvLSTM(F)-BN-ConvLSTM(F)-BN-ConvLSTM(C); the last
/// hidden state goes through ReLU.
pub struct ConvLstmModel {
    lstms: Vec<ConvLstm>,
    bns: Vec<BatchNorm>,
    head: ConvLstm,
    relu: ReluGate,
    seq_len: usize,
}

impl ConvLstmModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<ConvLstmModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.filters;
        let lstms = vec![
            ConvLstm::new("lstm1", &mut rng, 3, 3, cfg.channels, f),
            ConvLstm::new("lstm2", &mut rng, 3, 3, f, f),
            ConvLstm::new("lstm3", &mut rng, 3, 3, f, f),
        ];
        let bns = vec![
            BatchNorm::new("bn1", f),
            BatchNorm::new("bn2", f),
            BatchNorm::new("bn3", f),
        ];
        let head = ConvLstm::new("lstm4", &mut rng, 3, 3, f, cfg.channels);
        Ok(ConvLstmModel {
            lstms,
            bns,
            head,
            relu: ReluGate::default(),
            seq_len: cfg.l_c,
        })
    }
}

impl Model for ConvLstmModel {
    fn name(&self) -> &str {
        "convlstm"
    }

    fn forward(&mut self, batch: &Batch, train: bool) -> Result<Vec<Tensor>> {
        let mut x = batch.closeness.clone();
        for i in 0..3 {
            x = self.lstms[i].forward(&x)?;
            x = self.bns[i].forward(&x, train)?;
        }
        let seq = self.head.forward(&x)?;
        let y = self.relu.forward(last_timestep(&seq)?);
        Ok(vec![y])
    }

    fn backward(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != 1 {
            return Err(VlucError::shape("convlstm expects one head gradient"));
        }
        let g = self.relu.backward(&grads[0]);
        let mut g = self.head.backward(&grad_into_last_timestep(&g, self.seq_len)?)?;
        for i in (0..3).rev() {
            g = self.bns[i].backward(&g)?;
            g = self.lstms[i].backward(&g)?;
        }
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (lstm, bn) in self.lstms.iter_mut().zip(self.bns.iter_mut()) {
            out.extend(lstm.params_mut());
            out.extend(bn.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}
