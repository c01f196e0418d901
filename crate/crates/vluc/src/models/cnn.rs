//! Plain convolutional predictor on channel-stacked closeness frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};
use crate::neural::{Activation, BatchNorm, Conv2D, Param, Tensor};

use super::{stack_channels, unstack_channels, Batch, Model, ModelConfig};

/// Conv(3x3,F)-BN-Conv(3x3,F)-BN-Conv(3x3,F)-BN-Conv(3x3,C)+ReLU over the
/// closeness window stacked along channels.
pub struct CnnModel {
    convs: Vec<Conv2D>,
    bns: Vec<BatchNorm>,
    head: Conv2D,
    l_c: usize,
    channels: usize,
}

impl CnnModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<CnnModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_ch = cfg.l_c * cfg.channels;
        let f = cfg.filters;
        let convs = vec![
            Conv2D::new("conv1", &mut rng, 3, 3, in_ch, f, Activation::None),
            Conv2D::new("conv2", &mut rng, 3, 3, f, f, Activation::None),
            Conv2D::new("conv3", &mut rng, 3, 3, f, f, Activation::None),
        ];
        let bns = vec![
            BatchNorm::new("bn1", f),
            BatchNorm::new("bn2", f),
            BatchNorm::new("bn3", f),
        ];
        let head = Conv2D::new("conv4", &mut rng, 3, 3, f, cfg.channels, Activation::Relu);
        Ok(CnnModel {
            convs,
            bns,
            head,
            l_c: cfg.l_c,
            channels: cfg.channels,
        })
    }
}

impl Model for CnnModel {
    fn name(&self) -> &str {
        "cnn"
    }

    fn forward(&mut self, batch: &Batch, train: bool) -> Result<Vec<Tensor>> {
        let mut x = stack_channels(&batch.closeness)?;
        for i in 0..3 {
            x = self.convs[i].forward(&x)?;
            x = self.bns[i].forward(&x, train)?;
        }
        let y = self.head.forward(&x)?;
        Ok(vec![y])
    }

    fn backward(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != 1 {
            return Err(VlucError::shape("cnn expects one head gradient"));
        }
        let mut g = self.head.backward(&grads[0])?;
        for i in (0..3).rev() {
            g = self.bns[i].backward(&g)?;
            g = self.convs[i].backward(&g)?;
        }
        unstack_channels(&g, self.l_c, self.channels)?;
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}
