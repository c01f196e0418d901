//! Gradient-check harnesses: each wraps one layer with fixed random input
//! and target and exposes the scalar MSE loss to `grad_check`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::attention::Attention;
use super::batchnorm::BatchNorm;
use super::conv::{Activation, Conv2D};
use super::convlstm::ConvLstm;
use super::dense::Dense;
use super::gradcheck::Differentiable;
use super::loss::mse;
use super::param::{glorot_uniform, Param};
use super::tensor::Tensor;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    glorot_uniform(rng, shape, 1, 1)
}

macro_rules! layer_harness {
    ($name:ident, $layer:ty, |$s:ident, $x:ident| $fwd:expr) => {
        pub struct $name {
            pub layer: $layer,
            pub input: Tensor,
            pub target: Tensor,
        }

        impl Differentiable for $name {
            fn loss(&mut self) -> Result<f64> {
                let ($s, $x) = (&mut self.layer, &self.input);
                let out = $fwd?;
                Ok(mse(&out, &self.target)?.0)
            }
            fn loss_and_grad(&mut self) -> Result<f64> {
                let out = {
                    let ($s, $x) = (&mut self.layer, &self.input);
                    $fwd?
                };
                let (l, g) = mse(&out, &self.target)?;
                self.layer.backward(&g)?;
                Ok(l)
            }
            fn params_mut(&mut self) -> Vec<&mut Param> {
                self.layer.params_mut()
            }
        }
    };
}

layer_harness!(ConvHarness, Conv2D, |layer, input| layer.forward(input));
layer_harness!(BnHarness, BatchNorm, |layer, input| layer.forward(input, true));
layer_harness!(LstmHarness, ConvLstm, |layer, input| layer.forward(input));
layer_harness!(AttnHarness, Attention, |layer, input| layer.forward(input));
layer_harness!(DenseHarness, Dense, |layer, input| layer.forward(input));

pub fn conv_harness(seed: u64) -> ConvHarness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Conv2D::new("c", &mut rng, 3, 3, 2, 3, Activation::Relu);
    let input = rand_tensor(&mut rng, &[2, 4, 4, 2]);
    let target = rand_tensor(&mut rng, &[2, 4, 4, 3]);
    ConvHarness { layer, input, target }
}

pub fn batchnorm_harness(seed: u64) -> BnHarness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = BatchNorm::new("bn", 3);
    let input = rand_tensor(&mut rng, &[4, 2, 2, 3]);
    let target = rand_tensor(&mut rng, &[4, 2, 2, 3]);
    BnHarness { layer, input, target }
}

pub fn convlstm_harness(seed: u64) -> LstmHarness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = ConvLstm::new("cl", &mut rng, 3, 3, 2, 2);
    let input = rand_tensor(&mut rng, &[2, 3, 3, 3, 2]);
    let target = rand_tensor(&mut rng, &[2, 3, 3, 3, 2]);
    LstmHarness { layer, input, target }
}

pub fn attention_harness(seed: u64) -> AttnHarness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Attention::new("a", &mut rng, 2 * 2 * 2);
    let input = rand_tensor(&mut rng, &[2, 4, 2, 2, 2]);
    let target = rand_tensor(&mut rng, &[2, 2, 2, 2]);
    AttnHarness { layer, input, target }
}

pub fn dense_harness(seed: u64) -> DenseHarness {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Dense::new("d", &mut rng, 5, 3);
    let input = rand_tensor(&mut rng, &[4, 5]);
    let target = rand_tensor(&mut rng, &[4, 3]);
    DenseHarness { layer, input, target }
}
