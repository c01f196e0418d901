//! Minimal differentiable kernel: tensors, convolution, batch norm,
//! ConvLSTM, temporal attention, dense layers, MSE loss, and Adam, with
//! hand-derived gradients.

pub mod adam;
pub mod attention;
pub mod batchnorm;
pub mod conv;
pub mod convlstm;
pub mod dense;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod param;
pub mod tensor;

pub use adam::Adam;
pub use attention::Attention;
pub use batchnorm::BatchNorm;
pub use conv::{Activation, Conv2D};
pub use convlstm::ConvLstm;
pub use dense::Dense;
pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use loss::mse;
pub use param::Param;
pub use tensor::Tensor;

#[cfg(test)]
mod layer_gradcheck_tests {
    use super::*;

    fn assert_passes(report: GradCheckReport) {
        assert!(
            report.passes(1e-4),
            "max rel {} at {}",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn conv_gradcheck() {
        assert_passes(grad_check(&mut harness::conv_harness(21)).unwrap());
    }

    #[test]
    fn batchnorm_gradcheck() {
        assert_passes(grad_check(&mut harness::batchnorm_harness(22)).unwrap());
    }

    #[test]
    fn convlstm_gradcheck() {
        assert_passes(grad_check(&mut harness::convlstm_harness(23)).unwrap());
    }

    #[test]
    fn attention_gradcheck() {
        assert_passes(grad_check(&mut harness::attention_harness(24)).unwrap());
    }

    #[test]
    fn dense_gradcheck() {
        assert_passes(grad_check(&mut harness::dense_harness(25)).unwrap());
    }
}
