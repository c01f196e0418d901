use crate::error::{Result, VlucError};

use super::tensor::Tensor;

/// Mean squared error over all elements, with its gradient w.r.t. the
/// prediction.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(VlucError::shape(format!(
            "mse shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    {
        let g = grad.data_mut();
        for (i, (p, y)) in pred.data().iter().zip(target.data()).enumerate() {
            let d = p - y;
            loss += d * d;
            g[i] = 2.0 * d / n;
        }
    }
    Ok((loss / n, grad))
}
