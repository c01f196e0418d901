use crate::error::{Result, VlucError};

use super::param::Param;
use super::tensor::Tensor;

/// Batch normalization over the trailing channel axis. Works on any rank:
/// statistics are taken over all non-channel axes.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub scale: Param,
    pub shift: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub epsilon: f64,
    pub momentum: f64,
    channels: usize,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Tensor,
    batch_var: Vec<f64>,
    n_per_channel: usize,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            scale: Param::new(format!("{name}.scale"), Tensor::full(&[channels], 1.0), true),
            shift: Param::new(format!("{name}.shift"), Tensor::zeros(&[channels]), true),
            running_mean: Param::new(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: Param::new(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false),
            epsilon: 1e-3,
            momentum: 0.99,
            channels,
            cache: None,
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let s = input.shape();
        let c = *s.last().ok_or_else(|| VlucError::shape("batchnorm on rank-0 tensor"))?;
        if c != self.channels {
            return Err(VlucError::shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels, c
            )));
        }
        Ok(input.len() / c)
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let n = self.check_input(input)?;
        let c = self.channels;
        let x = input.data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for row in 0..n {
                for ch in 0..c {
                    mean[ch] += x[row * c + ch];
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            for row in 0..n {
                for ch in 0..c {
                    let d = x[row * c + ch] - mean[ch];
                    var[ch] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= n as f64;
            }
            // running stats track the biased batch moments
            for ch in 0..c {
                let rm = &mut self.running_mean.value.data_mut()[ch];
                *rm = self.momentum * *rm + (1.0 - self.momentum) * mean[ch];
            }
            for ch in 0..c {
                let rv = &mut self.running_var.value.data_mut()[ch];
                *rv = self.momentum * *rv + (1.0 - self.momentum) * var[ch];
            }
            (mean, var)
        } else {
            (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            )
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let gamma = self.scale.value.data();
        let beta = self.shift.value.data();
        let mut out = Tensor::zeros(input.shape());
        let mut normalized = Tensor::zeros(input.shape());
        {
            let o = out.data_mut();
            let nh = normalized.data_mut();
            for row in 0..n {
                for ch in 0..c {
                    let i = row * c + ch;
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    nh[i] = xh;
                    o[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        self.cache = if train {
            Some(BnCache {
                normalized,
                batch_var: var,
                n_per_channel: n,
            })
        } else {
            // inference backward normalizes with fixed stats; keep the cache too
            Some(BnCache {
                normalized,
                batch_var: var,
                n_per_channel: 0, // marker: stats were not batch-dependent
            })
        };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| VlucError::Numerical("batchnorm backward before forward".to_string()))?;
        let c = self.channels;
        let n = grad_out.len() / c;
        let g = grad_out.data();
        let xh = cache.normalized.data();
        let gamma = self.scale.value.data();

        let mut sum_g = vec![0.0; c];
        let mut sum_gxh = vec![0.0; c];
        for row in 0..n {
            for ch in 0..c {
                let i = row * c + ch;
                sum_g[ch] += g[i];
                sum_gxh[ch] += g[i] * xh[i];
            }
        }
        for ch in 0..c {
            self.scale.grad.data_mut()[ch] += sum_gxh[ch];
            self.shift.grad.data_mut()[ch] += sum_g[ch];
        }

        let inv_std: Vec<f64> = cache
            .batch_var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut gin = Tensor::zeros(grad_out.shape());
        let gi = gin.data_mut();
        if cache.n_per_channel == 0 {
            // inference mode: stats are constants
            for row in 0..n {
                for ch in 0..c {
                    let i = row * c + ch;
                    gi[i] = g[i] * gamma[ch] * inv_std[ch];
                }
            }
        } else {
            let nf = n as f64;
            for row in 0..n {
                for ch in 0..c {
                    let i = row * c + ch;
                    gi[i] = gamma[ch] * inv_std[ch]
                        * (g[i] - sum_g[ch] / nf - xh[i] * sum_gxh[ch] / nf);
                }
            }
        }
        Ok(gin)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.scale,
            &mut self.shift,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
