use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};

use super::param::{glorot_uniform, Param};
use super::tensor::Tensor;

/// Fully connected layer y = xW + b over rows of a (N, D) input.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param, // (D, M)
    pub bias: Param,   // (M)
    in_dim: usize,
    out_dim: usize,
    // LIFO: the layer may be applied several times per pass (shared weights);
    // backward pops in reverse application order.
    cache: Vec<Tensor>,
}

impl Dense {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Dense {
        let weight = glorot_uniform(rng, &[in_dim, out_dim], in_dim, out_dim);
        Dense {
            weight: Param::new(format!("{name}.weight"), weight, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim]), true),
            in_dim,
            out_dim,
            cache: Vec::new(),
        }
    }

    /// Drop stale forward caches. Call at the start of a model forward when
    /// the layer is shared across branches.
    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let s = input.shape();
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(VlucError::shape(format!(
                "dense expects (N,{}), got {:?}",
                self.in_dim, s
            )));
        }
        let n = s[0];
        let (d, m) = (self.in_dim, self.out_dim);
        let mut out = Tensor::zeros(&[n, m]);
        {
            let x = input.data();
            let wt = self.weight.value.data();
            let b = self.bias.value.data();
            let o = out.data_mut();
            for row in 0..n {
                let obase = row * m;
                o[obase..obase + m].copy_from_slice(b);
                for j in 0..d {
                    let xv = x[row * d + j];
                    if xv == 0.0 {
                        continue;
                    }
                    let wbase = j * m;
                    for k in 0..m {
                        o[obase + k] += xv * wt[wbase + k];
                    }
                }
            }
        }
        self.cache.push(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .pop()
            .ok_or_else(|| VlucError::Numerical("dense backward before forward".to_string()))?;
        let n = input.shape()[0];
        let (d, m) = (self.in_dim, self.out_dim);
        let mut gin = Tensor::zeros(&[n, d]);
        {
            let x = input.data();
            let g = grad_out.data();
            let wt = self.weight.value.data();
            let gw = self.weight.grad.data_mut();
            let gb = self.bias.grad.data_mut();
            let gi = gin.data_mut();
            for row in 0..n {
                let obase = row * m;
                for k in 0..m {
                    gb[k] += g[obase + k];
                }
                for j in 0..d {
                    let wbase = j * m;
                    let xv = x[row * d + j];
                    let mut acc = 0.0;
                    for k in 0..m {
                        let gv = g[obase + k];
                        gw[wbase + k] += xv * gv;
                        acc += gv * wt[wbase + k];
                    }
                    gi[row * d + j] = acc;
                }
            }
        }
        Ok(gin)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
