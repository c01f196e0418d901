use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};

use super::param::{glorot_uniform, Param};
use super::tensor::Tensor;

/// Temporal attention over a hidden-state sequence (B,L,H,W,C).
///
/// A shared scorer produces one scalar per timestep,
/// z_i = tanh(w . flatten(h_i) + b), the scores go through a softmax over
/// the L axis, and the output is the convex combination sum_i alpha_i h_i
/// with shape (B,H,W,C).
#[derive(Debug, Clone)]
pub struct Attention {
    pub scorer: Param, // (D) with D = H*W*C
    pub bias: Param,   // scalar
    state_dim: usize,
    cache: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    input: Tensor,
    z: Vec<f64>,     // (B*L) tanh scores
    alpha: Vec<f64>, // (B*L) softmax weights
    dims: (usize, usize),
}

impl Attention {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, state_dim: usize) -> Attention {
        let scorer = glorot_uniform(rng, &[state_dim], state_dim, 1);
        Attention {
            scorer: Param::new(format!("{name}.scorer"), scorer, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[1]), true),
            state_dim,
            cache: None,
        }
    }

    pub fn forward(&mut self, seq: &Tensor) -> Result<Tensor> {
        let s = seq.shape();
        if s.len() != 5 {
            return Err(VlucError::shape(format!(
                "attention expects (B,L,H,W,C), got {:?}",
                s
            )));
        }
        let (b, l) = (s[0], s[1]);
        let d = s[2] * s[3] * s[4];
        if d != self.state_dim {
            return Err(VlucError::shape(format!(
                "attention state dim {}, layer built for {}",
                d, self.state_dim
            )));
        }
        if l == 0 {
            return Err(VlucError::shape("attention over empty sequence"));
        }
        let x = seq.data();
        let w = self.scorer.value.data();
        let bias = self.bias.value.data()[0];
        let mut z = vec![0.0; b * l];
        for bi in 0..b {
            for t in 0..l {
                let base = (bi * l + t) * d;
                let mut acc = bias;
                for j in 0..d {
                    acc += w[j] * x[base + j];
                }
                z[bi * l + t] = acc.tanh();
            }
        }
        let mut alpha = vec![0.0; b * l];
        for bi in 0..b {
            let row = &z[bi * l..(bi + 1) * l];
            let zmax = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for t in 0..l {
                let e = (row[t] - zmax).exp();
                alpha[bi * l + t] = e;
                denom += e;
            }
            for t in 0..l {
                alpha[bi * l + t] /= denom;
            }
        }
        let mut out = Tensor::zeros(&[b, s[2], s[3], s[4]]);
        {
            let o = out.data_mut();
            for bi in 0..b {
                for t in 0..l {
                    let a = alpha[bi * l + t];
                    let base = (bi * l + t) * d;
                    let obase = bi * d;
                    for j in 0..d {
                        o[obase + j] += a * x[base + j];
                    }
                }
            }
        }
        self.cache = Some(AttnCache {
            input: seq.clone(),
            z,
            alpha,
            dims: (b, l),
        });
        Ok(out)
    }

    /// Softmax weights of the most recent forward, shape (B, L).
    pub fn last_weights(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.alpha.as_slice())
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| VlucError::Numerical("attention backward before forward".to_string()))?;
        let (b, l) = cache.dims;
        let d = self.state_dim;
        let x = cache.input.data();
        let g = grad_out.data();
        let w = self.scorer.value.data();
        let mut gin = Tensor::zeros(cache.input.shape());
        let gi = gin.data_mut();
        let gw = self.scorer.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        for bi in 0..b {
            let obase = bi * d;
            // d alpha_t = <g, h_t>
            let mut dalpha = vec![0.0; l];
            for t in 0..l {
                let base = (bi * l + t) * d;
                let mut acc = 0.0;
                for j in 0..d {
                    acc += g[obase + j] * x[base + j];
                }
                dalpha[t] = acc;
            }
            // softmax backward: dz_t = alpha_t (dalpha_t - sum_j alpha_j dalpha_j)
            let mut dot = 0.0;
            for t in 0..l {
                dot += cache.alpha[bi * l + t] * dalpha[t];
            }
            for t in 0..l {
                let a = cache.alpha[bi * l + t];
                let z = cache.z[bi * l + t];
                let dz = a * (dalpha[t] - dot);
                let dpre = dz * (1.0 - z * z);
                let base = (bi * l + t) * d;
                gb[0] += dpre;
                for j in 0..d {
                    gw[j] += dpre * x[base + j];
                    // h_t gradient: direct convex-combination path + scorer path
                    gi[base + j] += a * g[obase + j] + dpre * w[j];
                }
            }
        }
        Ok(gin)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.scorer, &mut self.bias]
    }
}
