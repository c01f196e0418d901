use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};

use super::param::{glorot_uniform, Param};
use super::tensor::Tensor;

/// Same-padded stride-1 cross-correlation of `input` (B,H,W,Ci) with
/// `kernel` (kh,kw,Ci,Co) plus `bias` (Co). Odd kernel sides only.
pub fn conv2d_raw(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [b, h, w, ci] = dims4(input, "conv input")?;
    let [kh, kw, kci, co] = dims4(kernel, "conv kernel")?;
    if kci != ci {
        return Err(VlucError::shape(format!(
            "conv kernel expects {} input channels, got {}",
            kci, ci
        )));
    }
    if bias.shape() != [co] {
        return Err(VlucError::shape(format!(
            "conv bias shape {:?}, expected [{}]",
            bias.shape(),
            co
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(VlucError::shape("conv kernel sides must be odd".to_string()));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros(&[b, h, w, co]);
    let x = input.data();
    let k = kernel.data();
    let bs = bias.data();
    let o = out.data_mut();
    for bi in 0..b {
        for oy in 0..h {
            for ox in 0..w {
                let obase = ((bi * h + oy) * w + ox) * co;
                o[obase..obase + co].copy_from_slice(bs);
                for ky in 0..kh {
                    let iy = oy + ky;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let iy = iy - ph;
                    for kx in 0..kw {
                        let ix = ox + kx;
                        if ix < pw || ix - pw >= w {
                            continue;
                        }
                        let ix = ix - pw;
                        let ibase = ((bi * h + iy) * w + ix) * ci;
                        let kbase = (ky * kw + kx) * ci * co;
                        for c_in in 0..ci {
                            let xv = x[ibase + c_in];
                            if xv == 0.0 {
                                continue;
                            }
                            let krow = kbase + c_in * co;
                            for c_out in 0..co {
                                o[obase + c_out] += xv * k[krow + c_out];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of conv2d_raw w.r.t. its input.
pub fn conv2d_grad_input(grad_out: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let [b, h, w, co] = dims4(grad_out, "conv grad_out")?;
    let [kh, kw, ci, kco] = dims4(kernel, "conv kernel")?;
    if kco != co {
        return Err(VlucError::shape("conv grad channel mismatch".to_string()));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let mut gin = Tensor::zeros(&[b, h, w, ci]);
    let g = grad_out.data();
    let k = kernel.data();
    let gi = gin.data_mut();
    for bi in 0..b {
        for oy in 0..h {
            for ox in 0..w {
                let obase = ((bi * h + oy) * w + ox) * co;
                for ky in 0..kh {
                    let iy = oy + ky;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let iy = iy - ph;
                    for kx in 0..kw {
                        let ix = ox + kx;
                        if ix < pw || ix - pw >= w {
                            continue;
                        }
                        let ix = ix - pw;
                        let ibase = ((bi * h + iy) * w + ix) * ci;
                        let kbase = (ky * kw + kx) * ci * co;
                        for c_in in 0..ci {
                            let krow = kbase + c_in * co;
                            let mut acc = 0.0;
                            for c_out in 0..co {
                                acc += g[obase + c_out] * k[krow + c_out];
                            }
                            gi[ibase + c_in] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// Gradients of conv2d_raw w.r.t. kernel and bias, accumulated into the
/// provided buffers.
pub fn conv2d_grad_params(
    input: &Tensor,
    grad_out: &Tensor,
    grad_kernel: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Result<()> {
    let [b, h, w, ci] = dims4(input, "conv input")?;
    let [_, _, _, co] = dims4(grad_out, "conv grad_out")?;
    let [kh, kw, _, _] = dims4(grad_kernel, "conv grad_kernel")?;
    let (ph, pw) = (kh / 2, kw / 2);
    let x = input.data();
    let g = grad_out.data();
    let gk = grad_kernel.data_mut();
    let gb = grad_bias.data_mut();
    for bi in 0..b {
        for oy in 0..h {
            for ox in 0..w {
                let obase = ((bi * h + oy) * w + ox) * co;
                for c_out in 0..co {
                    gb[c_out] += g[obase + c_out];
                }
                for ky in 0..kh {
                    let iy = oy + ky;
                    if iy < ph || iy - ph >= h {
                        continue;
                    }
                    let iy = iy - ph;
                    for kx in 0..kw {
                        let ix = ox + kx;
                        if ix < pw || ix - pw >= w {
                            continue;
                        }
                        let ix = ix - pw;
                        let ibase = ((bi * h + iy) * w + ix) * ci;
                        let kbase = (ky * kw + kx) * ci * co;
                        for c_in in 0..ci {
                            let xv = x[ibase + c_in];
                            if xv == 0.0 {
                                continue;
                            }
                            let krow = kbase + c_in * co;
                            for c_out in 0..co {
                                gk[krow + c_out] += xv * g[obase + c_out];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(VlucError::shape(format!(
            "{} must be rank 4, got {:?}",
            what, s
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

/// Same-padded stride-1 conv layer with optional ReLU.
#[derive(Debug, Clone)]
pub struct Conv2D {
    pub kernel: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    input: Tensor,
    output: Tensor,
}

impl Conv2D {
    pub fn new(
        name: &str,
        rng: &mut ChaCha8Rng,
        kh: usize,
        kw: usize,
        in_ch: usize,
        out_ch: usize,
        activation: Activation,
    ) -> Conv2D {
        let fan_in = kh * kw * in_ch;
        let fan_out = kh * kw * out_ch;
        let kernel = glorot_uniform(rng, &[kh, kw, in_ch, out_ch], fan_in, fan_out);
        Conv2D {
            kernel: Param::new(format!("{name}.kernel"), kernel, true),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true),
            activation,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut out = conv2d_raw(input, &self.kernel.value, &self.bias.value)?;
        if self.activation == Activation::Relu {
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        self.cache = Some(ConvCache {
            input: input.clone(),
            output: out.clone(),
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| VlucError::Numerical("conv backward before forward".to_string()))?;
        let mut g = grad_out.clone();
        if self.activation == Activation::Relu {
            for (gv, ov) in g.data_mut().iter_mut().zip(cache.output.data()) {
                if *ov <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        conv2d_grad_params(&cache.input, &g, &mut self.kernel.grad, &mut self.bias.grad)?;
        conv2d_grad_input(&g, &self.kernel.value)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
    }
}
