use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};

use super::conv::{conv2d_grad_input, conv2d_grad_params, conv2d_raw};
use super::param::{glorot_uniform, Param};
use super::tensor::Tensor;

/// ConvLSTM layer: gate pre-activations are same-padded convolutions over
/// concat(x_t, h_{t-1}). Gate order (i, f, g, o), no peepholes, forget-gate
/// bias initialized to 1.
#[derive(Debug, Clone)]
pub struct ConvLstm {
    pub kernel: Param, // (kh, kw, in_ch + hid, 4*hid)
    pub bias: Param,   // (4*hid)
    pub in_ch: usize,
    pub hid: usize,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    // per-timestep records, index 0..L
    concat: Vec<Tensor>,  // (B,H,W,in+hid)
    gates: Vec<Tensor>,   // (B,H,W,4*hid), post-activation
    cell: Vec<Tensor>,    // c_t
    tanh_c: Vec<Tensor>,  // tanh(c_t)
    dims: (usize, usize, usize, usize), // B,L,H,W
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ConvLstm {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, kh: usize, kw: usize, in_ch: usize, hid: usize) -> ConvLstm {
        let cin = in_ch + hid;
        let cout = 4 * hid;
        let kernel = glorot_uniform(rng, &[kh, kw, cin, cout], kh * kw * cin, kh * kw * cout);
        let mut bias = Tensor::zeros(&[cout]);
        for v in &mut bias.data_mut()[hid..2 * hid] {
            *v = 1.0;
        }
        ConvLstm {
            kernel: Param::new(format!("{name}.kernel"), kernel, true),
            bias: Param::new(format!("{name}.bias"), bias, true),
            in_ch,
            hid,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Run the recurrence over `seq` (B,L,H,W,in_ch) from zero initial
    /// states, returning the hidden-state sequence (B,L,H,W,hid).
    pub fn forward(&mut self, seq: &Tensor) -> Result<Tensor> {
        let s = seq.shape();
        if s.len() != 5 || s[4] != self.in_ch {
            return Err(VlucError::shape(format!(
                "convlstm expects (B,L,H,W,{}), got {:?}",
                self.in_ch, s
            )));
        }
        let (b, l, h, w) = (s[0], s[1], s[2], s[3]);
        let hid = self.hid;
        let mut hidden = Tensor::zeros(&[b, h, w, hid]);
        let mut cell = Tensor::zeros(&[b, h, w, hid]);
        let mut out = Tensor::zeros(&[b, l, h, w, hid]);
        let mut cache = LstmCache {
            concat: Vec::with_capacity(l),
            gates: Vec::with_capacity(l),
            cell: Vec::with_capacity(l),
            tanh_c: Vec::with_capacity(l),
            dims: (b, l, h, w),
        };
        let frame_len = h * w * self.in_ch;
        for t in 0..l {
            // concat(x_t, h_{t-1}) along channels
            let mut cat = Tensor::zeros(&[b, h, w, self.in_ch + hid]);
            {
                let cd = cat.data_mut();
                let xd = seq.data();
                let hd = hidden.data();
                for bi in 0..b {
                    let xoff = (bi * l + t) * frame_len;
                    for px in 0..h * w {
                        let cbase = (bi * h * w + px) * (self.in_ch + hid);
                        let xbase = xoff + px * self.in_ch;
                        cd[cbase..cbase + self.in_ch]
                            .copy_from_slice(&xd[xbase..xbase + self.in_ch]);
                        let hbase = (bi * h * w + px) * hid;
                        cd[cbase + self.in_ch..cbase + self.in_ch + hid]
                            .copy_from_slice(&hd[hbase..hbase + hid]);
                    }
                }
            }
            let mut pre = conv2d_raw(&cat, &self.kernel.value, &self.bias.value)?;
            // gate activations in place: i,f,o sigmoid; g tanh
            {
                let pd = pre.data_mut();
                for base in (0..pd.len()).step_by(4 * hid) {
                    for j in 0..hid {
                        pd[base + j] = sigmoid(pd[base + j]); // i
                        pd[base + hid + j] = sigmoid(pd[base + hid + j]); // f
                        pd[base + 2 * hid + j] = pd[base + 2 * hid + j].tanh(); // g
                        pd[base + 3 * hid + j] = sigmoid(pd[base + 3 * hid + j]); // o
                    }
                }
            }
            let gates = pre;
            let mut new_cell = Tensor::zeros(&[b, h, w, hid]);
            let mut tanh_c = Tensor::zeros(&[b, h, w, hid]);
            let mut new_hidden = Tensor::zeros(&[b, h, w, hid]);
            {
                let gd = gates.data();
                let cprev = cell.data();
                let nc = new_cell.data_mut();
                let tc = tanh_c.data_mut();
                let nh = new_hidden.data_mut();
                for px in 0..b * h * w {
                    let gbase = px * 4 * hid;
                    let sbase = px * hid;
                    for j in 0..hid {
                        let i = gd[gbase + j];
                        let f = gd[gbase + hid + j];
                        let g = gd[gbase + 2 * hid + j];
                        let o = gd[gbase + 3 * hid + j];
                        let c = f * cprev[sbase + j] + i * g;
                        let t_c = c.tanh();
                        nc[sbase + j] = c;
                        tc[sbase + j] = t_c;
                        nh[sbase + j] = o * t_c;
                    }
                }
            }
            // write hidden state into the output sequence
            {
                let od = out.data_mut();
                let nh = new_hidden.data();
                let flen = h * w * hid;
                for bi in 0..b {
                    let obase = (bi * l + t) * flen;
                    od[obase..obase + flen].copy_from_slice(&nh[bi * flen..(bi + 1) * flen]);
                }
            }
            cache.concat.push(cat);
            cache.gates.push(gates);
            cache.cell.push(new_cell.clone());
            cache.tanh_c.push(tanh_c);
            hidden = new_hidden;
            cell = new_cell;
        }
        self.cache = Some(cache);
        Ok(out)
    }

    /// BPTT given the gradient w.r.t. the full hidden sequence.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| VlucError::Numerical("convlstm backward before forward".to_string()))?;
        let (b, l, h, w) = cache.dims;
        let hid = self.hid;
        if grad_out.shape() != [b, l, h, w, hid] {
            return Err(VlucError::shape(format!(
                "convlstm grad shape {:?}, expected {:?}",
                grad_out.shape(),
                [b, l, h, w, hid]
            )));
        }
        let mut grad_seq = Tensor::zeros(&[b, l, h, w, self.in_ch]);
        let mut dh_next = Tensor::zeros(&[b, h, w, hid]);
        let mut dc_next = Tensor::zeros(&[b, h, w, hid]);
        let flen = h * w * hid;
        for t in (0..l).rev() {
            // dh_t = grad from output sequence + grad from t+1 via recurrence
            let mut dh = dh_next.clone();
            {
                let dd = dh.data_mut();
                let gd = grad_out.data();
                for bi in 0..b {
                    let obase = (bi * l + t) * flen;
                    for j in 0..flen {
                        dd[bi * flen + j] += gd[obase + j];
                    }
                }
            }
            let gates = &cache.gates[t];
            let tanh_c = &cache.tanh_c[t];
            let cprev: Option<&Tensor> = if t > 0 { Some(&cache.cell[t - 1]) } else { None };
            let mut dgates = Tensor::zeros(&[b, h, w, 4 * hid]);
            let mut dc_prev = Tensor::zeros(&[b, h, w, hid]);
            {
                let gd = gates.data();
                let tcd = tanh_c.data();
                let dhd = dh.data();
                let dcn = dc_next.data();
                let dgd = dgates.data_mut();
                let dcp = dc_prev.data_mut();
                for px in 0..b * h * w {
                    let gbase = px * 4 * hid;
                    let sbase = px * hid;
                    for j in 0..hid {
                        let i = gd[gbase + j];
                        let f = gd[gbase + hid + j];
                        let g = gd[gbase + 2 * hid + j];
                        let o = gd[gbase + 3 * hid + j];
                        let tc = tcd[sbase + j];
                        let dh_v = dhd[sbase + j];
                        // c_t receives gradient from h_t and from c_{t+1}
                        let dc = dh_v * o * (1.0 - tc * tc) + dcn[sbase + j];
                        let c_prev_v = cprev.map_or(0.0, |c| c.data()[sbase + j]);
                        dgd[gbase + j] = dc * g * i * (1.0 - i); // d pre_i
                        dgd[gbase + hid + j] = dc * c_prev_v * f * (1.0 - f); // d pre_f
                        dgd[gbase + 2 * hid + j] = dc * i * (1.0 - g * g); // d pre_g
                        dgd[gbase + 3 * hid + j] = dh_v * tc * o * (1.0 - o); // d pre_o
                        dcp[sbase + j] = dc * f;
                    }
                }
            }
            conv2d_grad_params(
                &cache.concat[t],
                &dgates,
                &mut self.kernel.grad,
                &mut self.bias.grad,
            )?;
            let dcat = conv2d_grad_input(&dgates, &self.kernel.value)?;
            // split dcat into d x_t and d h_{t-1}
            let mut dh_prev = Tensor::zeros(&[b, h, w, hid]);
            {
                let dc_d = dcat.data();
                let gs = grad_seq.data_mut();
                let dhp = dh_prev.data_mut();
                let in_ch = self.in_ch;
                let xflen = h * w * in_ch;
                for bi in 0..b {
                    for px in 0..h * w {
                        let cbase = (bi * h * w + px) * (in_ch + hid);
                        let xbase = (bi * l + t) * xflen + px * in_ch;
                        gs[xbase..xbase + in_ch].copy_from_slice(&dc_d[cbase..cbase + in_ch]);
                        let hbase = (bi * h * w + px) * hid;
                        dhp[hbase..hbase + hid]
                            .copy_from_slice(&dc_d[cbase + in_ch..cbase + in_ch + hid]);
                    }
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(grad_seq)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut layer = ConvLstm::new("l", &mut rng, 3, 3, 1, 2);
        layer.kernel.value.fill(0.0);
        layer.bias.value.fill(0.0);
        let seq = Tensor::full(&[1, 3, 2, 2, 1], 1.5);
        let out = layer.forward(&seq).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_step_matches_hand_lstm() {
        // L=1, H=W=1, 1x1 kernel reduces to a plain LSTM step
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut layer = ConvLstm::new("l", &mut rng, 1, 1, 1, 1);
        // kernel shape (1,1,2,4): rows = [x, h], cols = gates (i,f,g,o)
        layer.kernel.value = Tensor::from_vec(
            &[1, 1, 2, 4],
            vec![0.5, -0.3, 0.8, 0.2, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        layer.bias.value = Tensor::from_vec(&[4], vec![0.1, 0.2, -0.1, 0.3]).unwrap();
        let x = 0.7;
        let seq = Tensor::from_vec(&[1, 1, 1, 1, 1], vec![x]).unwrap();
        let out = layer.forward(&seq).unwrap();

        let i = sigmoid(0.5 * x + 0.1);
        let f = sigmoid(-0.3 * x + 0.2);
        let g = (0.8 * x - 0.1).tanh();
        let o = sigmoid(0.2 * x + 0.3);
        let c = f * 0.0 + i * g;
        let expect = o * c.tanh();
        assert!((out.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layer = ConvLstm::new("l", &mut rng, 3, 3, 1, 32);
        // 4*(9*33*32 + 32)
        assert_eq!(layer.param_count(), 38_144);
    }
}
