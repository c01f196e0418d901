//! Attention-fused three-branch ConvLSTM predictor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VlucError};
use crate::neural::{Activation, Attention, Conv2D, ConvLstm, Dense, Param, Tensor};

use super::{concat_channels, split_channels, Batch, Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlucVariant {
    Plain,
    Pyramid,
}

impl VlucVariant {
    pub fn parse(s: &str) -> Result<VlucVariant> {
        match s {
            "plain" => Ok(VlucVariant::Plain),
            "pyramid" => Ok(VlucVariant::Pyramid),
            other => Err(VlucError::Config(format!(
                "unknown vluc-net variant '{other}' (expected plain|pyramid)"
            ))),
        }
    }
}

struct Branch {
    lstm1: ConvLstm,
    lstm2: ConvLstm,
    attention: Attention,
}

/// Per branch (closeness, period, trend): the shared metadata Dense layer
/// produces one extra input channel, two ConvLSTM layers encode the
/// sequence, and temporal attention pools it into a single state. A second
/// attention fuses the three branch states, and a 3x3 conv head with ReLU
/// maps the fused state to the prediction.
///
/// The pyramid variant channel-concatenates the first ConvLSTM's hidden
/// sequence onto the second's before attention, doubling the state width.
pub struct VlucNet {
    meta_dense: Dense,
    branches: Vec<Branch>,
    fusion: Attention,
    head: Conv2D,
    variant: VlucVariant,
    channels: usize,
    filters: usize,
    l_c: usize,
    height: usize,
    width: usize,
}

impl VlucNet {
    pub fn new(cfg: &ModelConfig, variant: VlucVariant, seed: u64) -> Result<VlucNet> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = cfg.filters;
        let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
        let state_ch = match variant {
            VlucVariant::Plain => f,
            VlucVariant::Pyramid => 2 * f,
        };
        let meta_dense = Dense::new("meta_dense", &mut rng, cfg.meta_dim, h * w);
        let mut branches = Vec::new();
        for name in ["closeness", "period", "trend"] {
            branches.push(Branch {
                lstm1: ConvLstm::new(&format!("{name}.lstm1"), &mut rng, 3, 3, c + 1, f),
                lstm2: ConvLstm::new(&format!("{name}.lstm2"), &mut rng, 3, 3, f, f),
                attention: Attention::new(&format!("{name}.attention"), &mut rng, h * w * state_ch),
            });
        }
        let fusion = Attention::new("fusion", &mut rng, h * w * state_ch);
        let head = Conv2D::new("head", &mut rng, 3, 3, state_ch, c, Activation::Relu);
        Ok(VlucNet {
            meta_dense,
            branches,
            fusion,
            head,
            variant,
            channels: c,
            filters: f,
            l_c: cfg.l_c,
            height: h,
            width: w,
        })
    }

    /// Rows of the (B, 3L, Dm) metadata tensor belonging to branch `b`,
    /// flattened to (B*L, Dm) for the shared Dense layer.
    fn branch_meta(&self, meta: &Tensor, b: usize) -> Result<Tensor> {
        let s = meta.shape();
        if s.len() != 3 || s[1] != 3 * self.l_c {
            return Err(VlucError::shape(format!(
                "meta must be (B,{},Dm), got {:?}",
                3 * self.l_c,
                s
            )));
        }
        let (batch, dm) = (s[0], s[2]);
        let l = self.l_c;
        let mut out = Tensor::zeros(&[batch * l, dm]);
        {
            let src = meta.data();
            let dst = out.data_mut();
            for bi in 0..batch {
                for t in 0..l {
                    let from = (bi * 3 * l + b * l + t) * dm;
                    let to = (bi * l + t) * dm;
                    dst[to..to + dm].copy_from_slice(&src[from..from + dm]);
                }
            }
        }
        Ok(out)
    }

    fn branch_forward(&mut self, b: usize, seq: &Tensor, meta: &Tensor) -> Result<Tensor> {
        let rows = self.branch_meta(meta, b)?;
        let m = self.meta_dense.forward(&rows)?;
        let bsz = seq.shape()[0];
        let m = m.reshape(&[bsz, self.l_c, self.height, self.width, 1])?;
        let cat = concat_channels(seq, &m)?;
        let branch = &mut self.branches[b];
        let s1 = branch.lstm1.forward(&cat)?;
        let s2 = branch.lstm2.forward(&s1)?;
        let att_in = match self.variant {
            VlucVariant::Plain => s2,
            VlucVariant::Pyramid => concat_channels(&s1, &s2)?,
        };
        branch.attention.forward(&att_in)
    }

    /// Backward through one branch; the shared Dense pops its cache, so
    /// callers must visit branches in reverse forward order.
    fn branch_backward(&mut self, b: usize, grad_state: &Tensor) -> Result<()> {
        let f = self.filters;
        let branch = &mut self.branches[b];
        let g_att_in = branch.attention.backward(grad_state)?;
        let g_s1 = match self.variant {
            VlucVariant::Plain => branch.lstm2.backward(&g_att_in)?,
            VlucVariant::Pyramid => {
                let (g_direct, g_s2) = split_channels(&g_att_in, f, f)?;
                let mut g = branch.lstm2.backward(&g_s2)?;
                g.add_assign(&g_direct)?;
                g
            }
        };
        let g_cat = branch.lstm1.backward(&g_s1)?;
        let (_, g_m) = split_channels(&g_cat, self.channels, 1)?;
        let bsz = g_m.shape()[0];
        let g_rows = g_m.reshape(&[bsz * self.l_c, self.height * self.width])?;
        self.meta_dense.backward(&g_rows)?;
        Ok(())
    }
}

fn stack_states(states: &[Tensor]) -> Result<Tensor> {
    let s = states[0].shape().to_vec();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let flen = h * w * c;
    let mut out = Tensor::zeros(&[b, states.len(), h, w, c]);
    {
        let o = out.data_mut();
        for (i, st) in states.iter().enumerate() {
            if st.shape() != &s[..] {
                return Err(VlucError::shape("branch states differ in shape"));
            }
            let d = st.data();
            for bi in 0..b {
                let dst = (bi * states.len() + i) * flen;
                o[dst..dst + flen].copy_from_slice(&d[bi * flen..(bi + 1) * flen]);
            }
        }
    }
    Ok(out)
}

fn unstack_state_grads(grad: &Tensor) -> Vec<Tensor> {
    let s = grad.shape();
    let (b, l, h, w, c) = (s[0], s[1], s[2], s[3], s[4]);
    let flen = h * w * c;
    let g = grad.data();
    (0..l)
        .map(|i| {
            let mut out = Tensor::zeros(&[b, h, w, c]);
            {
                let o = out.data_mut();
                for bi in 0..b {
                    let src = (bi * l + i) * flen;
                    o[bi * flen..(bi + 1) * flen].copy_from_slice(&g[src..src + flen]);
                }
            }
            out
        })
        .collect()
}

impl Model for VlucNet {
    fn name(&self) -> &str {
        match self.variant {
            VlucVariant::Plain => "vluc-net",
            VlucVariant::Pyramid => "vluc-net-pyramid",
        }
    }

    fn forward(&mut self, batch: &Batch, _train: bool) -> Result<Vec<Tensor>> {
        self.meta_dense.clear_cache();
        let meta = batch
            .meta
            .clone()
            .ok_or_else(|| VlucError::data("vluc-net batch is missing metadata"))?;
        let period = batch
            .period
            .clone()
            .ok_or_else(|| VlucError::data("vluc-net batch is missing the period window"))?;
        let trend = batch
            .trend
            .clone()
            .ok_or_else(|| VlucError::data("vluc-net batch is missing the trend window"))?;
        let closeness = batch.closeness.clone();
        let states = vec![
            self.branch_forward(0, &closeness, &meta)?,
            self.branch_forward(1, &period, &meta)?,
            self.branch_forward(2, &trend, &meta)?,
        ];
        let fused = self.fusion.forward(&stack_states(&states)?)?;
        Ok(vec![self.head.forward(&fused)?])
    }

    fn backward(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != 1 {
            return Err(VlucError::shape("vluc-net expects one head gradient"));
        }
        let g_fused = self.head.backward(&grads[0])?;
        let g_states = unstack_state_grads(&self.fusion.backward(&g_fused)?);
        for b in (0..3).rev() {
            self.branch_backward(b, &g_states[b])?;
        }
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.meta_dense.params_mut();
        for branch in self.branches.iter_mut() {
            out.extend(branch.lstm1.params_mut());
            out.extend(branch.lstm2.params_mut());
            out.extend(branch.attention.params_mut());
        }
        out.extend(self.fusion.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}
