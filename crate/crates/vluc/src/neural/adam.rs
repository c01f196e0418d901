use super::param::Param;
use super::tensor::Tensor;

/// Adam with bias correction. Defaults follow the training protocol:
/// lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    // first/second moment per parameter, indexed by position in the
    // model's parameter list
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter using its accumulated
    /// gradient. Non-trainable parameters (running stats) are skipped but
    /// still occupy a moment slot so indices stay stable.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            for p in params.iter() {
                self.m.push(Tensor::zeros(p.value.shape()));
                self.v.push(Tensor::zeros(p.value.shape()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Param::new("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap(), true);
        let mut opt = Adam::new(1e-3);
        opt.step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Param::new("w", Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap(), true);
        p.grad = Tensor::from_vec(&[2], vec![0.3, -5.0]).unwrap();
        let mut opt = Adam::new(1e-2);
        opt.step(&mut [&mut p]);
        // bias-corrected first step: update ~ -lr * sign(g)
        assert!((p.value.data()[0] + 1e-2).abs() < 1e-6);
        assert!((p.value.data()[1] - 1e-2).abs() < 1e-6);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // minimize (w - 3)^2
        let mut p = Param::new("w", Tensor::from_vec(&[1], vec![-4.0]).unwrap(), true);
        let mut opt = Adam::new(1e-2);
        for _ in 0..2000 {
            let w = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (w - 3.0);
            opt.step(&mut [&mut p]);
        }
        // Adam hovers near the optimum within O(lr) of it.
        let loss = (p.value.data()[0] - 3.0_f64).powi(2);
        assert!(loss < 1e-4, "loss {}", loss);
    }

    #[test]
    fn non_trainable_params_are_skipped() {
        let mut p = Param::new("rm", Tensor::from_vec(&[1], vec![0.5]).unwrap(), false);
        p.grad = Tensor::from_vec(&[1], vec![10.0]).unwrap();
        let mut opt = Adam::new(1e-2);
        opt.step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[0.5]);
    }
}
