use crate::error::Result;

use super::param::Param;

/// Anything whose scalar loss on fixed data can be differentiated, both
/// analytically and by central finite differences.
pub trait Differentiable {
    /// Forward pass and scalar loss, no gradient accumulation.
    fn loss(&mut self) -> Result<f64>;
    /// Forward + backward; gradients accumulate into the parameters.
    fn loss_and_grad(&mut self) -> Result<f64>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compare analytic gradients to central finite differences with
/// perturbation 1e-5 * max(1, |theta|) per element.
pub fn grad_check<M: Differentiable>(model: &mut M) -> Result<GradCheckReport> {
    for p in model.params_mut() {
        p.zero_grad();
    }
    model.loss_and_grad()?;
    let analytic: Vec<(String, Vec<f64>, bool)> = model
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec(), p.trainable))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let n_params = analytic.len();
    for pi in 0..n_params {
        if !analytic[pi].2 {
            continue; // running stats have no gradient
        }
        let n_elems = analytic[pi].1.len();
        for j in 0..n_elems {
            let orig = model.params_mut()[pi].value.data()[j];
            let h = 1e-5 * orig.abs().max(1.0);
            model.params_mut()[pi].value.data_mut()[j] = orig + h;
            let lp = model.loss()?;
            model.params_mut()[pi].value.data_mut()[j] = orig - h;
            let lm = model.loss()?;
            model.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[pi].1[j];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < 1e-6 {
                // both effectively zero: compare absolutely
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{}]", analytic[pi].0, j);
            }
        }
    }
    Ok(report)
}
