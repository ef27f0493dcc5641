//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-input comparison of autodiff and finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖g_ad − g_fd‖ / max(‖g_ad‖ + ‖g_fd‖, floor)` per input.
    pub rel_err: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

const NORM_FLOOR: f64 = 1e-8;

/// Compare gradients of the scalar `f(inputs)` against central differences
/// with step `h`. `f` must build a fresh graph each call.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rel_err = Vec::new();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut xs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let ad = grads.get_or_zeros(v).into_data();
        let mut fd = vec![0.0; ad.len()];
        for j in 0..ad.len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            fd[j] = (plus - minus) / (2.0 * h);
        }
        let diff: f64 = ad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = ad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nf: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        rel_err.push(diff / (na + nf).max(NORM_FLOOR));
        analytic.push(ad);
        numeric.push(fd);
    }
    Ok(GradCheck { rel_err, analytic, numeric })
}
