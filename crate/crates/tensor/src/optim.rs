use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, scaled by the learning rate.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-8, clip_norm: None }
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    step: u64,
    m: IndexMap<String, Vec<T>>,
    v: IndexMap<String, Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// Apply one update. Every gradient is validated before any parameter is
    /// touched, so a rejected step leaves `params` and the state unchanged.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(String, Tensor<T>)], lr: f64) -> Result<()> {
        let mut sq = 0.0f64;
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(TensorError::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
            sq += g.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
        }
        let clip = match self.cfg.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_bc2_sqrt = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(self.cfg.eps);
        let (b1t, b2t) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
        let clip = T::from_f64_lossy(clip);

        let decay = T::one() - T::from_f64_lossy(lr * self.cfg.weight_decay);

        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let n = p.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * clip;
                *w *= decay;
                *mi = b1t * *mi + one_b1 * gi;
                *vi = b2t * *vi + one_b2 * gi * gi;
                *w -= step_size * *mi / ((*vi).sqrt() * inv_bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_f64(&[w.len()], w).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = store(&[1.0, -2.0, 0.5]);
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        let g = Tensor::from_f64(&[3], &[0.3, -7.0, 1e-3]).unwrap();
        opt.step(&mut p, &[("w".into(), g)], 0.01).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] + 1.99).abs() < 1e-6);
        assert!((w[2] - 0.49).abs() < 1e-5);
    }

    #[test]
    fn zero_gradient_is_a_noop() {
        let mut p = store(&[1.0, 2.0]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &[("w".into(), Tensor::zeros(&[2]))], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn nonfinite_gradient_names_parameter() {
        let mut p = store(&[1.0]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default());
        let err = opt.step(&mut p, &[("w".into(), Tensor::from_f64(&[1], &[f64::NAN]).unwrap())], 0.1);
        assert_eq!(err, Err(TensorError::NonFiniteGradient("w".into())));
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut opt = Adam::<f64>::new(AdamConfig { clip_norm: Some(1.0), weight_decay: 0.0, ..Default::default() });
        let mut p = store(&[0.0, 0.0]);
        opt.step(&mut p, &[("w".into(), Tensor::from_f64(&[2], &[30.0, 40.0]).unwrap())], 0.1).unwrap();
        let (m, _) = opt.moments("w").unwrap();
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-12);
        assert!((m[1] - 0.1 * 0.8).abs() < 1e-12);
    }
}
