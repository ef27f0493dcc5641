//! Turning a trained model plus a prefix into a specialized model: context
//! capture, frozen-context inference, weight folding and the moving-average
//! context update.

use cgt_tensor::{Float, Graph, Tensor};

use crate::checkpoint::{params_hash, tokens_hash, Checkpoint, Provenance};
use crate::error::{CgtError, Result};
use crate::model::modulator::{mixing_f64, Factors};
use crate::model::{bank_names, is_context_param, slot, Cgt, Context, ForwardOpts, Input};

/// Context trace `[B, n, d_y]` of a dynamic run (posterior mean for
/// variational models).
pub fn context_trace<T: Float>(model: &Cgt<T>, input: Input<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, input, ForwardOpts::default())?;
    let y = out.y_computed.ok_or_else(|| CgtError::Model("model has no context pathway".into()))?;
    Ok(g.value(y).clone())
}

/// `y` at 1-based position `s` of a single sequence.
pub fn capture_context<T: Float>(model: &Cgt<T>, input: Input<T>, s: usize) -> Result<Vec<f64>> {
    let trace = context_trace(model, input)?;
    let n = trace.shape()[1];
    if s == 0 || s > n {
        return Err(CgtError::PositionOutOfRange { pos: s, len: n });
    }
    Ok(trace.row(s - 1).iter().map(|v| v.to_f64_lossy()).collect())
}

/// Model outputs `[B, n, ·]` with the context fixed to `y` (one row per
/// sequence, or a single shared row). The context pathway is not evaluated.
pub fn freeze_and_run<T: Float>(model: &Cgt<T>, y: &[f64], input: Input<T>, offsets: Option<Vec<usize>>) -> Result<Tensor<T>> {
    let dy = model.cfg.dim_y;
    let shape = if y.len() == dy { vec![dy] } else { vec![y.len() / dy.max(1), dy] };
    let mut g = Graph::new();
    let c = g.constant(Tensor::from_f64(&shape, y).map_err(|_| CgtError::OverrideShape { got: vec![y.len()], expected: format!("multiple of {dy}") })?);
    let out = model.forward(&mut g, input, ForwardOpts { context: Context::Constant(c), pos_offsets: offsets, ..ForwardOpts::default() })?;
    Ok(g.value(out.output).clone())
}

/// Outputs of a model without context (folded or plain).
pub fn run_plain<T: Float>(model: &Cgt<T>, input: Input<T>, offsets: Option<Vec<usize>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, input, ForwardOpts { context: Context::None, pos_offsets: offsets, ..ForwardOpts::default() })?;
    Ok(g.value(out.output).clone())
}

/// Outputs of a dynamic run.
pub fn run_dynamic<T: Float>(model: &Cgt<T>, input: Input<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, input, ForwardOpts::default())?;
    Ok(g.value(out.output).clone())
}

/// Outputs when the modulators see the exponential moving average of the
/// computed context seeded at `y_init`.
pub fn moving_average_run<T: Float>(model: &Cgt<T>, y_init: &[f64], gamma: f64, input: Input<T>) -> Result<Tensor<T>> {
    let dy = model.cfg.dim_y;
    let shape = if y_init.len() == dy { vec![dy] } else { vec![y_init.len() / dy.max(1), dy] };
    let init = Tensor::from_f64(&shape, y_init)?;
    let mut g = Graph::new();
    let out = model.forward(&mut g, input, ForwardOpts::with_context(Context::MovingAverage { init, gamma }))?;
    Ok(g.value(out.output).clone())
}

fn to_f64<T: Float>(model: &Cgt<T>, name: &str) -> Result<Vec<f64>> {
    Ok(model.params.get(name)?.to_f64_vec())
}

/// Absorb the operators generated by `y` into the first projection of every
/// modulated sublayer and drop the context pathway and template bank.
///
/// With weights stored `[in, out]` and `δ = L·Rᵀ` split into `R_w` (first
/// `d` rows of `R`) and `r_b` (last row), the rewritten projection is
/// `W′ = W + R_w·(Lᵀ·W)` and `b′ = b + r_b·(Lᵀ·W)`.
pub fn fold<T: Float>(model: &Cgt<T>, y: &[f64]) -> Result<Cgt<T>> {
    if model.is_specialized() {
        return Ok(model.clone());
    }
    let cfg = &model.cfg;
    if y.len() != cfg.dim_y {
        return Err(CgtError::OverrideShape { got: vec![y.len()], expected: format!("[{}]", cfg.dim_y) });
    }
    let (d, rank) = (cfg.dim_x, cfg.rank);
    let mut out = model.clone();
    for j in 0..cfg.n_stage2() {
        for (mlp, w_name, b_name) in [(false, "attn.kqv", "attn.kqv_b"), (true, "mlp.w1", "mlp.b1")] {
            let [l, r, s] = bank_names(slot(j, mlp));
            let sigma = mixing_f64(&to_f64(model, &s)?, y, cfg.mixing);
            let f = Factors::mix(sigma, &to_f64(model, &l)?, &to_f64(model, &r)?, d, rank);
            let w_key = format!("stage2.{j}.{w_name}");
            let b_key = format!("stage2.{j}.{b_name}");
            let w = to_f64(model, &w_key)?;
            let bias = to_f64(model, &b_key)?;
            let cols = w.len() / d;
            // Lᵀ·W, [rank, cols]
            let mut ltw = vec![0.0; rank * cols];
            for i in 0..d {
                for k in 0..rank {
                    let lik = f.l[i * rank + k];
                    for c in 0..cols {
                        ltw[k * cols + c] += lik * w[i * cols + c];
                    }
                }
            }
            let mut w2 = w;
            for i in 0..d {
                for k in 0..rank {
                    let rik = f.r[i * rank + k];
                    for c in 0..cols {
                        w2[i * cols + c] += rik * ltw[k * cols + c];
                    }
                }
            }
            let mut b2 = bias;
            for k in 0..rank {
                let rbk = f.r[d * rank + k];
                for c in 0..cols {
                    b2[c] += rbk * ltw[k * cols + c];
                }
            }
            let shape = model.params.get(&w_key)?.shape().to_vec();
            out.params.insert(w_key, Tensor::from_f64(&shape, &w2)?);
            out.params.insert(b_key, Tensor::from_f64(&[cols], &b2)?);
        }
    }
    out.params.retain(|n| !is_context_param(n));
    Ok(out)
}

/// Capture the context at 1-based `s` of `prefix` and build a specialized
/// checkpoint. Without folding the bank is kept and the captured context is
/// applied at run time; the context pathway is dropped either way.
pub fn specialize_checkpoint(ck: &Checkpoint, prefix: &[usize], s: usize, do_fold: bool) -> Result<Checkpoint> {
    if s == 0 || s > prefix.len() {
        return Err(CgtError::PositionOutOfRange { pos: s, len: prefix.len() });
    }
    let model: Cgt<f64> = ck.model();
    let y = capture_context(&model, Input::Tokens(&[prefix.to_vec()]), s)?;
    let mut special = if do_fold { fold(&model, &y)? } else { model };
    if !do_fold {
        special.params.retain(|n| !n.contains("_y."));
    }
    let provenance = Provenance { source: params_hash(&ck.params), prefix: tokens_hash(&prefix[..s]), split: s, folded: do_fold, y };
    let mut out = Checkpoint::from_model(&special, &ck.config, ck.step);
    out.specialized = true;
    out.provenance = Some(provenance);
    out.params = special.params.cast();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Mixing, ModelConfig};
    use cgt_tensor::{stream_rng, Stream};
    use rand::Rng;

    fn cfg(mixing: Mixing) -> ModelConfig {
        ModelConfig { n_layers: 3, readout_layer: 1, dim_x: 8, dim_y: 4, heads_x: 2, heads_y: 2, rank: 2, n_templates: 3, max_seq_len: 16, mixing, init_std: 0.3, ..ModelConfig::default() }
    }

    #[test]
    fn fold_matches_frozen_run() {
        for (seed, h) in [(0, Mixing::Tanh), (1, Mixing::Softmax)] {
            let model = Cgt::<f64>::new(cfg(h), seed).unwrap();
            let mut rng = stream_rng(seed, Stream::Oracle, 0);
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let suffix = vec![(0..7).map(|_| rng.random_range(0..16)).collect::<Vec<usize>>()];
            let frozen = freeze_and_run(&model, &y, Input::Tokens(&suffix), None).unwrap();
            let folded = fold(&model, &y).unwrap();
            assert!(folded.is_specialized());
            assert!(folded.num_params() < model.num_params());
            let plain = run_plain(&folded, Input::Tokens(&suffix), None).unwrap();
            assert!(frozen.max_abs_diff(&plain) < 1e-10);
        }
    }

    #[test]
    fn zero_bank_fold_is_identity() {
        let mut model = Cgt::<f64>::new(cfg(Mixing::Tanh), 2).unwrap();
        for (name, t) in model.params.iter_mut() {
            if name.ends_with(".L") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let folded = fold(&model, &[0.5, -0.1, 0.2, 0.9]).unwrap();
        for (name, t) in folded.params.iter() {
            assert_eq!(t, model.params.get(name).unwrap(), "{name}");
        }
        let again = fold(&folded, &[0.0; 4]).unwrap();
        assert_eq!(again.params, folded.params);
    }

    #[test]
    fn capture_is_causal() {
        let model = Cgt::<f64>::new(cfg(Mixing::Tanh), 3).unwrap();
        let a = vec![1, 2, 3, 4, 5, 6];
        let mut b = a.clone();
        b[4] = 9;
        let ya = capture_context(&model, Input::Tokens(&[a]), 4).unwrap();
        let yb = capture_context(&model, Input::Tokens(&[b.clone()]), 4).unwrap();
        assert_eq!(ya, yb);
        assert!(capture_context(&model, Input::Tokens(&[b]), 7).is_err());
    }

    #[test]
    fn moving_average_limits() {
        let model = Cgt::<f64>::new(cfg(Mixing::Tanh), 4).unwrap();
        let seq = vec![vec![3, 1, 4, 1, 5, 9, 2, 6]];
        let init = [0.3, -0.2, 0.1, 0.7];
        let dynamic = run_dynamic(&model, Input::Tokens(&seq)).unwrap();
        let one = moving_average_run(&model, &init, 1.0, Input::Tokens(&seq)).unwrap();
        assert!(dynamic.max_abs_diff(&one) < 1e-12);
        let frozen = freeze_and_run(&model, &init, Input::Tokens(&seq), None).unwrap();
        let tiny = moving_average_run(&model, &init, 1e-9, Input::Tokens(&seq)).unwrap();
        assert!(frozen.max_abs_diff(&tiny) < 1e-6);
    }

    #[test]
    fn specialized_checkpoint_carries_provenance() {
        let model = Cgt::<f32>::new(cfg(Mixing::Tanh), 5).unwrap();
        let ck = Checkpoint::from_model(&model, &crate::config::RunConfig::default(), 0);
        let prefix = vec![1, 2, 3, 4, 5];
        let a = specialize_checkpoint(&ck, &prefix, 4, true).unwrap();
        let b = specialize_checkpoint(&ck, &[1, 2, 3, 5, 5], 4, true).unwrap();
        assert!(a.specialized && a.params.num_scalars() < ck.params.num_scalars());
        assert_ne!(a.provenance.as_ref().unwrap().prefix, b.provenance.as_ref().unwrap().prefix);
        let frozen = specialize_checkpoint(&ck, &prefix, 4, false).unwrap();
        assert!(frozen.params.contains("bank.k1.L") && !frozen.params.contains("embed_y.w"));
        assert!(specialize_checkpoint(&ck, &prefix, 6, true).is_err());
    }
}
