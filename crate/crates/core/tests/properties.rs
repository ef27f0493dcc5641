//! Property tests for the objectives, priors, datasets and analysis.

use cgt_core::analysis::{answer_accuracy, dot_product_matrix, representation_variation, EvalMode, Segment};
use cgt_core::config::{ModelConfig, Zeta};
use cgt_core::datasets::icl::{self, IclSpec};
use cgt_core::datasets::vocab::{byte_decode, byte_encode, icl_decode, icl_encode};
use cgt_core::gp::{build_kernel, cholesky, KernelSpec};
use cgt_core::model::{Cgt, Input};
use cgt_core::objectives::{aux_with_splits, reg_continuity, reg_orthogonality, vae_kl_term, Batch};
use cgt_core::specialize::{context_trace, freeze_and_run};
use cgt_tensor::{stream_rng, Graph, Stream, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn trace(seed: u64, b: usize, n: usize, d: usize) -> Tensor<f64> {
    Tensor::uniform(&[b, n, d], -1.0, 1.0, &mut stream_rng(seed, Stream::Oracle, 20))
}

fn eval(f: impl FnOnce(&mut Graph<f64>) -> cgt_tensor::Var) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.value(v).item()
}

fn zeta_strategy() -> impl Strategy<Value = Zeta> {
    prop_oneof![Just(Zeta::Constant), Just(Zeta::Linear), Just(Zeta::Quadratic), (1usize..4).prop_map(Zeta::LastK)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn continuity_ignores_positive_rescaling(seed in any::<u64>(), b in 1usize..4, n in 2usize..8, d in 1usize..6, zeta in zeta_strategy()) {
        let y = trace(seed, b, n, d);
        let mut rng = stream_rng(seed, Stream::Oracle, 21);
        let mut scaled = y.clone();
        for row in scaled.data_mut().chunks_mut(d) {
            let c: f64 = rng.random_range(1e-3..1e3);
            row.iter_mut().for_each(|v| *v *= c);
        }
        let rc = |t: &Tensor<f64>| eval(|g| { let v = g.constant(t.clone()); reg_continuity(g, v, zeta).unwrap() });
        let (a, b) = (rc(&y), rc(&scaled));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn orthogonality_is_nonnegative(seed in any::<u64>(), b in 2usize..5, n in 1usize..8, d in 1usize..6, zeta in zeta_strategy()) {
        let y = trace(seed, b, n, d);
        let rd = eval(|g| { let v = g.constant(y.clone()); reg_orthogonality(g, v, zeta).unwrap().unwrap() });
        prop_assert!(rd >= 0.0);
    }

    #[test]
    fn kl_is_minimized_at_inverse_diagonal(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = stream_rng(seed, Stream::Oracle, 22);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let k = &a * a.transpose() + DMatrix::identity(n, n) * 0.3;
        let kernel = build_kernel(&KernelSpec::Custom(k.as_slice().to_vec()), n).unwrap();
        let mu = Tensor::<f64>::uniform(&[1, n, 1], -1.0, 1.0, &mut rng);
        let best: Vec<f64> = (0..n).map(|s| 1.0 / kernel.inv[s * n + s]).collect();
        let kl = |var: &[f64]| {
            let sigma = Tensor::from_f64(&[1, n, 1], &var.iter().map(|v| v.sqrt()).collect::<Vec<_>>()).unwrap();
            eval(|g| {
                let (m, s) = (g.constant(mu.clone()), g.constant(sigma));
                vae_kl_term(g, m, s, &kernel.inv, 1.0).unwrap()
            })
        };
        let at_best = kl(&best);
        for s in 0..n {
            let mut prev = f64::NEG_INFINITY;
            let mut values = Vec::new();
            for f in [0.5, 0.8, 0.95, 1.05, 1.25, 2.0] {
                let mut v = best.clone();
                v[s] *= f;
                let val = kl(&v);
                prop_assert!(val > at_best, "coordinate {s} factor {f}");
                values.push((v[s], val));
            }
            // convexity in σ²: secant slopes increase
            for w in values.windows(2) {
                let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                prop_assert!(slope >= prev - 1e-12);
                prev = slope;
            }
        }
    }

    #[test]
    fn kernels_are_symmetric_and_positive_definite(n in 1usize..40, nu in 1e-3f64..0.9, lambda in 0.01f64..2.0, eps in 0.0f64..3.0) {
        for spec in [KernelSpec::RbfMix { nu, lambda_frac: lambda }, KernelSpec::FewShot { epsilon: eps }] {
            let k = build_kernel(&spec, n).unwrap();
            for s in 0..n {
                for t in 0..n {
                    prop_assert_eq!(k.at(s, t), k.at(t, s));
                }
            }
            prop_assert!(cholesky(&k.k, n).is_ok());
        }
    }

    #[test]
    fn variation_ignores_affine_maps(seed in any::<u64>(), c in 1e-2f64..1e2, shift in -5.0f64..5.0) {
        let rows: Vec<Vec<f64>> = trace(seed, 1, 20, 4).data().chunks(4).map(<[f64]>::to_vec).collect();
        let mapped: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().enumerate().map(|(i, v)| c * v + shift * (i as f64 - 1.5)).collect()).collect();
        let (a, b) = (representation_variation(&rows, 0..10, 10..20), representation_variation(&mapped, 0..10, 10..20));
        prop_assert!((a - b).abs() < 1e-10 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn dot_products_are_cosines(seed in any::<u64>(), n in 1usize..12, d in 1usize..6) {
        let mut rows: Vec<Vec<f64>> = trace(seed, 1, n, d).data().chunks(d).map(<[f64]>::to_vec).collect();
        rows[0].iter_mut().for_each(|v| *v = 0.0);
        for v in dot_product_matrix(&rows) {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn generated_sequences_round_trip(seed in any::<u64>(), n_tasks in 1usize..4, n_ex in 2usize..5, digits in 1usize..4) {
        let spec = IclSpec { n_tasks, n_ex, digits };
        let seq = icl::generate(&spec, &mut stream_rng(seed, Stream::Data, 0));
        prop_assert_eq!(seq.tokens.len(), spec.seq_len());
        let text = icl_decode(&seq.tokens).unwrap();
        prop_assert_eq!(icl_encode(&text).unwrap(), seq.tokens.clone());
        let parsed = icl::parse(&seq.tokens, digits).unwrap();
        for (task, p) in seq.tasks.iter().zip(&parsed) {
            for (ex, &(a_num, b_num, c)) in task.examples.iter().zip(p) {
                prop_assert_eq!((ex.a_num, ex.b_num, ex.c), (a_num, b_num, c));
                prop_assert_eq!(c, icl::truncated_combination(task.a, task.b, a_num, b_num));
            }
        }
    }

    #[test]
    fn bytes_round_trip(text in proptest::collection::vec(any::<u8>(), 0..64)) {
        prop_assert_eq!(byte_decode(&byte_encode(&text)).unwrap(), text);
    }
}

/// Grid search for `(a, b)` minimizing the worst truncation residual of a
/// task's examples; a solvable task admits a point within the bound.
#[test]
fn tasks_are_solvable_from_their_examples() {
    let spec = IclSpec { n_tasks: 2, n_ex: 4, digits: 2 };
    for i in 0..20 {
        let seq = icl::generate(&spec, &mut stream_rng(3, Stream::Data, i));
        for task in &seq.tasks {
            let worst = |a: f64, b: f64| {
                task.examples.iter().map(|e| (a * e.a_num as f64 + b * e.b_num as f64 - e.c as f64).abs()).fold(0.0, f64::max)
            };
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for ia in 0..1000 {
                for ib in -1000..1000 {
                    let (a, b) = (ia as f64 * 0.01, ib as f64 * 0.01);
                    let w = worst(a, b);
                    if w < best.0 {
                        best = (w, a, b);
                    }
                }
            }
            // grid spacing adds at most 0.01·(A + B) to the residual
            assert!(best.0 <= 1.0 + 0.01 * 2.0 * 99.0, "task residual {}", best.0);
            assert!(worst(task.a, task.b) < 1.0);
            let c = task.examples[0].c as f64;
            let v = task.a * task.examples[0].a_num as f64 + task.b * task.examples[0].b_num as f64;
            assert!(v.abs() >= c.abs() && (v - c).abs() < 1.0, "truncation is toward zero");
        }
    }
}

/// Eigenvectors of the smooth prior oscillate more as their eigenvalue drops.
#[test]
fn smooth_prior_orders_modes_by_oscillation() {
    let n = 32;
    let kernel = build_kernel(&KernelSpec::RbfMix { nu: 1e-3, lambda_frac: 0.1 }, n).unwrap();
    let k = DMatrix::from_row_slice(n, n, &kernel.k);
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues.max();
    let changes: Vec<usize> = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-2 * top)
        .map(|&i| {
            let v = eig.eigenvectors.column(i);
            let signs: Vec<f64> = v.iter().copied().filter(|x| x.abs() > 1e-9).collect();
            signs.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
        })
        .collect();
    assert!(changes.len() >= 4);
    assert!(changes.windows(2).all(|w| w[0] <= w[1]), "{changes:?}");
}

fn tiny_model() -> Cgt<f64> {
    let cfg = ModelConfig {
        n_layers: 3,
        readout_layer: 1,
        dim_x: 16,
        dim_y: 8,
        heads_x: 2,
        heads_y: 2,
        rank: 2,
        n_templates: 4,
        max_seq_len: 40,
        init_std: 0.3,
        ..ModelConfig::default()
    };
    Cgt::new(cfg, 9).unwrap()
}

/// The earliest split equals next-token cross entropy of the frozen suffix,
/// computed here from raw logits.
#[test]
fn earliest_split_is_suffix_cross_entropy() {
    let m = tiny_model();
    let mut rng = stream_rng(1, Stream::Oracle, 23);
    let seq: Vec<usize> = (0..12).map(|_| rng.random_range(0..16)).collect();
    let batch = Batch::<f64>::Tokens(vec![seq.clone()]);
    let mut g = Graph::new();
    let out = m.forward(&mut g, batch.input(), Default::default()).unwrap();
    let y = out.y_computed.unwrap();
    let aux = aux_with_splits(&mut g, &m, &batch, y, &[0], &[2], None, true).unwrap();
    let got = g.value(aux).item();

    let y0: Vec<f64> = context_trace(&m, Input::Tokens(&[seq.clone()])).unwrap().row(0).to_vec();
    let suffix = vec![seq[1..].to_vec()];
    let logits = freeze_and_run(&m, &y0, Input::Tokens(&suffix), None).unwrap();
    let v = m.cfg.vocab_size;
    let want: f64 = (0..suffix[0].len() - 1)
        .map(|t| {
            let row = &logits.data()[t * v..(t + 1) * v];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
            lse - row[suffix[0][t + 1]]
        })
        .sum::<f64>()
        / (suffix[0].len() - 1) as f64;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn folded_accuracy_equals_frozen_accuracy() {
    let spec = IclSpec { n_tasks: 1, n_ex: 4, digits: 1 };
    let seqs: Vec<_> = (0..24).map(|i| icl::generate(&spec, &mut stream_rng(4, Stream::Data, i))).collect();
    let m = tiny_model();
    let frozen = answer_accuracy(&m, &seqs, EvalMode::Frozen).unwrap().get(Segment::E2).unwrap();
    let folded = answer_accuracy(&m, &seqs, EvalMode::Folded).unwrap().get(Segment::E2).unwrap();
    assert_eq!(frozen.tokens, folded.tokens);
    assert_eq!((frozen.correct, frozen.tokens_correct), (folded.correct, folded.tokens_correct));
}
