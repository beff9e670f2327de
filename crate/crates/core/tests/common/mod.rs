//! Independent reference implementations used by the test suites: central
//! finite differences and naive loop versions of attention and fusion.

#![allow(dead_code, clippy::needless_range_loop)]

use dast_core::tape::{Tape, Var};
use dast_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * scale)
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Norm-wise relative error `‖a − n‖∞ / max(‖n‖∞, 1e-8)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

/// Reduces an arbitrary output to a scalar through a fixed random weighting,
/// so every output element contributes to the checked gradient.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let n = tape.value(out).numel();
    let mut r = rng(seed);
    let w: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 0.5).collect();
    let w = tape.constant(Tensor::new(shape, w).unwrap());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Compares tape gradients of `f` against central differences for every
/// input. Returns the worst relative error over the inputs.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let scalar = |tape: &mut Tape, vars: &[Var]| -> f64 {
        let out = f(tape, vars).unwrap();
        let loss = project(tape, out, 99);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, out, 99);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
        .collect();

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let mut x = x.clone();
                        if i == which {
                            x.data_mut()[e] += delta;
                        }
                        t.constant(x)
                    })
                    .collect();
                scalar(&mut t, &vars)
            };
            *slot = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic[which], &numeric));
    }
    worst
}

/// Naive `softmax(q kᵀ / √D) v` with explicit loops. `forbidden(i, j)` marks
/// masked pairs.
pub fn brute_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    forbidden: impl Fn(usize, usize) -> bool,
) -> (Tensor, Tensor) {
    let (lq, d) = (q.rows(), q.cols());
    let lk = k.rows();
    let dv = v.cols();
    let mut weights = Tensor::zeros(&[lq, lk]);
    let mut out = Tensor::zeros(&[lq, dv]);
    for i in 0..lq {
        let mut scores = vec![f64::NEG_INFINITY; lk];
        for j in 0..lk {
            if forbidden(i, j) {
                continue;
            }
            let mut s = 0.0;
            for c in 0..d {
                s += q.get(i, c) * k.get(j, c);
            }
            scores[j] = s / (d as f64).sqrt();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..lk {
            weights.set(i, j, exps[j] / total);
        }
        for c in 0..dv {
            let mut acc = 0.0;
            for j in 0..lk {
                acc += weights.get(i, j) * v.get(j, c);
            }
            out.set(i, c, acc);
        }
    }
    (out, weights)
}

pub fn brute_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Per-head projections, loop attention, concatenation and output
/// projection.
pub fn brute_multi_head(
    x_q: &Tensor,
    x_kv: &Tensor,
    heads: &[(Tensor, Tensor, Tensor)],
    wo: &Tensor,
    forbidden: impl Fn(usize, usize) -> bool + Copy,
) -> Tensor {
    let lq = x_q.rows();
    let mut concat: Vec<Vec<f64>> = vec![Vec::new(); lq];
    for (wq, wk, wv) in heads {
        let q = brute_matmul(x_q, wq);
        let k = brute_matmul(x_kv, wk);
        let v = brute_matmul(x_kv, wv);
        let (o, _) = brute_attention(&q, &k, &v, forbidden);
        for (i, row) in concat.iter_mut().enumerate() {
            row.extend_from_slice(o.row(i));
        }
    }
    brute_matmul(&Tensor::from_rows(&concat).unwrap(), wo)
}

/// Central-difference check of every trainable tensor of `model` at
/// `window`. Dropout runs in training mode with a fixed stream when
/// `train_seed` is given. Returns `(parameter name, relative error)` pairs.
pub fn model_grad_check(
    model: &dast_core::DastModel,
    window: &Tensor,
    train_seed: Option<u64>,
) -> Vec<(String, f64)> {
    let run = |m: &dast_core::DastModel, tape: &mut Tape, grads: bool| -> (Var, dast_core::params::Binding) {
        let mut r = rng(train_seed.unwrap_or(0));
        let mut pass = m.begin_pass(tape, train_seed.is_some(), grads, &mut r, false);
        let out = m.forward(&mut pass, window).unwrap();
        (out, pass.binding)
    };
    let mut tape = Tape::new();
    let (out, binding) = run(model, &mut tape, true);
    tape.backward(out).unwrap();

    let mut results = Vec::new();
    let mut probe = model.clone();
    for (pi, param) in model.params().params().iter().enumerate() {
        let analytic = tape
            .grad(binding.vars()[pi])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; param.value.numel()]);
        let mut numeric = vec![0.0; param.value.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let base = param.value.data()[e];
            let mut eval = |x: f64| {
                probe.params_mut().params_mut()[pi].value.data_mut()[e] = x;
                let mut t = Tape::new();
                let (o, _) = run(&probe, &mut t, false);
                t.value(o).data()[0]
            };
            let hi = eval(base + FD_STEP);
            let lo = eval(base - FD_STEP);
            eval(base);
            *slot = (hi - lo) / (2.0 * FD_STEP);
        }
        results.push((param.name.clone(), rel_err(&analytic, &numeric)));
    }
    results
}

pub fn toy_config() -> dast_core::DastConfig {
    dast_core::DastConfig {
        d_model: 8,
        n_encoder_blocks: 1,
        n_decoder_blocks: 1,
        heads: 2,
        window: 6,
        sensor_count: 4,
        stat_rows: 2,
        ffn_dim: 8,
        output_hidden: 8,
        ..dast_core::DastConfig::default()
    }
}
