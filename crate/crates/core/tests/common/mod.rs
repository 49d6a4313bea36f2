#![allow(dead_code)]

use clar::autodiff::{ParamStore, Tape, Var};
use clar::Result;
use rand::seq::index::sample;
use rand::Rng;

/// Minimum cost over every monotone alignment of `a` and `b`, by explicit
/// recursion over the three moves.
pub fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let c = (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            return c;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(go(a, b, i + 1, j));
        }
        if j + 1 < b.len() {
            best = best.min(go(a, b, i, j + 1));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(go(a, b, i + 1, j + 1));
        }
        c + best
    }
    go(a, b, 0, 0)
}

/// Every integer sequence with values in `lo..=hi` and length `len`.
pub fn integer_sequences(len: usize, lo: i32, hi: i32) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (lo..=hi).map(move |v| {
                    let mut s = s.clone();
                    s.push(f64::from(v));
                    s
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Relative error between analytic and numeric derivatives. Pairs where both
/// are below `1e-7` in magnitude are compared on an absolute `1e-9` scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs() / 1e-5
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares backprop gradients of `loss` with central differences (step
/// `h`) on at most `per_param` randomly chosen entries of every parameter.
pub fn gradcheck<M, R: Rng>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    loss: impl Fn(&M, &mut Tape) -> Result<Var>,
    per_param: usize,
    h: f64,
    rng: &mut R,
) -> GradReport {
    store(model).zero_grad();
    let mut tape = Tape::new();
    let l = loss(model, &mut tape).unwrap();
    tape.backward(l, store(model)).unwrap();
    let grads: Vec<Vec<f64>> = store(model).iter().map(|p| p.grad.data().to_vec()).collect();

    let eval = |m: &M| {
        let mut t = Tape::new();
        let v = loss(m, &mut t).unwrap();
        t.value(v).item()
    };
    let mut report = GradReport { checked: 0, max_rel_err: 0.0 };
    for (pi, g) in grads.iter().enumerate() {
        let n = g.len();
        let picks: Vec<usize> = if n <= per_param { (0..n).collect() } else { sample(rng, n, per_param).into_vec() };
        for k in picks {
            let orig = store(model).iter().nth(pi).unwrap().value.data()[k];
            set(store(model), pi, k, orig + h);
            let up = eval(model);
            set(store(model), pi, k, orig - h);
            let down = eval(model);
            set(store(model), pi, k, orig);
            let numeric = (up - down) / (2.0 * h);
            report.max_rel_err = report.max_rel_err.max(rel_err(g[k], numeric));
            report.checked += 1;
        }
    }
    report
}

fn set(store: &mut ParamStore, pi: usize, k: usize, v: f64) {
    store.iter_mut().nth(pi).unwrap().value.data_mut()[k] = v;
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
