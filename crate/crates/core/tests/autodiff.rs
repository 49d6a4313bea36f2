mod common;

use clar::autodiff::{read_checkpoint, write_checkpoint, Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use clar::rng::{normal_vec, seeded};
use clar::Result;
use common::gradcheck;

/// A store of named random tensors used as the parameters of one op test.
struct Params(ParamStore);

fn params(shapes: &[(&str, &[usize])], seed: u64) -> Params {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    for (name, shape) in shapes {
        let n = shape.iter().product();
        store.add(*name, Tensor::new(shape, normal_vec(&mut rng, n)).unwrap());
    }
    Params(store)
}

fn store(p: &mut Params) -> &mut ParamStore {
    &mut p.0
}

fn p(tape: &mut Tape, ps: &Params, name: &str) -> Var {
    tape.param(&ps.0, ps.0.find(name).unwrap())
}

/// Reduces any tensor to a scalar with a fixed, non-symmetric weighting so
/// that every output entry contributes a distinct gradient.
fn probe_sum(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * ((i * 7) % 11) as f64).collect();
    let w = tape.input(Tensor::new(&shape, w)?);
    let prod = tape.mul(v, w)?;
    Ok(tape.sum(prod))
}

fn check(mut ps: Params, f: impl Fn(&Params, &mut Tape) -> Result<Var>) {
    let report = gradcheck(&mut ps, store, |m, t| f(m, t).and_then(|v| probe_sum(t, v)), 500, 1e-5, &mut seeded(99));
    assert!(report.checked > 0);
    assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
}

#[test]
fn gradcheck_matmul_transpose_bias() {
    check(params(&[("a", &[3, 4]), ("b", &[4, 2]), ("c", &[2])], 1), |ps, t| {
        let (a, b, c) = (p(t, ps, "a"), p(t, ps, "b"), p(t, ps, "c"));
        let ab = t.matmul(a, b)?;
        let abt = t.transpose(ab)?;
        let back = t.transpose(abt)?;
        t.add_bias(back, c)
    });
}

#[test]
fn gradcheck_elementwise() {
    check(params(&[("a", &[2, 5]), ("b", &[2, 5])], 2), |ps, t| {
        let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
        let s = t.add(a, b)?;
        let d = t.sub(a, b)?;
        let m = t.mul(s, d)?;
        let th = t.tanh(m);
        let e = t.exp(th);
        let sc = t.scale(e, -1.5);
        let r = t.relu(a);
        let sq = t.mul(b, b)?;
        let one = t.input(Tensor::new(&[2, 5], vec![1.0; 10])?);
        let pos = t.add(sq, one)?;
        let lg = t.log(pos)?;
        let x = t.add(sc, r)?;
        t.add(x, lg)
    });
}

#[test]
fn gradcheck_reductions() {
    check(params(&[("a", &[3, 4])], 3), |ps, t| {
        let a = p(t, ps, "a");
        let s = t.sum_last_axis(a)?;
        let m = t.mean_last_axis(a)?;
        let lse = t.logsumexp_rows(a)?;
        let x = t.add(s, m)?;
        let x = t.add(x, lse)?;
        let tot = t.sum(a);
        let avg = t.mean(a);
        let x = t.reshape(x, &[1, 3])?;
        let tot = t.reshape(tot, &[1, 1])?;
        let avg = t.reshape(avg, &[1, 1])?;
        t.concat(&[x, tot, avg])
    });
}

#[test]
fn gradcheck_normalize_concat_slice_reshape() {
    check(params(&[("a", &[3, 4]), ("b", &[3, 2])], 4), |ps, t| {
        let (a, b) = (p(t, ps, "a"), p(t, ps, "b"));
        let n = t.l2_normalize(a)?;
        let c = t.concat(&[n, b])?;
        let flat = t.reshape(c, &[1, 18])?;
        let s = t.slice(flat, 2, 15)?;
        Ok(t.tanh(s))
    });
}

#[test]
fn gradcheck_conv1d_strided() {
    check(params(&[("x", &[2, 3, 11]), ("w", &[4, 3, 5]), ("b", &[4])], 5), |ps, t| {
        let (x, w, b) = (p(t, ps, "x"), p(t, ps, "w"), p(t, ps, "b"));
        t.conv1d(x, w, b, 2)
    });
}

#[test]
fn adam_first_step_and_parabola() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(0.0));
    let mut adam = Adam::new(AdamConfig::with_lr(0.1)).unwrap();
    let mut first = None;
    for _ in 0..100 {
        store.zero_grad();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let three = tape.input(Tensor::scalar(3.0));
        let d = tape.sub(w, three).unwrap();
        let sq = tape.mul(d, d).unwrap();
        tape.backward(sq, &mut store).unwrap();
        adam.step(&mut store);
        first.get_or_insert(store.get(id).value.item());
    }
    assert!((first.unwrap() - 0.1).abs() < 1e-6, "first step moved to {}", first.unwrap());
    assert!((store.get(id).value.item() - 3.0).abs() < 3.0);
    assert_eq!(adam.steps_taken(), 100);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let mut ps = params(&[("a", &[4, 3]), ("b", &[3])], 11);
        let mut adam = Adam::new(AdamConfig::with_lr(0.01)).unwrap();
        let x = Tensor::new(&[5, 4], normal_vec(&mut seeded(12), 20)).unwrap();
        for _ in 0..25 {
            ps.0.zero_grad();
            let mut t = Tape::new();
            let xi = t.input(x.clone());
            let (a, b) = (p(&mut t, &ps, "a"), p(&mut t, &ps, "b"));
            let h = t.matmul(xi, a).unwrap();
            let h = t.add_bias(h, b).unwrap();
            let h = t.tanh(h);
            let l = t.logsumexp_rows(h).unwrap();
            let l = t.mean(l);
            t.backward(l, &mut ps.0).unwrap();
            adam.step(&mut ps.0);
        }
        ps.0.records()
    };
    let (r1, r2) = (run(), run());
    for ((n1, t1), (n2, t2)) in r1.iter().zip(&r2) {
        assert_eq!(n1, n2);
        let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ps = params(&[("enc.w", &[3, 2, 4]), ("enc.b", &[4]), ("s", &[])], 21);
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &ps.0.records()).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, ps.0.records());
    let mut fresh = params(&[("enc.w", &[3, 2, 4]), ("enc.b", &[4]), ("s", &[])], 22);
    fresh.0.load_records(&back).unwrap();
    assert_eq!(fresh.0.records(), ps.0.records());
    let mut wrong = params(&[("enc.w", &[3, 2, 5])], 23);
    assert!(wrong.0.load_records(&back).is_err());
}
