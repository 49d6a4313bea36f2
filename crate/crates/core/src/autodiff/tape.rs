use super::{ParamId, ParamStore, Tensor};
use crate::error::{ClarError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    MeanLastAxis(Var),
    L2NormalizeRows(Var),
    LogSumExpRows(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Reshape(Var),
    Conv1d { input: Var, weight: Var, bias: Var, stride: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of executed ops.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shapes(ts: &[&Tensor]) -> String {
    ts.iter().map(|t| format!("{:?}", t.shape())).collect::<Vec<_>>().join(" vs ")
}

/// `out[n,m] += a[n,k] * b[k,m]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        None => *acc = Some(g.to_vec()),
    }
}

fn add_scaled_into(acc: &mut Option<Vec<f64>>, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    let a = acc.get_or_insert_with(|| vec![0.0; g.len()]);
    for (i, (x, &y)) in a.iter_mut().zip(g).enumerate() {
        *x += f(i, y);
    }
}

const NORM_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn out(&mut self, op: Op, shape: &[usize], data: Vec<f64>) -> Var {
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(value, op)
    }

    /// Records a constant (no gradient flows to it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(ClarError::shape("matmul", shapes(&[ta, tb])));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut data, n, k, m);
        Ok(self.out(Op::MatMul(a, b), &[n, m], data))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(ClarError::shape("transpose", shapes(&[ta])));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let data = transpose(ta.data(), r, c);
        Ok(self.out(Op::Transpose(a), &[c, r], data))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(ClarError::shape(name, shapes(&[ta, tb])));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.out(op, &shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a vector of length `last_dim(x)` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tx.rank() == 0 || tx.last_dim() != tb.numel() {
            return Err(ClarError::shape("add_bias", shapes(&[tx, tb])));
        }
        let c = tb.numel();
        let data = tx.data().iter().enumerate().map(|(i, &v)| v + tb.data()[i % c]).collect();
        let shape = tx.shape().to_vec();
        Ok(self.out(Op::AddBias(x, bias), &shape, data))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        self.out(op, &shape, data)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.data().iter().any(|&x| x <= 0.0) {
            return Err(ClarError::invalid("log of a non-positive value"));
        }
        Ok(self.map(a, Op::Log(a), f64::ln))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    fn reduce_last(&mut self, name: &'static str, a: Var, op: Op, mean: bool) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() == 0 {
            return Err(ClarError::shape(name, shapes(&[ta])));
        }
        let c = ta.last_dim();
        let data: Vec<f64> = ta
            .data()
            .chunks(c)
            .map(|r| {
                let s: f64 = r.iter().sum();
                if mean {
                    s / c as f64
                } else {
                    s
                }
            })
            .collect();
        let shape = ta.shape()[..ta.rank() - 1].to_vec();
        Ok(self.out(op, &shape, data))
    }

    pub fn sum_last_axis(&mut self, a: Var) -> Result<Var> {
        self.reduce_last("sum_last_axis", a, Op::SumLastAxis(a), false)
    }

    /// Global average pooling over the last axis.
    pub fn mean_last_axis(&mut self, a: Var) -> Result<Var> {
        self.reduce_last("mean_last_axis", a, Op::MeanLastAxis(a), true)
    }

    /// Scales every row (last axis) to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() == 0 {
            return Err(ClarError::shape("l2_normalize", shapes(&[ta])));
        }
        let c = ta.last_dim();
        let mut data = Vec::with_capacity(ta.numel());
        for r in ta.data().chunks(c) {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            data.extend(r.iter().map(|x| x / n));
        }
        let shape = ta.shape().to_vec();
        Ok(self.out(Op::L2NormalizeRows(a), &shape, data))
    }

    /// Row-wise `log Σ_j exp(x_ij)` of a matrix.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(ClarError::shape("logsumexp_rows", shapes(&[ta])));
        }
        let c = ta.last_dim();
        let data = ta
            .data()
            .chunks(c)
            .map(|r| {
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let n = ta.shape()[0];
        Ok(self.out(Op::LogSumExpRows(a), &[n], data))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let Some(first) = ts.first() else {
            return Err(ClarError::shape("concat", "no operands"));
        };
        let rows = first.shape().first().copied().unwrap_or(0);
        if ts.iter().any(|t| t.rank() != 2 || t.shape()[0] != rows) {
            return Err(ClarError::shape("concat", shapes(&ts)));
        }
        let cols: usize = ts.iter().map(|t| t.shape()[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for t in &ts {
                data.extend_from_slice(t.row(i));
            }
        }
        Ok(self.out(Op::Concat(parts.to_vec()), &[rows, cols], data))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 || start >= end || end > ta.shape()[1] {
            return Err(ClarError::shape("slice", format!("{:?} [{start}, {end})", ta.shape())));
        }
        let rows = ta.shape()[0];
        let mut data = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            data.extend_from_slice(&ta.row(i)[start..end]);
        }
        Ok(self.out(Op::Slice(a, start, end), &[rows, end - start], data))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape).map_err(|_| {
            ClarError::shape("reshape", format!("{:?} -> {shape:?}", self.value(a).shape()))
        })?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Valid (unpadded) 1-D convolution.
    /// `input [B, Cin, L]`, `weight [Cout, Cin, K]`, `bias [Cout]` -> `[B, Cout, (L-K)/stride + 1]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let ok = tx.rank() == 3
            && tw.rank() == 3
            && tb.rank() == 1
            && tx.shape()[1] == tw.shape()[1]
            && tb.numel() == tw.shape()[0]
            && tx.shape()[2] >= tw.shape()[2]
            && stride > 0;
        if !ok {
            return Err(ClarError::shape("conv1d", shapes(&[tx, tw, tb])));
        }
        let (b, cin, l) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (cout, k) = (tw.shape()[0], tw.shape()[2]);
        let lout = (l - k) / stride + 1;
        let (x, w) = (tx.data(), tw.data());
        let mut data = vec![0.0; b * cout * lout];
        for bi in 0..b {
            for o in 0..cout {
                let orow = &mut data[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                orow.iter_mut().for_each(|v| *v = tb.data()[o]);
                for c in 0..cin {
                    let xrow = &x[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                    let wrow = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (p, ov) in orow.iter_mut().enumerate() {
                        let xs = &xrow[p * stride..p * stride + k];
                        *ov += xs.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        Ok(self.out(Op::Conv1d { input, weight, bias, stride }, &[b, cout, lout], data))
    }

    /// Replays the tape in reverse from `loss` and adds `d loss / d param`
    /// into every reached parameter's gradient. A tape can be replayed once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(ClarError::StaleTape);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(ClarError::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    p.grad.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let mut ga = vec![0.0; n * k];
                    matmul_into(&g, &transpose(tb.data(), k, m), &mut ga, n, m, k);
                    let mut gb = vec![0.0; k * m];
                    matmul_into(&transpose(ta.data(), n, k), &g, &mut gb, k, n, m);
                    add_into(&mut grads[a.0], &ga);
                    add_into(&mut grads[b.0], &gb);
                }
                Op::Transpose(a) => {
                    let (r, c) = (val.shape()[0], val.shape()[1]);
                    add_into(&mut grads[a.0], &transpose(&g, r, c));
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    add_into(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[a.0], &g);
                    add_scaled_into(&mut grads[b.0], &g, |_, y| -y);
                }
                Op::Mul(a, b) => {
                    let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    add_scaled_into(&mut grads[a.0], &g, |i, y| y * db[i]);
                    add_scaled_into(&mut grads[b.0], &g, |i, y| y * da[i]);
                }
                Op::AddBias(x, bias) => {
                    add_into(&mut grads[x.0], &g);
                    let c = self.nodes[bias.0].value.numel();
                    let mut gb = vec![0.0; c];
                    for (i, y) in g.iter().enumerate() {
                        gb[i % c] += y;
                    }
                    add_into(&mut grads[bias.0], &gb);
                }
                Op::Scale(a, c) => add_scaled_into(&mut grads[a.0], &g, |_, y| y * c),
                Op::Relu(a) => {
                    let x = self.nodes[a.0].value.data();
                    add_scaled_into(&mut grads[a.0], &g, |i, y| if x[i] > 0.0 { y } else { 0.0 });
                }
                Op::Tanh(a) => {
                    let t = val.data();
                    add_scaled_into(&mut grads[a.0], &g, |i, y| y * (1.0 - t[i] * t[i]));
                }
                Op::Exp(a) => {
                    let e = val.data();
                    add_scaled_into(&mut grads[a.0], &g, |i, y| y * e[i]);
                }
                Op::Log(a) => {
                    let x = self.nodes[a.0].value.data();
                    add_scaled_into(&mut grads[a.0], &g, |i, y| y / x[i]);
                }
                Op::Sum(a) => {
                    let n = self.nodes[a.0].value.numel();
                    add_into(&mut grads[a.0], &vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.numel();
                    add_into(&mut grads[a.0], &vec![g[0] / n as f64; n]);
                }
                Op::SumLastAxis(a) | Op::MeanLastAxis(a) => {
                    let ta = &self.nodes[a.0].value;
                    let c = ta.last_dim();
                    let f = if matches!(node.op, Op::MeanLastAxis(_)) { 1.0 / c as f64 } else { 1.0 };
                    add_scaled_into(&mut grads[a.0], &vec![0.0; ta.numel()], |i, _| g[i / c] * f);
                }
                Op::L2NormalizeRows(a) => {
                    let x = self.nodes[a.0].value.data();
                    let c = val.last_dim();
                    let y = val.data();
                    let mut gx = vec![0.0; x.len()];
                    for r in 0..x.len() / c {
                        let s = r * c..(r + 1) * c;
                        let n = x[s.clone()].iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
                        let dot: f64 = y[s.clone()].iter().zip(&g[s.clone()]).map(|(a, b)| a * b).sum();
                        for i in s {
                            gx[i] = (g[i] - y[i] * dot) / n;
                        }
                    }
                    add_into(&mut grads[a.0], &gx);
                }
                Op::LogSumExpRows(a) => {
                    let x = self.nodes[a.0].value.data();
                    let c = self.nodes[a.0].value.last_dim();
                    let lse = val.data();
                    add_scaled_into(&mut grads[a.0], &vec![0.0; x.len()], |i, _| {
                        g[i / c] * (x[i] - lse[i / c]).exp()
                    });
                }
                Op::Concat(parts) => {
                    let rows = val.shape()[0];
                    let cols = val.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.shape()[1];
                        let mut gp = Vec::with_capacity(rows * pc);
                        for i in 0..rows {
                            gp.extend_from_slice(&g[i * cols + offset..i * cols + offset + pc]);
                        }
                        add_into(&mut grads[p.0], &gp);
                        offset += pc;
                    }
                }
                Op::Slice(a, start, end) => {
                    let ta = &self.nodes[a.0].value;
                    let (rows, cols) = (ta.shape()[0], ta.shape()[1]);
                    let w = end - start;
                    let mut ga = vec![0.0; rows * cols];
                    for i in 0..rows {
                        ga[i * cols + start..i * cols + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    add_into(&mut grads[a.0], &ga);
                }
                Op::Reshape(a) => add_into(&mut grads[a.0], &g),
                Op::Conv1d { input, weight, bias, stride } => {
                    let (tx, tw) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
                    let (b, cin, l) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                    let (cout, k) = (tw.shape()[0], tw.shape()[2]);
                    let lout = val.shape()[2];
                    let (x, w) = (tx.data(), tw.data());
                    let mut gx = vec![0.0; x.len()];
                    let mut gw = vec![0.0; w.len()];
                    let mut gb = vec![0.0; cout];
                    for bi in 0..b {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                            gb[o] += grow.iter().sum::<f64>();
                            for c in 0..cin {
                                let xoff = (bi * cin + c) * l;
                                let woff = (o * cin + c) * k;
                                for (p, &gv) in grow.iter().enumerate() {
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    let base = xoff + p * stride;
                                    for j in 0..k {
                                        gx[base + j] += gv * w[woff + j];
                                        gw[woff + j] += gv * x[base + j];
                                    }
                                }
                            }
                        }
                    }
                    add_into(&mut grads[input.0], &gx);
                    add_into(&mut grads[weight.0], &gw);
                    add_into(&mut grads[bias.0], &gb);
                }
            }
        }
        Ok(())
    }
}
