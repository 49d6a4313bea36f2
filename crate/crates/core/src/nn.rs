//! Layer helpers shared by the noise predictor, encoder and probe.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::normal_vec;

/// Dense layer `y = x W + b` with `W: [fan_in, fan_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = normal_vec(rng, fan_in * fan_out).into_iter().map(|x| x * std).collect();
        let weight = store.add(format!("{name}.weight"), Tensor::new(&[fan_in, fan_out], w).expect("shape"));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    }

    /// Tape-free forward of `rows` stacked inputs.
    pub fn infer(&self, store: &ParamStore, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.fan_in);
        let w = store.get(self.weight).value.data();
        let b = store.get(self.bias).value.data();
        let mut out = Vec::with_capacity(rows * self.fan_out);
        for r in 0..rows {
            let mut acc = b.to_vec();
            for (i, &xv) in x[r * self.fan_in..(r + 1) * self.fan_in].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w[i * self.fan_out..(i + 1) * self.fan_out];
                acc.iter_mut().zip(wrow).for_each(|(a, &wv)| *a += xv * wv);
            }
            out.extend(acc);
        }
        out
    }
}

/// Valid 1-D convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let n = out_channels * in_channels * kernel;
        let std = (2.0 / (in_channels * kernel) as f64).sqrt();
        let w: Vec<f64> = normal_vec(rng, n).into_iter().map(|x| x * std).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(&[out_channels, in_channels, kernel], w).expect("shape"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self { weight, bias, in_channels, out_channels, kernel, stride }
    }

    pub fn output_len(&self, len: usize) -> usize {
        (len - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv1d(x, w, b, self.stride)
    }
}
