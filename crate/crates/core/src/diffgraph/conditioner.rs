//! Feed-forward coupling networks (tanh hidden layers, linear head).
//!
//! Training evaluates them batched with hand-written vector-Jacobian
//! products; [`Conditioner::forward`] is the scalar route used when the whole
//! objective is recorded on one tape.

use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Layout, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Dense {
    weights: Range<usize>,
    bias: Range<usize>,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone)]
pub struct Conditioner {
    in_dim: usize,
    out_dim: usize,
    layers: Vec<Dense>,
}

/// Activations saved by [`Conditioner::forward_batch`]: the input followed
/// by every layer output (the last one is the raw transform parameters).
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub activations: Vec<Array2<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace always holds the input")
    }
}

impl Conditioner {
    /// Registers weight and bias segments under `prefix` in `layout`.
    pub fn register(layout: &mut Layout, prefix: &str, in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let dims: Vec<usize> = std::iter::once(in_dim).chain(hidden.iter().copied()).chain([out_dim]).collect();
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                weights: layout.push(format!("{prefix}.dense{i}.weight"), &[w[0], w[1]]),
                bias: layout.push(format!("{prefix}.dense{i}.bias"), &[w[1]]),
                fan_in: w[0],
                fan_out: w[1],
            })
            .collect();
        Self { in_dim, out_dim, layers }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Hidden layers get `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; the head is zero.
    pub fn init<G: Rng>(&self, values: &mut [f64], rng: &mut G) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                values[layer.weights.clone()].iter_mut().for_each(|v| *v = 0.0);
                values[layer.bias.clone()].iter_mut().for_each(|v| *v = 0.0);
            } else {
                let bound = 1.0 / (layer.fan_in.max(1) as f64).sqrt();
                for v in &mut values[layer.weights.clone()] {
                    *v = rng.gen_range(-bound..bound);
                }
                for v in &mut values[layer.bias.clone()] {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
    }

    /// True when the head is exactly zero, so every input maps to zero output.
    pub fn has_zero_head(&self, params: &[f64]) -> bool {
        let head = self.layers.last().expect("at least one layer");
        params[head.weights.clone()].iter().chain(&params[head.bias.clone()]).all(|v| *v == 0.0)
    }

    fn weights<'a>(&self, layer: &Dense, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((layer.fan_in, layer.fan_out), &params[layer.weights.clone()])
            .expect("segment shape matches layer")
    }

    pub fn forward_batch(&self, params: &[f64], input: Array2<f64>) -> Result<MlpTrace> {
        if input.ncols() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: input.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("non-empty");
            let mut z = prev.dot(&self.weights(layer, params));
            let bias = ArrayView2::from_shape((1, layer.fan_out), &params[layer.bias.clone()]).expect("bias shape");
            z += &bias;
            if i != last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        Ok(MlpTrace { activations })
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input batch.
    pub fn backward_batch(&self, params: &[f64], trace: &MlpTrace, d_out: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut delta = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i != last {
                let h = &trace.activations[i + 1];
                ndarray::Zip::from(&mut delta).and(h).for_each(|d, h| *d *= 1.0 - h * h);
            }
            let input = &trace.activations[i];
            let dw = input.t().dot(&delta);
            for (g, v) in grads[layer.weights.clone()].iter_mut().zip(dw.iter()) {
                *g += v;
            }
            let db = delta.sum_axis(Axis(0));
            for (g, v) in grads[layer.bias.clone()].iter_mut().zip(db.iter()) {
                *g += v;
            }
            delta = delta.dot(&self.weights(layer, params).t());
        }
        delta
    }

    /// Single-input evaluation over any [`Real`].
    pub fn forward<R: Real>(&self, params: &[R], input: &[R]) -> Result<Vec<R>> {
        if input.len() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: input.len() });
        }
        let last = self.layers.len() - 1;
        let mut act = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = &params[layer.weights.clone()];
            let b = &params[layer.bias.clone()];
            let mut next: Vec<R> = b.to_vec();
            for (r, a) in act.iter().enumerate() {
                let row = &w[r * layer.fan_out..(r + 1) * layer.fan_out];
                for (o, wv) in next.iter_mut().zip(row) {
                    *o = *o + *a * *wv;
                }
            }
            if i != last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            act = next;
        }
        Ok(act)
    }
}
