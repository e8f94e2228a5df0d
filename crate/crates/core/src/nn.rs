//! Small fully connected networks with hand-written reverse-mode gradients.
//!
//! A [`Network`] is an ordered list of [`Dense`] layers computing
//! `y = act(x W + b)` with `W` stored `inputs x outputs`. Training code calls
//! [`Network::forward_trace`], turns the output into a loss gradient with one
//! of the loss helpers, and feeds it to [`Network::backward`], which returns
//! both the parameter gradients and the gradient with respect to the input so
//! that networks can be chained.

use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{numbered_lines, parse_json_line, write_json_line};
use crate::mathkit::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights and zero biases.
    pub fn glorot<R: rand::Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect();
        Self {
            weights: Matrix::from_vec(inputs, outputs, data).expect("sized"),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (zo, w) in z.iter_mut().zip(self.weights.row(i)) {
                *zo += xi * w;
            }
        }
        z
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` is the input of layer `l`.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Per-layer parameter gradients with the same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Matrix::zeros(l.inputs(), l.outputs())).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.outputs()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Flattened in the same order as [`Network::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.bias.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

impl Network {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("adjacent layer width", pair[0].outputs(), pair[1].inputs())?;
        }
        for l in &layers {
            check_dim("bias length", l.outputs(), l.bias.len())?;
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Parameter("non-finite network parameters".into()));
            }
        }
        Ok(Self { layers })
    }

    /// `sizes` lists the widths from input to output; `activations` has one
    /// entry per layer.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Parameter("network needs at least two positive widths".into()));
        }
        check_dim("activations", sizes.len() - 1, activations.len())?;
        let mut r = rng::rng(seed);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| Dense::glorot(w[0], w[1], a, &mut r))
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.inputs() * l.outputs() + l.outputs()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.pre_activation(&a).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&a);
            let y = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(a);
            pre.push(z);
            a = y;
        }
        Ok(Trace { inputs, pre, output: a })
    }

    /// Accumulate the parameter gradients of a loss whose gradient with
    /// respect to the output is `grad_out` into `grads`, and return the
    /// gradient with respect to the input.
    pub fn backward_into(&self, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
        check_dim("output gradient", self.output_dim(), grad_out.len())?;
        let mut delta = grad_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let out = if li + 1 < self.layers.len() {
                &trace.inputs[li + 1]
            } else {
                &trace.output
            };
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= l.activation.derivative(trace.pre[li][o], out[o]);
            }
            let x = &trace.inputs[li];
            let gw = &mut grads.weights[li];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (g, d) in gw.row_mut(i).iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            for (g, d) in grads.bias[li].iter_mut().zip(&delta) {
                *g += d;
            }
            delta = (0..l.inputs())
                .map(|i| l.weights.row(i).iter().zip(&delta).map(|(w, d)| w * d).sum())
                .collect();
        }
        Ok(delta)
    }

    pub fn backward(&self, trace: &Trace, grad_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut g = Gradients::zeros_like(self);
        let gi = self.backward_into(trace, grad_out, &mut g)?;
        Ok((g, gi))
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.n_params(), values.len())?;
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.inputs() * l.outputs();
            l.weights.as_mut_slice().copy_from_slice(&values[at..at + n]);
            at += n;
            let m = l.outputs();
            l.bias.copy_from_slice(&values[at..at + m]);
            at += m;
        }
        Ok(())
    }

    fn apply_update(&mut self, update: impl Fn(usize, f64) -> f64) {
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weights.as_mut_slice() {
                *w -= update(at, *w);
                at += 1;
            }
            for b in &mut l.bias {
                *b -= update(at, *b);
                at += 1;
            }
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for l in &self.layers {
            write_json_line(
                w,
                &LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                },
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let lines = numbered_lines(reader).collect::<Result<Vec<_>>>()?;
        Self::from_lines(&lines)
    }

    /// Parse layer records given as `(line number, text)` pairs, so several
    /// networks can share one file.
    pub fn from_lines(lines: &[(usize, String)]) -> Result<Self> {
        let mut layers = Vec::new();
        for (no, text) in lines {
            let no = *no;
            let rec: LayerRecord = parse_json_line(no, text)?;
            let bad = |msg: String| Error::Parse { line: no, msg };
            let weights = Matrix::from_vec(rec.inputs, rec.outputs, rec.weights)
                .map_err(|e| bad(e.to_string()))?;
            if rec.bias.len() != rec.outputs {
                return Err(bad(format!("bias has {} entries, expected {}", rec.bias.len(), rec.outputs)));
            }
            layers.push(Dense {
                weights,
                bias: rec.bias,
                activation: rec.activation,
            });
        }
        Self::from_layers(layers)
    }
}

/// One layer per JSON line.
#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn check_step(loss: f64, grads: &Gradients) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("refusing optimizer step on loss {loss}")));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence("refusing optimizer step on non-finite gradients".into()));
    }
    Ok(())
}

/// Plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, net: &mut Network, grads: &Gradients, loss: f64) -> Result<()> {
        check_step(loss, grads)?;
        let flat = grads.flatten();
        net.apply_update(|i, _| self.lr * flat[i]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(net: &Network, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
            t: 0,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients, loss: f64) -> Result<()> {
        check_step(loss, grads)?;
        let g = grads.flatten();
        check_dim("adam state", self.m.len(), g.len())?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..g.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
        }
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (m, v, lr, eps) = (&self.m, &self.v, self.lr, self.eps);
        net.apply_update(|i, _| lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps));
        Ok(())
    }
}

/// Mean squared error over the output; returns (loss, d loss / d y).
pub fn mse(y: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = y
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = a - b;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax cross-entropy against class `label`; returns (loss, d loss / d logits).
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[label].max(1e-300).ln();
    let mut grad = p;
    grad[label] -= 1.0;
    (loss, grad)
}

/// Binary cross-entropy on a raw logit; returns (loss, d loss / d logit).
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    // log(1 + e^z) - label z, written to avoid overflow.
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - label)
}

/// Sum per-chunk results of `f` over `0..n`. Chunks are computed in parallel
/// and combined in index order, so the result does not depend on the number
/// of worker threads.
pub fn reduce_chunks<T, F, A>(n: usize, chunk: usize, f: F, mut add: A) -> Option<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
    A: FnMut(&mut T, T),
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let parts: Vec<T> = starts.par_iter().map(|&s| f(s..(s + chunk).min(n))).collect();
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        add(&mut acc, p);
    }
    Some(acc)
}

/// Shuffled index order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::child(seed, epoch);
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
