//! Layer primitives: embedding lookup, recurrent cell steps, 1-D
//! convolution, masked pooling, dense layers, softmax, cross-entropy.
//!
//! Forward functions here are pure; the model module composes them and
//! owns the caches that backward passes consume.

use super::tensor::{Scalar, Tensor};

/// Floor applied to probabilities inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// y = W·x + b for row-major W [rows × cols].
pub fn affine<T: Scalar>(w: &Tensor<T>, x: &[T], b: &[T]) -> Vec<T> {
    let rows = w.shape()[0];
    let cols = w.shape()[1];
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, b.len());
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = w.row(r);
        let mut acc = b[r];
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y.push(acc);
    }
    y
}

/// Accumulate W^T·d into `out` (gradient flowing back through an affine map).
pub fn affine_backprop_input<T: Scalar>(w: &Tensor<T>, d: &[T], out: &mut [T]) {
    let rows = w.shape()[0];
    let cols = w.shape()[1];
    debug_assert_eq!(rows, d.len());
    debug_assert_eq!(cols, out.len());
    for r in 0..rows {
        let row = w.row(r);
        let dr = d[r];
        for c in 0..cols {
            out[c] += row[c] * dr;
        }
    }
}

/// Accumulate the outer product d ⊗ x into the weight gradient.
pub fn accumulate_outer<T: Scalar>(grad_w: &mut Tensor<T>, d: &[T], x: &[T]) {
    let rows = grad_w.shape()[0];
    let cols = grad_w.shape()[1];
    debug_assert_eq!(rows, d.len());
    debug_assert_eq!(cols, x.len());
    for r in 0..rows {
        let row = grad_w.row_mut(r);
        let dr = d[r];
        for c in 0..cols {
            row[c] += dr * x[c];
        }
    }
}

/// Look up each sequence id in the embedding matrix.
///
/// Row t of the result is E[ids[t]]; PAD(0) rows participate like any
/// other id and are masked downstream. Ids must be < vocab rows.
pub fn embedding_forward<T: Scalar>(ids: &[u32], embedding: &Tensor<T>) -> Tensor<T> {
    let vocab = embedding.shape()[0];
    let dim = embedding.shape()[1];
    let mut data = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        assert!(
            (id as usize) < vocab,
            "sequence id {} out of range for vocabulary of {}",
            id,
            vocab
        );
        data.extend_from_slice(embedding.row(id as usize));
    }
    Tensor::from_vec(&[ids.len(), dim], data)
}

/// Scatter embedded-row gradients back into the embedding gradient.
pub fn embedding_backward<T: Scalar>(
    ids: &[u32],
    grad_embedded: &Tensor<T>,
    grad_embedding: &mut Tensor<T>,
) {
    let dim = grad_embedding.shape()[1];
    for (t, &id) in ids.iter().enumerate() {
        let src = grad_embedded.row(t);
        let dst = grad_embedding.row_mut(id as usize);
        for d in 0..dim {
            dst[d] += src[d];
        }
    }
}

/// One simple-RNN step: h_t = ReLU(W·x_t + U·h_prev + b).
pub fn srnn_step<T: Scalar>(
    x_t: &[T],
    h_prev: &[T],
    w: &Tensor<T>,
    u: &Tensor<T>,
    b: &[T],
) -> Vec<T> {
    let mut a = affine(w, x_t, b);
    let rec = affine(u, h_prev, &vec![T::zero(); a.len()]);
    for (ai, ri) in a.iter_mut().zip(rec) {
        *ai += ri;
        *ai = relu(*ai);
    }
    a
}

/// Activations of the four LSTM gates at one step, pre-gating.
#[derive(Clone, Debug)]
pub struct LstmGates<T> {
    pub input: Vec<T>,
    pub forget: Vec<T>,
    pub output: Vec<T>,
    pub cell: Vec<T>,
}

/// Weights for one gate: W [hidden × input], U [hidden × hidden], b [hidden].
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams<T> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub input: GateParams<T>,
    pub forget: GateParams<T>,
    pub output: GateParams<T>,
    pub cell: GateParams<T>,
}

fn gate_preact<T: Scalar>(g: &GateParams<T>, x_t: &[T], h_prev: &[T]) -> Vec<T> {
    let mut a = affine(&g.w, x_t, g.b.data());
    let rec = affine(&g.u, h_prev, &vec![T::zero(); a.len()]);
    for (ai, ri) in a.iter_mut().zip(rec) {
        *ai += ri;
    }
    a
}

/// One LSTM step with the standard gating:
/// i = σ(·), f = σ(·), o = σ(·), g = tanh(·),
/// c_t = f⊙c_prev + i⊙g, h_t = o⊙tanh(c_t).
///
/// Returns (h_t, c_t, gate activations); the gates feed backward.
pub fn lstm_step<T: Scalar>(
    x_t: &[T],
    h_prev: &[T],
    c_prev: &[T],
    params: &LstmParams<T>,
) -> (Vec<T>, Vec<T>, LstmGates<T>) {
    let i: Vec<T> = gate_preact(&params.input, x_t, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let f: Vec<T> = gate_preact(&params.forget, x_t, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let o: Vec<T> = gate_preact(&params.output, x_t, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let g: Vec<T> = gate_preact(&params.cell, x_t, h_prev)
        .into_iter()
        .map(|v| v.tanh())
        .collect();

    let hidden = i.len();
    let mut c_t = Vec::with_capacity(hidden);
    let mut h_t = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let c = f[k] * c_prev[k] + i[k] * g[k];
        c_t.push(c);
        h_t.push(o[k] * c.tanh());
    }
    (
        h_t,
        c_t,
        LstmGates {
            input: i,
            forget: f,
            output: o,
            cell: g,
        },
    )
}

/// Same-padded 1-D convolution over the time axis with ReLU.
///
/// `filters` has shape [num_filters × kernel_width × embed_dim]; output
/// position t of filter f reads input rows t+k−(kw−1)/2 with zeros
/// outside [0, len).
pub fn conv1d_forward<T: Scalar>(
    embedded: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &[T],
) -> Tensor<T> {
    let len = embedded.shape()[0];
    let dim = embedded.shape()[1];
    let num_filters = filters.shape()[0];
    let kw = filters.shape()[1];
    debug_assert_eq!(filters.shape()[2], dim);
    debug_assert_eq!(bias.len(), num_filters);
    let half = (kw - 1) / 2;

    let mut out = Tensor::zeros(&[len, num_filters]);
    for t in 0..len {
        for f in 0..num_filters {
            let mut acc = bias[f];
            for k in 0..kw {
                let src = t + k;
                if src < half || src - half >= len {
                    continue;
                }
                let row = embedded.row(src - half);
                for d in 0..dim {
                    acc += filters.at3(f, k, d) * row[d];
                }
            }
            out.row_mut(t)[f] = relu(acc);
        }
    }
    out
}

/// Per-filter max over positions t < true_length only; also returns the
/// winning position per filter (first max) for the backward pass.
pub fn masked_global_max_pool<T: Scalar>(
    features: &Tensor<T>,
    true_length: usize,
) -> (Vec<T>, Vec<usize>) {
    assert!(true_length >= 1, "masked max pool needs true_length >= 1");
    let len = features.shape()[0];
    let num_filters = features.shape()[1];
    let upto = true_length.min(len);
    let mut best = features.row(0).to_vec();
    let mut argmax = vec![0usize; num_filters];
    for t in 1..upto {
        let row = features.row(t);
        for f in 0..num_filters {
            if row[f] > best[f] {
                best[f] = row[f];
                argmax[f] = t;
            }
        }
    }
    (best, argmax)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Dense layer: activation(W·x + b).
pub fn dense_forward<T: Scalar>(
    x: &[T],
    w: &Tensor<T>,
    b: &[T],
    activation: Activation,
) -> Vec<T> {
    let mut y = affine(w, x, b);
    if activation == Activation::Relu {
        for v in &mut y {
            *v = relu(*v);
        }
    }
    y
}

/// Numerically stable softmax: subtracts the max logit before exponentiating.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .cloned()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Multi-class cross-entropy: −Σ_k y_k · log(max(p_k, 1e-12)).
pub fn cross_entropy<T: Scalar>(probs: &[T], one_hot: &[T]) -> T {
    let floor = T::of_f64(PROB_FLOOR);
    probs
        .iter()
        .zip(one_hot)
        .map(|(&p, &y)| -y * p.max(floor).ln())
        .sum()
}

/// Gradient of the fused softmax + cross-entropy with respect to the
/// logits: p − y.
pub fn softmax_cross_entropy_grad<T: Scalar>(probs: &[T], one_hot: &[T]) -> Vec<T> {
    probs.iter().zip(one_hot).map(|(&p, &y)| p - y).collect()
}

/// Smallest index attaining the maximum probability.
pub fn predict_class<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best
}
