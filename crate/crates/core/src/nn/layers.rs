//! Composite building blocks shared by the SER network and the conversion
//! networks: gated conv blocks, bidirectional LSTM, additive attention.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::graph::{Graph, NodeId};
use super::init;
use super::params::{Bound, ParamSet};

/// Add a per-channel bias `b: [C]` to `x` along `channel_axis`.
pub fn bias_add(g: &mut Graph, x: NodeId, b: NodeId, channel_axis: usize) -> NodeId {
    let ndim = g.value(x).ndim();
    let c = g.value(b).len();
    let mut shape = vec![1usize; ndim];
    shape[channel_axis] = c;
    let br = g.reshape(b, &shape);
    g.add(x, br)
}

/// Gated linear unit along `axis`: split in half, `a * sigmoid(b)`.
pub fn glu(g: &mut Graph, x: NodeId, axis: usize) -> NodeId {
    let c = g.value(x).shape()[axis];
    assert_eq!(c % 2, 0, "glu needs an even channel count, got {c}");
    let a = g.slice(x, axis, 0, c / 2);
    let b = g.slice(x, axis, c / 2, c);
    let gate = g.sigmoid(b);
    g.mul(a, gate)
}

/// `y = x · W + b` for 2-d `x: [B, In]`.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let y = g.matmul(x, w);
    bias_add(g, y, b, 1)
}

pub fn register_linear(params: &mut ParamSet, rng: &mut impl Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    params.register(&format!("{prefix}.w"), init::linear_weight(rng, fan_in, fan_out));
    params.register(&format!("{prefix}.b"), init::zeros(&[fan_out]));
}

pub fn linear_by_name(g: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> NodeId {
    let w = bound.node(&format!("{prefix}.w"));
    let b = bound.node(&format!("{prefix}.b"));
    linear(g, x, w, b)
}

// ---- LSTM ------------------------------------------------------------

pub fn register_lstm(params: &mut ParamSet, rng: &mut impl Rng, prefix: &str, input: usize, hidden: usize) {
    for dir in ["fwd", "bwd"] {
        params.register(
            &format!("{prefix}.{dir}.w_ih"),
            init::linear_weight(rng, input, 4 * hidden),
        );
        params.register(
            &format!("{prefix}.{dir}.w_hh"),
            init::linear_weight(rng, hidden, 4 * hidden),
        );
        params.register(&format!("{prefix}.{dir}.b"), init::zeros(&[4 * hidden]));
    }
}

fn lstm_direction(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    dir: &str,
    xs: &[NodeId],
    hidden: usize,
) -> Vec<NodeId> {
    let w_ih = bound.node(&format!("{prefix}.{dir}.w_ih"));
    let w_hh = bound.node(&format!("{prefix}.{dir}.w_hh"));
    let b = bound.node(&format!("{prefix}.{dir}.b"));
    let batch = g.value(xs[0]).shape()[0];
    let mut h = g.leaf(ArrayD::zeros(IxDyn(&[batch, hidden])));
    let mut c = g.leaf(ArrayD::zeros(IxDyn(&[batch, hidden])));
    let mut out = Vec::with_capacity(xs.len());
    let order: Vec<usize> = if dir == "fwd" {
        (0..xs.len()).collect()
    } else {
        (0..xs.len()).rev().collect()
    };
    let mut out_by_t = vec![0usize; xs.len()];
    for &t in &order {
        let zx = g.matmul(xs[t], w_ih);
        let zh = g.matmul(h, w_hh);
        let z = g.add(zx, zh);
        let z = bias_add(g, z, b, 1);
        let i_gate = g.slice(z, 1, 0, hidden);
        let f_gate = g.slice(z, 1, hidden, 2 * hidden);
        let g_gate = g.slice(z, 1, 2 * hidden, 3 * hidden);
        let o_gate = g.slice(z, 1, 3 * hidden, 4 * hidden);
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.sigmoid(f_gate);
        let g_gate = g.tanh(g_gate);
        let o_gate = g.sigmoid(o_gate);
        let fc = g.mul(f_gate, c);
        let ig = g.mul(i_gate, g_gate);
        c = g.add(fc, ig);
        let ct = g.tanh(c);
        h = g.mul(o_gate, ct);
        out_by_t[t] = h;
    }
    for &t in order.iter() {
        out.push(out_by_t[t]);
    }
    if dir == "fwd" {
        out
    } else {
        out.reverse();
        out
    }
}

/// Bidirectional LSTM over per-step inputs `xs[t]: [B, In]`; returns per-step
/// `[B, 2*hidden]` (forward and backward states concatenated).
pub fn lstm_bidirectional(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    xs: &[NodeId],
    hidden: usize,
) -> Vec<NodeId> {
    let fwd = lstm_direction(g, bound, prefix, "fwd", xs, hidden);
    let bwd = lstm_direction(g, bound, prefix, "bwd", xs, hidden);
    fwd.iter()
        .zip(bwd.iter())
        .map(|(&f, &b)| g.concat(1, &[f, b]))
        .collect()
}

// ---- additive attention ------------------------------------------------

pub fn register_attention(params: &mut ParamSet, rng: &mut impl Rng, prefix: &str, input: usize, attn: usize) {
    params.register(&format!("{prefix}.w"), init::linear_weight(rng, input, attn));
    params.register(&format!("{prefix}.b"), init::zeros(&[attn]));
    params.register(&format!("{prefix}.v"), init::linear_weight(rng, attn, 1));
}

/// Additive attention with a single learned query: weights
/// `softmax_t(v^T tanh(W h_t + b))`, output the weighted sum of `hs`.
/// Returns `(pooled [B, H], weights [B, T])`.
pub fn additive_attention(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    hs: &[NodeId],
) -> (NodeId, NodeId) {
    let w = bound.node(&format!("{prefix}.w"));
    let b = bound.node(&format!("{prefix}.b"));
    let v = bound.node(&format!("{prefix}.v"));
    let batch = g.value(hs[0]).shape()[0];
    let hdim = g.value(hs[0]).shape()[1];
    let t_len = hs.len();

    let mut scores = Vec::with_capacity(t_len);
    for &h in hs {
        let proj = g.matmul(h, w);
        let proj = bias_add(g, proj, b, 1);
        let proj = g.tanh(proj);
        scores.push(g.matmul(proj, v)); // [B, 1]
    }
    let score_mat = g.concat(1, &scores); // [B, T]
    let alpha = g.softmax(score_mat, 1);

    let stacked: Vec<NodeId> = hs
        .iter()
        .map(|&h| g.reshape(h, &[batch, 1, hdim]))
        .collect();
    let h_all = g.concat(1, &stacked); // [B, T, H]
    let alpha3 = g.reshape(alpha, &[batch, t_len, 1]);
    let alpha3 = g.broadcast_to(alpha3, &[batch, t_len, hdim]);
    let weighted = g.mul(h_all, alpha3);
    let pooled = g.sum_axis(weighted, 1); // [B, H]
    (pooled, alpha)
}
