//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every builder method evaluates its result eagerly, pushes one node onto
//! the tape, and returns a [`NodeId`]. [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients for every node that contributed to the
//! loss. Parents always precede children, so a single reverse sweep suffices.
//!
//! The engine is single-threaded and allocation-order deterministic: two runs
//! that build the same graph from the same inputs produce bitwise-identical
//! values and gradients.

use ndarray::{ArrayD, ArrayViewD, Axis, Dimension, Ix2, IxDyn, Zip};

pub type NodeId = usize;

/// Batch-normalization statistics captured while building a training-mode
/// graph. The training loop drains these to update running statistics.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub tag: String,
    pub mean: ArrayD<f64>,
    pub var: ArrayD<f64>,
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    ScalarMul(NodeId, f64),
    MatMul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    Clamp(NodeId, f64, f64),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    LogSoftmax {
        x: NodeId,
        axis: usize,
    },
    SumAxis {
        x: NodeId,
        axis: usize,
    },
    MeanAll(NodeId),
    BroadcastTo {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    Transpose {
        x: NodeId,
        axes: Vec<usize>,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Concat {
        axis: usize,
        parts: Vec<NodeId>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        cols: ndarray::Array2<f64>,
    },
    ConvT1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    Conv3d {
        x: NodeId,
        w: NodeId,
        pad: [usize; 3],
        cols: ndarray::Array2<f64>,
    },
    MaxPoolAxis {
        x: NodeId,
        axis: usize,
        k: usize,
        argmax: ArrayD<usize>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        channel_axis: usize,
        x_hat: ArrayD<f64>,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<ArrayD<f64>>>,
    stat_updates: Vec<StatUpdate>,
}

/// Sum `grad` down to `shape`, undoing NumPy-style broadcasting.
fn reduce_to_shape(mut grad: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    while grad.ndim() > shape.len() {
        grad = grad.sum_axis(Axis(0));
    }
    for axis in 0..shape.len() {
        if shape[axis] == 1 && grad.shape()[axis] != 1 {
            grad = grad.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    grad
}

fn as2(v: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    v.view().into_dimensionality::<Ix2>().expect("2-d tensor")
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.iter().next().copied().unwrap()
    }

    /// Gradient of the last `backward` target with respect to node `id`.
    /// Zero if the node did not influence the target.
    pub fn grad(&self, id: NodeId) -> ArrayD<f64> {
        match &self.grads.get(id) {
            Some(Some(g)) => g.clone(),
            _ => ArrayD::zeros(self.nodes[id].value.raw_dim()),
        }
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    // ---- leaves ------------------------------------------------------

    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, v: f64) -> NodeId {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| c * x);
        self.push(v, Op::ScalarMul(a, c))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Natural log. Callers clamp away from zero first.
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    // ---- linear algebra ----------------------------------------------

    /// `[m × k] · [k × n] -> [m × n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = as2(&self.nodes[a].value).dot(&as2(&self.nodes[b].value));
        self.push(v.into_dyn(), Op::MatMul(a, b))
    }

    // ---- reductions and softmax ---------------------------------------

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        let v = softmax_val(&self.nodes[x].value, axis, false);
        self.push(v, Op::Softmax { x, axis })
    }

    pub fn log_softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        let v = softmax_val(&self.nodes[x].value, axis, true);
        self.push(v, Op::LogSoftmax { x, axis })
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let v = self.nodes[x].value.sum_axis(Axis(axis));
        self.push(v, Op::SumAxis { x, axis })
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let n = self.nodes[x].value.shape()[axis] as f64;
        let s = self.sum_axis(x, axis);
        self.scale(s, 1.0 / n)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let m = self.nodes[x].value.mean().unwrap();
        self.push(ArrayD::from_elem(IxDyn(&[]), m), Op::MeanAll(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.len() as f64;
        let m = self.mean_all(x);
        self.scale(m, n)
    }

    // ---- shape ---------------------------------------------------------

    pub fn broadcast_to(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = self.nodes[x]
            .value
            .broadcast(IxDyn(shape))
            .expect("broadcast_to: incompatible shape")
            .to_owned();
        self.push(v, Op::BroadcastTo { x })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = self.nodes[x]
            .value
            .clone()
            .into_shape_clone(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(v, Op::Reshape { x })
    }

    pub fn transpose(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        let v = self.nodes[x]
            .value
            .view()
            .permuted_axes(IxDyn(axes))
            .to_owned();
        self.push(
            v,
            Op::Transpose {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        let v = self
            .nodes[x]
            .value
            .index_axis_range(axis, start, end);
        self.push(v, Op::Slice { x, axis, start })
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayViewD<f64>> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        self.push(
            v,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
        )
    }

    // ---- convolutions ---------------------------------------------------

    /// 1-d convolution over the last axis. `x: [B, Cin, L]`,
    /// `w: [Cout, Cin, K]` -> `[B, Cout, Lout]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        let (y, cols) = conv1d_forward(&self.nodes[x].value, &self.nodes[w].value, stride, pad);
        self.push(
            y,
            Op::Conv1d {
                x,
                w,
                stride,
                pad,
                cols,
            },
        )
    }

    /// Transposed 1-d convolution. `x: [B, Cin, L]`, `w: [Cin, Cout, K]`
    /// -> `[B, Cout, (L-1)*stride + K - 2*pad]`.
    pub fn conv_transpose1d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        let y = convt1d_forward(&self.nodes[x].value, &self.nodes[w].value, stride, pad);
        self.push(y, Op::ConvT1d { x, w, stride, pad })
    }

    /// 3-d convolution, stride 1. `x: [B, Cin, D, F, T]`,
    /// `w: [Cout, Cin, kd, kf, kt]`, zero padding per spatial axis.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, pad: [usize; 3]) -> NodeId {
        let (y, cols) = conv3d_forward(&self.nodes[x].value, &self.nodes[w].value, pad);
        self.push(y, Op::Conv3d { x, w, pad, cols })
    }

    /// Non-overlapping max pool along one axis; `k` must divide the axis length.
    pub fn max_pool_axis(&mut self, x: NodeId, axis: usize, k: usize) -> NodeId {
        let (y, argmax) = max_pool_forward(&self.nodes[x].value, axis, k);
        self.push(y, Op::MaxPoolAxis { x, axis, k, argmax })
    }

    // ---- batch norm -----------------------------------------------------

    /// Training-mode batch normalization over all axes except `channel_axis`.
    /// `gamma`/`beta` are 1-d of length C. Batch statistics are recorded under
    /// `tag` for the caller's running-stat update.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        channel_axis: usize,
        eps: f64,
        tag: &str,
    ) -> NodeId {
        let xv = &self.nodes[x].value;
        let c = xv.shape()[channel_axis];
        let n = (xv.len() / c) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (ch, lane) in xv.axis_iter(Axis(channel_axis)).enumerate() {
            let m = lane.sum() / n;
            mean[ch] = m;
            var[ch] = lane.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / n;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        let mut x_hat = xv.clone();
        for (ch, mut lane) in x_hat.axis_iter_mut(Axis(channel_axis)).enumerate() {
            lane.mapv_inplace(|v| (v - mean[ch]) * inv_std[ch]);
        }
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let mut y = x_hat.clone();
        for (ch, mut lane) in y.axis_iter_mut(Axis(channel_axis)).enumerate() {
            let g = gv[[ch]];
            let b = bv[[ch]];
            lane.mapv_inplace(|v| g * v + b);
        }
        self.stat_updates.push(StatUpdate {
            tag: tag.to_string(),
            mean: ArrayD::from_shape_vec(IxDyn(&[c]), mean).unwrap(),
            var: ArrayD::from_shape_vec(IxDyn(&[c]), var).unwrap(),
        });
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                channel_axis,
                x_hat,
                inv_std,
            },
        )
    }

    /// Inference-mode batch normalization using fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        channel_axis: usize,
        eps: f64,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> NodeId {
        let c = self.nodes[x].value.shape()[channel_axis];
        debug_assert_eq!(running_mean.len(), c);
        // y = gamma * (x - rm) * rstd + beta, composed from differentiable ops
        // so frozen-stat graphs still backprop into x and the affine params.
        let mut scale = vec![0.0; c];
        let mut shift = vec![0.0; c];
        for ch in 0..c {
            scale[ch] = 1.0 / (running_var[ch] + eps).sqrt();
            shift[ch] = -running_mean[ch] * scale[ch];
        }
        let mut bshape = vec![1usize; self.nodes[x].value.ndim()];
        bshape[channel_axis] = c;
        let scale_leaf = self.leaf(ArrayD::from_shape_vec(IxDyn(&bshape), scale).unwrap());
        let shift_leaf = self.leaf(ArrayD::from_shape_vec(IxDyn(&bshape), shift).unwrap());
        let xs = self.mul(x, scale_leaf);
        let xn = self.add(xs, shift_leaf);
        let gshaped = self.reshape(gamma, &bshape);
        let bshaped = self.reshape(beta, &bshape);
        let scaled = self.mul(xn, gshaped);
        self.add(scaled, bshaped)
    }

    // ---- backward -------------------------------------------------------

    /// Accumulate gradients of scalar node `loss` into every ancestor.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss].value.len(), 1, "backward target must be scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss] = Some(ArrayD::from_elem(self.nodes[loss].value.raw_dim(), 1.0));

        for id in (0..=loss).rev() {
            let gy = match self.grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &gy);
            self.grads[id] = Some(gy);
        }
    }

    fn accum(&mut self, id: NodeId, g: ArrayD<f64>) {
        match &mut self.grads[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, id: NodeId, gy: &ArrayD<f64>) {
        // Ops that need parent/self values read them before mutating grads.
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                let ga = reduce_to_shape(gy.clone(), self.nodes[a].value.shape());
                let gb = reduce_to_shape(gy.clone(), self.nodes[b].value.shape());
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                let ga = reduce_to_shape(gy.clone(), self.nodes[a].value.shape());
                let gb = reduce_to_shape(gy.mapv(|v| -v), self.nodes[b].value.shape());
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let ga = reduce_to_shape(gy * &bv.broadcast(gy.raw_dim()).unwrap(), av.shape());
                let gb = reduce_to_shape(gy * &av.broadcast(gy.raw_dim()).unwrap(), bv.shape());
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::Neg(a) => {
                let a = *a;
                self.accum(a, gy.mapv(|v| -v));
            }
            Op::ScalarMul(a, c) => {
                let (a, c) = (*a, *c);
                self.accum(a, gy.mapv(|v| c * v));
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let gy2 = as2(gy).to_owned();
                let av = as2(&self.nodes[a].value).to_owned();
                let bv = as2(&self.nodes[b].value).to_owned();
                let ga = gy2.dot(&bv.t()).into_dyn();
                let gb = av.t().dot(&gy2).into_dyn();
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let y = self.nodes[id].value.clone();
                self.accum(a, gy * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                let a = *a;
                let y = self.nodes[id].value.clone();
                self.accum(a, gy * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Exp(a) => {
                let a = *a;
                let y = self.nodes[id].value.clone();
                self.accum(a, gy * &y);
            }
            Op::Ln(a) => {
                let a = *a;
                let xv = self.nodes[a].value.clone();
                self.accum(a, gy / &xv);
            }
            Op::Abs(a) => {
                let a = *a;
                let xv = self.nodes[a].value.clone();
                self.accum(a, gy * &xv.mapv(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }));
            }
            Op::Clamp(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                let xv = self.nodes[a].value.clone();
                let mut g = gy.clone();
                Zip::from(&mut g).and(&xv).for_each(|gi, &x| {
                    if x <= lo || x >= hi {
                        *gi = 0.0;
                    }
                });
                self.accum(a, g);
            }
            Op::Softmax { x, axis } => {
                let (x, axis) = (*x, *axis);
                let s = self.nodes[id].value.clone();
                // dx = s * (gy - sum(gy * s, axis))
                let dot = (gy * &s).sum_axis(Axis(axis)).insert_axis(Axis(axis));
                let g = &s * &(gy - &dot.broadcast(gy.raw_dim()).unwrap());
                self.accum(x, g);
            }
            Op::LogSoftmax { x, axis } => {
                let (x, axis) = (*x, *axis);
                let y = self.nodes[id].value.clone();
                let sum_gy = gy.sum_axis(Axis(axis)).insert_axis(Axis(axis));
                let g = gy - &(y.mapv(f64::exp) * &sum_gy.broadcast(gy.raw_dim()).unwrap());
                self.accum(x, g);
            }
            Op::SumAxis { x, axis } => {
                let (x, axis) = (*x, *axis);
                let shape = self.nodes[x].value.raw_dim();
                let expanded = gy.clone().insert_axis(Axis(axis));
                let g = expanded.broadcast(shape.clone()).unwrap().to_owned();
                self.accum(x, g);
            }
            Op::MeanAll(x) => {
                let x = *x;
                let shape = self.nodes[x].value.raw_dim();
                let n = self.nodes[x].value.len() as f64;
                let gv = gy.iter().next().copied().unwrap() / n;
                self.accum(x, ArrayD::from_elem(shape, gv));
            }
            Op::BroadcastTo { x } => {
                let x = *x;
                let g = reduce_to_shape(gy.clone(), self.nodes[x].value.shape());
                self.accum(x, g);
            }
            Op::Reshape { x } => {
                let x = *x;
                let shape = self.nodes[x].value.raw_dim();
                let g = gy.clone().into_shape_clone(shape).unwrap();
                self.accum(x, g);
            }
            Op::Transpose { x, axes } => {
                let x = *x;
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let g = gy.view().permuted_axes(IxDyn(&inverse)).to_owned();
                self.accum(x, g);
            }
            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let mut g = ArrayD::zeros(self.nodes[x].value.raw_dim());
                let end = start + gy.shape()[axis];
                g.slice_axis_mut(
                    Axis(axis),
                    ndarray::Slice::from(start as isize..end as isize),
                )
                .assign(gy);
                self.accum(x, g);
            }
            Op::Concat { axis, parts } => {
                let axis = *axis;
                let parts = parts.clone();
                let mut offset = 0usize;
                for p in parts {
                    let len = self.nodes[p].value.shape()[axis];
                    let g = gy
                        .slice_axis(
                            Axis(axis),
                            ndarray::Slice::from(offset as isize..(offset + len) as isize),
                        )
                        .to_owned();
                    self.accum(p, g);
                    offset += len;
                }
            }
            Op::Conv1d {
                x,
                w,
                stride,
                pad,
                cols,
            } => {
                let (x, w, stride, pad) = (*x, *w, *stride, *pad);
                let cols = cols.clone();
                let (gx, gw) = conv1d_backward(
                    self.nodes[x].value.shape(),
                    &self.nodes[w].value,
                    &cols,
                    gy,
                    stride,
                    pad,
                );
                self.accum(x, gx);
                self.accum(w, gw);
            }
            Op::ConvT1d { x, w, stride, pad } => {
                let (x, w, stride, pad) = (*x, *w, *stride, *pad);
                let xv = self.nodes[x].value.clone();
                let wv = self.nodes[w].value.clone();
                let (gx, gw) = convt1d_backward(&xv, &wv, gy, stride, pad);
                self.accum(x, gx);
                self.accum(w, gw);
            }
            Op::Conv3d { x, w, pad, cols } => {
                let (x, w, pad) = (*x, *w, *pad);
                let cols = cols.clone();
                let (gx, gw) = conv3d_backward(
                    self.nodes[x].value.shape(),
                    &self.nodes[w].value,
                    &cols,
                    gy,
                    pad,
                );
                self.accum(x, gx);
                self.accum(w, gw);
            }
            Op::MaxPoolAxis { x, axis, k, argmax } => {
                let (x, axis, k) = (*x, *axis, *k);
                let argmax = argmax.clone();
                let mut g = ArrayD::zeros(self.nodes[x].value.raw_dim());
                let mut idx = vec![0usize; gy.ndim()];
                for (out_idx, &gv) in gy.indexed_iter() {
                    idx.clear();
                    idx.extend(out_idx.as_array_view().iter().copied());
                    let chosen = argmax[out_idx.clone()];
                    let mut src = idx.clone();
                    src[axis] = src[axis] * k + chosen;
                    g[IxDyn(&src)] += gv;
                }
                self.accum(x, g);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                channel_axis,
                x_hat,
                inv_std,
            } => {
                let (x, gamma, beta, channel_axis) = (*x, *gamma, *beta, *channel_axis);
                let x_hat = x_hat.clone();
                let inv_std = inv_std.clone();
                let gv = self.nodes[gamma].value.clone();
                let c = gv.len();
                let n = (x_hat.len() / c) as f64;

                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    let xh = x_hat.index_axis(Axis(channel_axis), ch);
                    let gyc = gy.index_axis(Axis(channel_axis), ch);
                    dgamma[ch] = (&gyc * &xh).sum();
                    dbeta[ch] = gyc.sum();
                }

                // dx = gamma*inv_std/N * (N*gy - sum(gy) - x_hat*sum(gy*x_hat))
                let mut gx = gy.clone();
                for (ch, mut lane) in gx.axis_iter_mut(Axis(channel_axis)).enumerate() {
                    let xh = x_hat.index_axis(Axis(channel_axis), ch);
                    let coef = gv[[ch]] * inv_std[ch] / n;
                    let sum_gy = dbeta[ch];
                    let sum_gyxh = dgamma[ch];
                    Zip::from(&mut lane).and(&xh).for_each(|gi, &xhv| {
                        *gi = coef * (n * *gi - sum_gy - xhv * sum_gyxh);
                    });
                }
                self.accum(x, gx);
                self.accum(
                    gamma,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap(),
                );
                self.accum(beta, ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap());
            }
        }
    }
}

trait IndexAxisRange {
    fn index_axis_range(&self, axis: usize, start: usize, end: usize) -> ArrayD<f64>;
}

impl IndexAxisRange for ArrayD<f64> {
    fn index_axis_range(&self, axis: usize, start: usize, end: usize) -> ArrayD<f64> {
        self.slice_axis(
            Axis(axis),
            ndarray::Slice::from(start as isize..end as isize),
        )
        .to_owned()
    }
}

fn softmax_val(x: &ArrayD<f64>, axis: usize, log: bool) -> ArrayD<f64> {
    let max = x.fold_axis(Axis(axis), f64::NEG_INFINITY, |&a, &b| a.max(b));
    let max = max.insert_axis(Axis(axis));
    let shifted = x - &max.broadcast(x.raw_dim()).unwrap();
    let exps = shifted.mapv(f64::exp);
    let denom = exps.sum_axis(Axis(axis)).insert_axis(Axis(axis));
    if log {
        let logd = denom.mapv(f64::ln);
        shifted - &logd.broadcast(x.raw_dim()).unwrap()
    } else {
        &exps / &denom.broadcast(x.raw_dim()).unwrap()
    }
}

// ---- convolution kernels -------------------------------------------------

/// Gather `x: [B, Cin, L]` into columns `[(Cin*K), (B*Lout)]`.
fn im2col1d(
    x: &ArrayD<f64>,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
) -> ndarray::Array2<f64> {
    let (b, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = ndarray::Array2::<f64>::zeros((cin * k, b * lout));
    for bi in 0..b {
        for ci in 0..cin {
            for kk in 0..k {
                let row = ci * k + kk;
                for t in 0..lout {
                    let src = (t * stride + kk) as isize - pad as isize;
                    if src >= 0 && (src as usize) < l {
                        cols[[row, bi * lout + t]] = x[[bi, ci, src as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add columns back to `[B, Cin, L]` (adjoint of `im2col1d`).
fn col2im1d(
    cols: &ndarray::Array2<f64>,
    b: usize,
    cin: usize,
    l: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
) -> ArrayD<f64> {
    let mut x = ArrayD::<f64>::zeros(IxDyn(&[b, cin, l]));
    for bi in 0..b {
        for ci in 0..cin {
            for kk in 0..k {
                let row = ci * k + kk;
                for t in 0..lout {
                    let dst = (t * stride + kk) as isize - pad as isize;
                    if dst >= 0 && (dst as usize) < l {
                        x[[bi, ci, dst as usize]] += cols[[row, bi * lout + t]];
                    }
                }
            }
        }
    }
    x
}

pub fn conv1d_out_len(l: usize, k: usize, stride: usize, pad: usize) -> usize {
    (l + 2 * pad - k) / stride + 1
}

fn conv1d_forward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, ndarray::Array2<f64>) {
    let (b, _cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, cin_w, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    debug_assert_eq!(x.shape()[1], cin_w, "conv1d channel mismatch");
    let lout = conv1d_out_len(l, k, stride, pad);
    let cols = im2col1d(x, k, stride, pad, lout);
    let wmat = w.view().into_shape_with_order((cout, cin_w * k)).unwrap();
    let ymat = wmat.dot(&cols); // [Cout, B*Lout]
    let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, cout, lout]));
    for co in 0..cout {
        for bi in 0..b {
            for t in 0..lout {
                y[[bi, co, t]] = ymat[[co, bi * lout + t]];
            }
        }
    }
    (y, cols)
}

fn conv1d_backward(
    x_shape: &[usize],
    w: &ArrayD<f64>,
    cols: &ndarray::Array2<f64>,
    gy: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (b, cin, l) = (x_shape[0], x_shape[1], x_shape[2]);
    let (cout, _cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let lout = gy.shape()[2];
    let mut gymat = ndarray::Array2::<f64>::zeros((cout, b * lout));
    for co in 0..cout {
        for bi in 0..b {
            for t in 0..lout {
                gymat[[co, bi * lout + t]] = gy[[bi, co, t]];
            }
        }
    }
    let gw = gymat.dot(&cols.t()); // [Cout, Cin*K]
    let gw = gw.into_shape_with_order((cout, cin, k)).unwrap().into_dyn();
    let wmat = w.view().into_shape_with_order((cout, cin * k)).unwrap();
    let gcols = wmat.t().dot(&gymat); // [Cin*K, B*Lout]
    let gx = col2im1d(&gcols, b, cin, l, k, stride, pad, lout);
    (gx, gw)
}

pub fn convt1d_out_len(l: usize, k: usize, stride: usize, pad: usize) -> usize {
    (l - 1) * stride + k - 2 * pad
}

/// Forward transposed convolution: the adjoint of `conv1d` with the same
/// geometry. `w: [Cin, Cout, K]`.
fn convt1d_forward(x: &ArrayD<f64>, w: &ArrayD<f64>, stride: usize, pad: usize) -> ArrayD<f64> {
    let (b, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cin_w, cout, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    debug_assert_eq!(cin, cin_w, "conv_transpose1d channel mismatch");
    let lout = convt1d_out_len(l, k, stride, pad);
    // x viewed as the "output gradient" of a conv [B, Cin, L]; producing the
    // "input" [B, Cout, Lout]: gcols = w'^T . xmat with w' [Cin, Cout*K].
    let mut xmat = ndarray::Array2::<f64>::zeros((cin, b * l));
    for ci in 0..cin {
        for bi in 0..b {
            for t in 0..l {
                xmat[[ci, bi * l + t]] = x[[bi, ci, t]];
            }
        }
    }
    let wmat = w.view().into_shape_with_order((cin, cout * k)).unwrap();
    let gcols = wmat.t().dot(&xmat); // [Cout*K, B*L]
    col2im1d(&gcols, b, cout, lout, k, stride, pad, l)
}

fn convt1d_backward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    gy: &ArrayD<f64>,
    stride: usize,
    pad: usize,
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (b, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (_, cout, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    // gx = conv1d(gy, w~) where w~[ci, co, k] plays the conv weight role
    // [Cin(out side) <- Cout(in side)]: reuse the forward conv kernel with a
    // reshaped weight view.
    let lout = gy.shape()[2];
    let gycols = im2col1d(gy, k, stride, pad, l); // gather gy at conv geometry
    // gx[b, ci, t] = sum_{co,k} w[ci,co,k] * gy[b, co, t*s + k - p]
    let wmat = w.view().into_shape_with_order((cin, cout * k)).unwrap();
    let gxmat = wmat.dot(&gycols); // [Cin, B*L]
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, cin, l]));
    for ci in 0..cin {
        for bi in 0..b {
            for t in 0..l {
                gx[[bi, ci, t]] = gxmat[[ci, bi * l + t]];
            }
        }
    }
    // gw[ci, co, k] = sum_{b,t} x[b,ci,t] * gy[b, co, t*s + k - p]
    let mut xmat = ndarray::Array2::<f64>::zeros((cin, b * l));
    for ci in 0..cin {
        for bi in 0..b {
            for t in 0..l {
                xmat[[ci, bi * l + t]] = x[[bi, ci, t]];
            }
        }
    }
    let gw = xmat.dot(&gycols.t()); // [Cin, Cout*K]
    let gw = gw
        .into_shape_with_order((cin, cout, k))
        .unwrap()
        .into_dyn();
    let _ = lout;
    (gx, gw)
}

fn conv3d_forward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    pad: [usize; 3],
) -> (ArrayD<f64>, ndarray::Array2<f64>) {
    let (b, cin) = (x.shape()[0], x.shape()[1]);
    let (d, f, t) = (x.shape()[2], x.shape()[3], x.shape()[4]);
    let (cout, _cin, kd, kf, kt) = (
        w.shape()[0],
        w.shape()[1],
        w.shape()[2],
        w.shape()[3],
        w.shape()[4],
    );
    let od = d + 2 * pad[0] - kd + 1;
    let of = f + 2 * pad[1] - kf + 1;
    let ot = t + 2 * pad[2] - kt + 1;
    let kvol = kd * kf * kt;
    let ovol = od * of * ot;
    let mut cols = ndarray::Array2::<f64>::zeros((cin * kvol, b * ovol));
    for bi in 0..b {
        for ci in 0..cin {
            for (ki, (dk, fk, tk)) in iter3(kd, kf, kt).enumerate() {
                let row = ci * kvol + ki;
                for (oi, (dd, ff, tt)) in iter3(od, of, ot).enumerate() {
                    let sd = (dd + dk) as isize - pad[0] as isize;
                    let sf = (ff + fk) as isize - pad[1] as isize;
                    let st = (tt + tk) as isize - pad[2] as isize;
                    if sd >= 0
                        && (sd as usize) < d
                        && sf >= 0
                        && (sf as usize) < f
                        && st >= 0
                        && (st as usize) < t
                    {
                        cols[[row, bi * ovol + oi]] =
                            x[[bi, ci, sd as usize, sf as usize, st as usize]];
                    }
                }
            }
        }
    }
    let wmat = w.view().into_shape_with_order((cout, cin * kvol)).unwrap();
    let ymat = wmat.dot(&cols);
    let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, cout, od, of, ot]));
    for co in 0..cout {
        for bi in 0..b {
            for (oi, (dd, ff, tt)) in iter3(od, of, ot).enumerate() {
                y[[bi, co, dd, ff, tt]] = ymat[[co, bi * ovol + oi]];
            }
        }
    }
    (y, cols)
}

fn conv3d_backward(
    x_shape: &[usize],
    w: &ArrayD<f64>,
    cols: &ndarray::Array2<f64>,
    gy: &ArrayD<f64>,
    pad: [usize; 3],
) -> (ArrayD<f64>, ArrayD<f64>) {
    let (b, cin) = (x_shape[0], x_shape[1]);
    let (d, f, t) = (x_shape[2], x_shape[3], x_shape[4]);
    let (cout, _cin, kd, kf, kt) = (
        w.shape()[0],
        w.shape()[1],
        w.shape()[2],
        w.shape()[3],
        w.shape()[4],
    );
    let (od, of, ot) = (gy.shape()[2], gy.shape()[3], gy.shape()[4]);
    let kvol = kd * kf * kt;
    let ovol = od * of * ot;
    let mut gymat = ndarray::Array2::<f64>::zeros((cout, b * ovol));
    for co in 0..cout {
        for bi in 0..b {
            for (oi, (dd, ff, tt)) in iter3(od, of, ot).enumerate() {
                gymat[[co, bi * ovol + oi]] = gy[[bi, co, dd, ff, tt]];
            }
        }
    }
    let gw = gymat.dot(&cols.t());
    let gw = gw
        .into_shape_with_order((cout, cin, kd, kf, kt))
        .unwrap()
        .into_dyn();
    let wmat = w.view().into_shape_with_order((cout, cin * kvol)).unwrap();
    let gcols = wmat.t().dot(&gymat);
    let mut gx = ArrayD::<f64>::zeros(IxDyn(&[b, cin, d, f, t]));
    for bi in 0..b {
        for ci in 0..cin {
            for (ki, (dk, fk, tk)) in iter3(kd, kf, kt).enumerate() {
                let row = ci * kvol + ki;
                for (oi, (dd, ff, tt)) in iter3(od, of, ot).enumerate() {
                    let sd = (dd + dk) as isize - pad[0] as isize;
                    let sf = (ff + fk) as isize - pad[1] as isize;
                    let st = (tt + tk) as isize - pad[2] as isize;
                    if sd >= 0
                        && (sd as usize) < d
                        && sf >= 0
                        && (sf as usize) < f
                        && st >= 0
                        && (st as usize) < t
                    {
                        gx[[bi, ci, sd as usize, sf as usize, st as usize]] +=
                            gcols[[row, bi * ovol + oi]];
                    }
                }
            }
        }
    }
    (gx, gw)
}

fn iter3(a: usize, b: usize, c: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..a).flat_map(move |i| (0..b).flat_map(move |j| (0..c).map(move |k| (i, j, k))))
}

fn max_pool_forward(x: &ArrayD<f64>, axis: usize, k: usize) -> (ArrayD<f64>, ArrayD<usize>) {
    let len = x.shape()[axis];
    assert_eq!(len % k, 0, "max_pool_axis: {k} must divide axis length {len}");
    let out_len = len / k;
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = out_len;
    let mut y = ArrayD::<f64>::zeros(IxDyn(&out_shape));
    let mut argmax = ArrayD::<usize>::zeros(IxDyn(&out_shape));
    for (out_idx, yv) in y.indexed_iter_mut() {
        let mut best = f64::NEG_INFINITY;
        let mut best_k = 0usize;
        let mut src: Vec<usize> = out_idx.as_array_view().iter().copied().collect();
        let base = src[axis] * k;
        for kk in 0..k {
            src[axis] = base + kk;
            let v = x[IxDyn(&src)];
            if v > best {
                best = v;
                best_k = kk;
            }
        }
        *yv = best;
        argmax[out_idx] = best_k;
    }
    (y, argmax)
}
