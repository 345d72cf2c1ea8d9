use std::sync::Arc;

use super::{chw, Real, Tensor};
use crate::error::{Error, Result};

/// Index of a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fault injection for negative-control tests of the gradient suite.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU backward passes the gradient through unconditionally.
    ReluBackward,
}

/// Per-pixel two-source gather with weights:
/// `out[c, p] = wa[p] * a[c, ia[p]] + wb[p] * b[c, ib[p]]`.
///
/// Binary block mixes, CutMix rectangles and MixUp interpolation are all
/// expressible this way.
#[derive(Clone, Debug, PartialEq)]
pub struct MixField {
    pub height: usize,
    pub width: usize,
    pub src_a: Vec<u32>,
    pub weight_a: Vec<f32>,
    pub src_b: Vec<u32>,
    pub weight_b: Vec<f32>,
}

impl MixField {
    pub fn identity(height: usize, width: usize, weight_a: f32) -> Self {
        let hw = height * width;
        let idx: Vec<u32> = (0..hw as u32).collect();
        MixField {
            height,
            width,
            src_a: idx.clone(),
            weight_a: vec![weight_a; hw],
            src_b: idx,
            weight_b: vec![1.0 - weight_a; hw],
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Applies the field to plain `[C,H,W]` tensors.
    pub fn apply<T: Real>(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = chw(a.shape(), "mix")?;
        if a.shape() != b.shape() || h != self.height || w != self.width {
            return Err(Error::shape(
                "mix",
                format!(
                    "inputs {:?}/{:?} vs field {}x{}",
                    a.shape(),
                    b.shape(),
                    self.height,
                    self.width
                ),
            ));
        }
        let mut out = vec![T::zero(); c * h * w];
        mix_forward(self, a.data(), b.data(), c, &mut out);
        Tensor::new([c, h, w], out)
    }

    /// True when every output pixel copies exactly one source pixel.
    pub fn is_selection(&self) -> bool {
        self.weight_a
            .iter()
            .zip(&self.weight_b)
            .all(|(&a, &b)| (a == 1.0 && b == 0.0) || (a == 0.0 && b == 1.0))
    }
}

fn mix_forward<T: Real>(f: &MixField, a: &[T], b: &[T], c: usize, out: &mut [T]) {
    let hw = f.pixels();
    for ch in 0..c {
        let base = ch * hw;
        for p in 0..hw {
            let mut v = T::zero();
            let wa = f.weight_a[p];
            if wa != 0.0 {
                v = v + T::of(wa as f64) * a[base + f.src_a[p] as usize];
            }
            let wb = f.weight_b[p];
            if wb != 0.0 {
                v = v + T::of(wb as f64) * b[base + f.src_b[p] as usize];
            }
            out[base + p] = v;
        }
    }
}

/// Per-pixel target distribution plus a per-pixel confidence weight.
/// Pixels with weight 0 are outside the labeled set.
#[derive(Clone, Debug, PartialEq)]
pub struct CeTarget {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// `[K, H, W]` target probabilities.
    pub probs: Vec<f32>,
    /// `[H, W]` weights, 0 outside the labeled set.
    pub weight: Vec<f32>,
}

impl CeTarget {
    pub fn labeled_mass(&self) -> f64 {
        self.weight.iter().map(|&w| w as f64).sum()
    }

    pub fn labeled_count(&self) -> usize {
        self.weight.iter().filter(|&&w| w > 0.0).count()
    }
}

/// How [`Graph::partial_ce`] reduces over labeled pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CeReduction {
    /// Plain sum over labeled pixels.
    Sum,
    /// Sum divided by the total labeled weight (0 when nothing is labeled).
    Mean,
}

pub(crate) const CE_EPS: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        ksize: usize,
        cols: Vec<T>,
    },
    Relu(NodeId),
    Softmax(NodeId),
    MaxPool2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    MaskMul {
        input: NodeId,
        mask: Arc<Vec<f32>>,
    },
    Mix {
        a: NodeId,
        b: NodeId,
        field: Arc<MixField>,
    },
    PartialCe {
        pred: NodeId,
        target: Arc<CeTarget>,
        scale: T,
    },
    Ncs {
        p: NodeId,
        q: NodeId,
        /// `(dot, |p|, |q|)` per group; one group for the flattened form.
        groups: Vec<(T, T, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation tape. Node ids are topologically ordered by
/// construction: every op's inputs precede it.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Copies a node's value into a new constant leaf (stop-gradient).
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let mut v = self.nodes[id.0].value.clone();
        v.zero_grad();
        self.constant(v)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let rg = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(value, op, rg)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// 2-D cross-correlation with zero padding `k/2` and stride 1.
    /// Kernel is `[C_out, C_in, k, k]` with odd `k`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let (cin, h, w) = chw(self.shape(input), "conv2d")?;
        let (cout, kcin, ksize) = match *self.shape(kernel) {
            [o, i, kh, kw] if kh == kw && kh % 2 == 1 => (o, i, kh),
            ref s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel must be [C_out,C_in,k,k] with odd k, got {s:?}"),
                ))
            }
        };
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("C_in: input has {cin} channels, kernel expects {kcin}"),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("C_out: bias {:?} vs kernel C_out {cout}", self.shape(bias)),
            ));
        }
        let hw = h * w;
        let rows = cin * ksize * ksize;
        let cols = if ksize == 1 {
            Vec::new()
        } else {
            im2col(self.value(input).data(), cin, h, w, ksize)
        };
        let mut out = vec![T::zero(); cout * hw];
        for (o, chunk) in out.chunks_mut(hw.max(1)).enumerate().take(cout) {
            chunk.fill(self.value(bias).data()[o]);
        }
        {
            let kdata = self.value(kernel).data();
            let src = if ksize == 1 {
                self.value(input).data()
            } else {
                &cols
            };
            T::gemm(
                cout,
                rows,
                hw,
                T::one(),
                kdata,
                rows as isize,
                1,
                src,
                hw as isize,
                1,
                T::one(),
                &mut out,
                hw as isize,
                1,
            );
        }
        let value = Tensor::new([cout, h, w], out)?;
        Ok(self.push_op(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                ksize,
                cols,
            },
            &[input, kernel, bias],
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push_op(value, Op::Relu(x), &[x])
    }

    /// Softmax across the channel dimension of a `[K,H,W]` tensor.
    pub fn channel_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (k, h, w) = chw(self.shape(x), "channel_softmax")?;
        if k < 2 {
            return Err(Error::shape(
                "channel_softmax",
                format!("K must be >= 2, got {k}"),
            ));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); k * hw];
        for p in 0..hw {
            let mut m = src[p];
            for c in 1..k {
                m = m.max(src[c * hw + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                let e = (src[c * hw + p] - m).exp();
                out[c * hw + p] = e;
                z = z + e;
            }
            for c in 0..k {
                out[c * hw + p] = out[c * hw + p] / z;
            }
        }
        let value = Tensor::new([k, h, w], out)?;
        Ok(self.push_op(value, Op::Softmax(x), &[x]))
    }

    /// 2x2 non-overlapping max pool; ties go to the first position in scan order.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = chw(self.shape(x), "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "maxpool2",
                format!("H={h}, W={w} must both be even"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best_i = ch * h * w + 2 * y * w + 2 * xx;
                    let mut best = src[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ch * h * w + (2 * y + dy) * w + 2 * xx + dx;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                    let o = ch * oh * ow + y * ow + xx;
                    out[o] = best;
                    argmax[o] = best_i as u32;
                }
            }
        }
        let value = Tensor::new([c, oh, ow], out)?;
        Ok(self.push_op(value, Op::MaxPool2 { input: x, argmax }, &[x]))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = chw(self.shape(x), "upsample2")?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let row = &src[ch * h * w + (y / 2) * w..][..w];
                let dst = &mut out[ch * oh * ow + y * ow..][..ow];
                for (xx, d) in dst.iter_mut().enumerate() {
                    *d = row[xx / 2];
                }
            }
        }
        let value = Tensor::new([c, oh, ow], out)?;
        Ok(self.push_op(value, Op::Upsample2(x), &[x]))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = chw(self.shape(a), "concat_channels")?;
        let (cb, hb, wb) = chw(self.shape(b), "concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial extents differ: {ha}x{wa} vs {hb}x{wb}"),
            ));
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let value = Tensor::new([ca + cb, ha, wa], out)?;
        Ok(self.push_op(value, Op::Concat(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let value = self.value(x).map(|v| v * c);
        self.push_op(value, Op::Scale(x, c), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(value, Op::Sum(x), &[x])
    }

    /// Multiplies every channel of a `[C,H,W]` tensor by a constant `[H,W]` mask.
    pub fn mask_mul(&mut self, x: NodeId, mask: Arc<Vec<f32>>) -> Result<NodeId> {
        let (c, h, w) = chw(self.shape(x), "mask_mul")?;
        if mask.len() != h * w {
            return Err(Error::shape(
                "mask_mul",
                format!("mask has {} pixels, input is {h}x{w}", mask.len()),
            ));
        }
        let src = self.value(x).data();
        let hw = h * w;
        let data = (0..c * hw)
            .map(|i| src[i] * T::of(mask[i % hw] as f64))
            .collect();
        let value = Tensor::new([c, h, w], data)?;
        Ok(self.push_op(value, Op::MaskMul { input: x, mask }, &[x]))
    }

    /// Differentiable [`MixField`] application to two `[C,H,W]` nodes.
    pub fn mix(&mut self, a: NodeId, b: NodeId, field: Arc<MixField>) -> Result<NodeId> {
        let value = field.apply(self.value(a), self.value(b))?;
        Ok(self.push_op(value, Op::Mix { a, b, field }, &[a, b]))
    }

    /// Cross-entropy restricted to labeled pixels:
    /// `-sum_i w_i sum_k t[i,k] ln(p[i,k] + eps)`, optionally divided by
    /// the labeled mass. An empty labeled set gives 0.
    pub fn partial_ce(
        &mut self,
        pred: NodeId,
        target: Arc<CeTarget>,
        reduction: CeReduction,
    ) -> Result<NodeId> {
        let (k, h, w) = chw(self.shape(pred), "partial_ce")?;
        if (target.classes, target.height, target.width) != (k, h, w) {
            return Err(Error::shape(
                "partial_ce",
                format!(
                    "prediction [{k},{h},{w}] vs target [{},{},{}]",
                    target.classes, target.height, target.width
                ),
            ));
        }
        let mass = target.labeled_mass();
        let scale = match reduction {
            CeReduction::Sum => T::one(),
            CeReduction::Mean if mass > 0.0 => T::of(1.0 / mass),
            CeReduction::Mean => T::zero(),
        };
        let hw = h * w;
        let p = self.value(pred).data();
        let eps = T::of(CE_EPS);
        let mut acc = T::zero();
        for i in 0..hw {
            let wi = target.weight[i];
            if wi == 0.0 {
                continue;
            }
            let mut s = T::zero();
            for c in 0..k {
                let t = target.probs[c * hw + i];
                if t != 0.0 {
                    s = s - T::of(t as f64) * (p[c * hw + i] + eps).ln();
                }
            }
            acc = acc + T::of(wi as f64) * s;
        }
        let value = Tensor::scalar(acc * scale);
        Ok(self.push_op(
            value,
            Op::PartialCe {
                pred,
                target,
                scale,
            },
            &[pred],
        ))
    }

    /// Negative cosine similarity of the two tensors flattened to vectors.
    pub fn ncs(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        self.same_shape("ncs", p, q)?;
        let g = cos_parts(self.value(p).data(), self.value(q).data());
        if g.1 == T::zero() || g.2 == T::zero() {
            return Err(Error::Invalid("ncs: zero-norm input".into()));
        }
        let value = Tensor::scalar(-(g.0 / (g.1 * g.2)));
        Ok(self.push_op(
            value,
            Op::Ncs {
                p,
                q,
                groups: vec![g],
            },
            &[p, q],
        ))
    }

    /// Negative cosine similarity computed per leading-dimension slice and
    /// averaged over the slices where both norms are nonzero.
    pub fn ncs_per_class(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        self.same_shape("ncs_per_class", p, q)?;
        let (k, h, w) = chw(self.shape(p), "ncs_per_class")?;
        let hw = h * w;
        let pd = self.value(p).data();
        let qd = self.value(q).data();
        let groups: Vec<(T, T, T)> = (0..k)
            .map(|c| cos_parts(&pd[c * hw..(c + 1) * hw], &qd[c * hw..(c + 1) * hw]))
            .collect();
        let valid: Vec<_> = groups
            .iter()
            .filter(|g| g.1 > T::zero() && g.2 > T::zero())
            .collect();
        if valid.is_empty() {
            return Err(Error::Invalid(
                "ncs_per_class: every class slice has zero norm".into(),
            ));
        }
        let n = T::of(valid.len() as f64);
        let s = valid
            .iter()
            .fold(T::zero(), |acc, g| acc + g.0 / (g.1 * g.2));
        let value = Tensor::scalar(-(s / n));
        Ok(self.push_op(value, Op::Ncs { p, q, groups }, &[p, q]))
    }

    /// Reverse-mode sweep from a scalar node into every leaf created with
    /// [`Graph::param`]. Leaf gradients accumulate across calls.
    /// Returns the number of nodes visited.
    pub fn backward(&mut self, loss: NodeId) -> Result<usize> {
        self.backward_impl(loss, None)
    }

    /// Like [`Graph::backward`] but only propagates toward `wrt`; other
    /// leaves are left untouched and unneeded partials are skipped.
    pub fn backward_wrt(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<usize> {
        self.backward_impl(loss, Some(wrt))
    }

    fn backward_impl(&mut self, loss: NodeId, wrt: Option<&[NodeId]>) -> Result<usize> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape is {:?}", self.shape(loss)),
            ));
        }
        let n = loss.0 + 1;
        let mut reach = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            reach[i] = match &node.op {
                Op::Leaf => match wrt {
                    Some(ids) => ids.contains(&NodeId(i)),
                    None => node.requires_grad,
                },
                op => inputs_of(op).iter().any(|j| reach[j.0]),
            };
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = 0;
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !reach[i] {
                continue;
            }
            visited += 1;
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g)?;
            } else {
                self.backprop(i, &g, &reach, &mut grads);
            }
        }
        Ok(visited)
    }

    fn backprop(&self, i: usize, g: &[T], reach: &[bool], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                ksize,
                cols,
            } => {
                let (cin, h, w) = chw(self.shape(*input), "conv2d").expect("checked in forward");
                let cout = node.value.shape()[0];
                let hw = h * w;
                let rows = cin * ksize * ksize;
                let src = if *ksize == 1 {
                    self.value(*input).data()
                } else {
                    cols.as_slice()
                };
                if reach[bias.0] {
                    let gb = grad_buf(grads, *bias, cout);
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo = *gbo
                            + g[o * hw..(o + 1) * hw]
                                .iter()
                                .fold(T::zero(), |a, &b| a + b);
                    }
                }
                if reach[kernel.0] {
                    let gk = grad_buf(grads, *kernel, cout * rows);
                    // dK = G [cout, hw] * cols^T [hw, rows]
                    T::gemm(
                        cout,
                        hw,
                        rows,
                        T::one(),
                        g,
                        hw as isize,
                        1,
                        src,
                        1,
                        hw as isize,
                        T::one(),
                        gk,
                        rows as isize,
                        1,
                    );
                }
                if reach[input.0] {
                    let kdata = self.value(*kernel).data();
                    if *ksize == 1 {
                        let gi = grad_buf(grads, *input, cin * hw);
                        // dX = K^T [cin, cout] * G [cout, hw]
                        T::gemm(
                            cin,
                            cout,
                            hw,
                            T::one(),
                            kdata,
                            1,
                            rows as isize,
                            g,
                            hw as isize,
                            1,
                            T::one(),
                            gi,
                            hw as isize,
                            1,
                        );
                    } else {
                        let mut dcols = vec![T::zero(); rows * hw];
                        T::gemm(
                            rows,
                            cout,
                            hw,
                            T::one(),
                            kdata,
                            1,
                            rows as isize,
                            g,
                            hw as isize,
                            1,
                            T::zero(),
                            &mut dcols,
                            hw as isize,
                            1,
                        );
                        let gi = grad_buf(grads, *input, cin * hw);
                        col2im_add(&dcols, cin, h, w, *ksize, gi);
                    }
                }
            }
            Op::Relu(x) => {
                if reach[x.0] {
                    let xin = self.value(*x).data();
                    let gi = grad_buf(grads, *x, g.len());
                    let leak = self.fault == Some(Fault::ReluBackward);
                    for ((d, &gv), &xv) in gi.iter_mut().zip(g).zip(xin) {
                        if leak || xv > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if reach[x.0] {
                    let (k, h, w) = chw(node.value.shape(), "softmax").expect("rank 3");
                    let hw = h * w;
                    let gi = grad_buf(grads, *x, k * hw);
                    for p in 0..hw {
                        let mut dot = T::zero();
                        for c in 0..k {
                            dot = dot + g[c * hw + p] * out[c * hw + p];
                        }
                        for c in 0..k {
                            let j = c * hw + p;
                            gi[j] = gi[j] + out[j] * (g[j] - dot);
                        }
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if reach[input.0] {
                    let n = self.value(*input).numel();
                    let gi = grad_buf(grads, *input, n);
                    for (&src, &gv) in argmax.iter().zip(g) {
                        gi[src as usize] = gi[src as usize] + gv;
                    }
                }
            }
            Op::Upsample2(x) => {
                if reach[x.0] {
                    let (c, h, w) = chw(self.shape(*x), "upsample2").expect("rank 3");
                    let (oh, ow) = (2 * h, 2 * w);
                    let gi = grad_buf(grads, *x, c * h * w);
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let j = ch * h * w + (y / 2) * w + xx / 2;
                                gi[j] = gi[j] + g[ch * oh * ow + y * ow + xx];
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).numel();
                if reach[a.0] {
                    add_into(grad_buf(grads, *a, na), &g[..na]);
                }
                if reach[b.0] {
                    add_into(grad_buf(grads, *b, g.len() - na), &g[na..]);
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if reach[x.0] {
                        add_into(grad_buf(grads, *x, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if reach[a.0] {
                    let gi = grad_buf(grads, *a, g.len());
                    for ((d, &gv), &o) in gi.iter_mut().zip(g).zip(bv) {
                        *d = *d + gv * o;
                    }
                }
                if reach[b.0] {
                    let gi = grad_buf(grads, *b, g.len());
                    for ((d, &gv), &o) in gi.iter_mut().zip(g).zip(av) {
                        *d = *d + gv * o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if reach[x.0] {
                    let gi = grad_buf(grads, *x, g.len());
                    for (d, &gv) in gi.iter_mut().zip(g) {
                        *d = *d + gv * *c;
                    }
                }
            }
            Op::Sum(x) => {
                if reach[x.0] {
                    let n = self.value(*x).numel();
                    let gi = grad_buf(grads, *x, n);
                    gi.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::MaskMul { input, mask } => {
                if reach[input.0] {
                    let hw = mask.len();
                    let gi = grad_buf(grads, *input, g.len());
                    for (j, (d, &gv)) in gi.iter_mut().zip(g).enumerate() {
                        *d = *d + gv * T::of(mask[j % hw] as f64);
                    }
                }
            }
            Op::Mix { a, b, field } => {
                let hw = field.pixels();
                let c = g.len() / hw.max(1);
                for (x, src, wts) in [
                    (a, &field.src_a, &field.weight_a),
                    (b, &field.src_b, &field.weight_b),
                ] {
                    if !reach[x.0] {
                        continue;
                    }
                    let gi = grad_buf(grads, *x, c * hw);
                    for ch in 0..c {
                        let base = ch * hw;
                        for p in 0..hw {
                            let wv = wts[p];
                            if wv != 0.0 {
                                let j = base + src[p] as usize;
                                gi[j] = gi[j] + T::of(wv as f64) * g[base + p];
                            }
                        }
                    }
                }
            }
            Op::PartialCe {
                pred,
                target,
                scale,
            } => {
                if reach[pred.0] {
                    let p = self.value(*pred).data();
                    let hw = target.height * target.width;
                    let k = target.classes;
                    let eps = T::of(CE_EPS);
                    let gi = grad_buf(grads, *pred, k * hw);
                    let gs = g[0] * *scale;
                    for i in 0..hw {
                        let wi = target.weight[i];
                        if wi == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            let t = target.probs[c * hw + i];
                            if t != 0.0 {
                                let j = c * hw + i;
                                gi[j] = gi[j] - gs * T::of((wi * t) as f64) / (p[j] + eps);
                            }
                        }
                    }
                }
            }
            Op::Ncs { p, q, groups } => {
                let pd = self.value(*p).data();
                let qd = self.value(*q).data();
                let glen = pd.len() / groups.len();
                let valid = groups
                    .iter()
                    .filter(|gr| gr.1 > T::zero() && gr.2 > T::zero())
                    .count();
                let norm = T::of(valid as f64);
                for (gi_idx, &(dot, np, nq)) in groups.iter().enumerate() {
                    if np == T::zero() || nq == T::zero() {
                        continue;
                    }
                    let range = gi_idx * glen..(gi_idx + 1) * glen;
                    let coef = g[0] / norm;
                    // d(-cos)/dp = -(q/(|p||q|) - dot * p / (|p|^3 |q|))
                    for (x, own, other, n_own, n_other) in
                        [(p, pd, qd, np, nq), (q, qd, pd, nq, np)]
                    {
                        if !reach[x.0] {
                            continue;
                        }
                        let gi = grad_buf(grads, *x, pd.len());
                        let a = T::one() / (n_own * n_other);
                        let b = dot / (n_own * n_own * n_own * n_other);
                        for j in range.clone() {
                            gi[j] = gi[j] - coef * (other[j] * a - own[j] * b);
                        }
                    }
                }
            }
        }
    }
}

fn cos_parts<T: Real>(p: &[T], q: &[T]) -> (T, T, T) {
    let mut dot = T::zero();
    let mut pp = T::zero();
    let mut qq = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        dot = dot + a * b;
        pp = pp + a * a;
        qq = qq + b * b;
    }
    (dot, pp.sqrt(), qq.sqrt())
}

fn inputs_of<T>(op: &Op<T>) -> Vec<NodeId> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d {
            input,
            kernel,
            bias,
            ..
        } => vec![*input, *kernel, *bias],
        Op::Relu(x) | Op::Softmax(x) | Op::Upsample2(x) | Op::Scale(x, _) | Op::Sum(x) => {
            vec![*x]
        }
        Op::MaxPool2 { input, .. } | Op::MaskMul { input, .. } => vec![*input],
        Op::Concat(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Mix { a, b, .. } => vec![*a, *b],
        Op::PartialCe { pred, .. } => vec![*pred],
        Op::Ncs { p, q, .. } => vec![*p, *q],
    }
}

fn grad_buf<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

fn im2col<T: Real>(src: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * k * k * hw];
    for c in 0..cin {
        let plane = &src[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad).saturating_sub(kx).min(w);
                    for x in x0..x1 {
                        drow[x] = srow[x + kx - pad];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, dst: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let srow = &src[y * w..(y + 1) * w];
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad).saturating_sub(kx).min(w);
                    for x in x0..x1 {
                        prow[x + kx - pad] = prow[x + kx - pad] + srow[x];
                    }
                }
            }
        }
    }
}
