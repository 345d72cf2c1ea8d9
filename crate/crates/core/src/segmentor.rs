//! Mini U-Net style encoder-decoder producing per-pixel class probabilities.
//!
//! Topology for base width `c` and `K` classes:
//!
//! ```text
//! enc1: conv3x3(1->c) relu conv3x3(c->c) relu ----------------------+
//! pool                                                              |
//! enc2: conv3x3(c->2c) relu conv3x3(2c->2c) relu -------------+     |
//! pool                                                        |     |
//! mid:  conv3x3(2c->4c) relu conv3x3(4c->4c) relu             |     |
//! up, concat(enc2) -> conv3x3(6c->2c) relu conv3x3(2c->2c) relu     |
//! up, concat(enc1) -> conv3x3(3c->c) relu conv3x3(c->c) relu <------+
//! head: conv1x1(c->K), softmax over channels
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::nst::{self, NstValue};
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Real, RngStream, Tensor};

pub const DEFAULT_BASE_CHANNELS: usize = 8;

const CKPT_MAGIC: &str = "scribblemix-ckpt v1";

/// How the weights were initialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InitRecord {
    pub seed: u64,
    pub stream: u64,
    pub scheme: String,
}

/// Weights of the segmentor, stored as alternating (kernel, bias) tensors
/// in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentorParams {
    classes: usize,
    base: usize,
    tensors: Vec<Tensor>,
    init: InitRecord,
}

/// `(c_in, c_out, kernel size)` for every conv layer, in order.
pub fn layer_specs(classes: usize, c: usize) -> Vec<(usize, usize, usize)> {
    vec![
        (1, c, 3),
        (c, c, 3),
        (c, 2 * c, 3),
        (2 * c, 2 * c, 3),
        (2 * c, 4 * c, 3),
        (4 * c, 4 * c, 3),
        (6 * c, 2 * c, 3),
        (2 * c, 2 * c, 3),
        (3 * c, c, 3),
        (c, c, 3),
        (c, classes, 1),
    ]
}

/// Per-pixel class probabilities `[K, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Tensor,
}

impl Prediction {
    pub fn classes(&self) -> usize {
        self.probs.shape()[0]
    }

    /// Per-pixel argmax; ties resolve to the lowest class index.
    pub fn hard_labels(&self) -> Vec<u8> {
        argmax_channels(self.probs.data(), self.classes())
    }
}

/// Argmax over the leading dimension of a `[K, H*W]` buffer.
pub fn argmax_channels<T: PartialOrd + Copy>(probs: &[T], classes: usize) -> Vec<u8> {
    let hw = probs.len() / classes;
    (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..classes {
                if probs[k * hw + p] > probs[best * hw + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Param leaf ids of a [`SegmentorParams`] attached to a graph.
#[derive(Clone, Debug)]
pub struct Attached {
    pub ids: Vec<NodeId>,
    classes: usize,
}

impl SegmentorParams {
    /// Fan-in scaled uniform init (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn init(classes: usize, base: usize, rng: &RngStream) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Invalid(format!(
                "need K >= 2 classes, got {classes}"
            )));
        }
        if classes > 255 {
            return Err(Error::Invalid(format!(
                "K={classes} does not fit a byte label"
            )));
        }
        if base < 4 {
            return Err(Error::Invalid(format!(
                "base channels must be >= 4, got {base}"
            )));
        }
        let mut r = rng.clone();
        let mut tensors = Vec::new();
        for (cin, cout, k) in layer_specs(classes, base) {
            let fan_in = (cin * k * k) as f64;
            let bound = (6.0 / fan_in).sqrt();
            tensors.push(Tensor::from_fn([cout, cin, k, k], |_| {
                r.range(-bound, bound) as f32
            }));
            tensors.push(Tensor::zeros([cout]));
        }
        Ok(SegmentorParams {
            classes,
            base,
            tensors,
            init: InitRecord {
                seed: rng.seed(),
                stream: rng.stream_id(),
                scheme: "fan-in-uniform".into(),
            },
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn base_channels(&self) -> usize {
        self.base
    }

    pub fn init_record(&self) -> &InitRecord {
        &self.init
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Adds every tensor as a leaf of `g`; trainable leaves receive gradients.
    pub fn attach<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Attached {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                let v = t.cast::<T>();
                if trainable {
                    g.param(v)
                } else {
                    g.constant(v)
                }
            })
            .collect();
        Attached {
            ids,
            classes: self.classes,
        }
    }

    /// Gradients of the attached leaves, cast back to f32 (zeros where absent).
    pub fn collect_grads<T: Real>(&self, g: &Graph<T>, att: &Attached) -> Vec<Vec<f32>> {
        att.ids
            .iter()
            .zip(&self.tensors)
            .map(|(&id, t)| match g.grad(id) {
                Some(gr) => gr.iter().map(|v| v.as_f64() as f32).collect(),
                None => vec![0.0; t.numel()],
            })
            .collect()
    }
}

/// Closed-form parameter count of the fixed topology.
pub fn param_count_for(classes: usize, base: usize) -> usize {
    layer_specs(classes, base)
        .into_iter()
        .map(|(i, o, k)| i * o * k * k + o)
        .sum()
}

impl Attached {
    pub fn with_ids(ids: Vec<NodeId>, classes: usize) -> Self {
        Attached { ids, classes }
    }

    fn conv<T: Real>(&self, g: &mut Graph<T>, layer: usize, x: NodeId) -> Result<NodeId> {
        g.conv2d(x, self.ids[2 * layer], self.ids[2 * layer + 1])
    }

    fn conv_relu<T: Real>(&self, g: &mut Graph<T>, layer: usize, x: NodeId) -> Result<NodeId> {
        let y = self.conv(g, layer, x)?;
        Ok(g.relu(y))
    }

    /// Builds `S(x)` on the graph for a `[1,H,W]` input node; returns the
    /// probability node.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        match shape.as_slice() {
            [1, h, w] if h % 4 == 0 && w % 4 == 0 && *h > 0 && *w > 0 => {}
            _ => {
                return Err(Error::shape(
                    "segmentor",
                    format!("input must be [1,H,W] with H, W divisible by 4, got {shape:?}"),
                ))
            }
        }
        let e1 = self.conv_relu(g, 0, x)?;
        let e1 = self.conv_relu(g, 1, e1)?;
        let p1 = g.maxpool2(e1)?;
        let e2 = self.conv_relu(g, 2, p1)?;
        let e2 = self.conv_relu(g, 3, e2)?;
        let p2 = g.maxpool2(e2)?;
        let m = self.conv_relu(g, 4, p2)?;
        let m = self.conv_relu(g, 5, m)?;
        let u2 = g.upsample2(m)?;
        let c2 = g.concat_channels(u2, e2)?;
        let d2 = self.conv_relu(g, 6, c2)?;
        let d2 = self.conv_relu(g, 7, d2)?;
        let u1 = g.upsample2(d2)?;
        let c1 = g.concat_channels(u1, e1)?;
        let d1 = self.conv_relu(g, 8, c1)?;
        let d1 = self.conv_relu(g, 9, d1)?;
        let logits = self.conv(g, 10, d1)?;
        debug_assert_eq!(g.value(logits).shape()[0], self.classes);
        g.channel_softmax(logits)
    }
}

/// Evaluates `S(x)` for a `[1,H,W]` image.
pub fn forward(params: &SegmentorParams, x: &Tensor) -> Result<Prediction> {
    if !x.all_finite() {
        return Err(Error::NonFinite("segmentor input".into()));
    }
    let mut g = Graph::<f32>::new();
    let att = params.attach(&mut g, false);
    let xi = g.constant(x.clone());
    let out = att.forward(&mut g, xi)?;
    Ok(Prediction {
        probs: g.value(out).clone(),
    })
}

/// Writes the header line followed by every parameter tensor as an NST record.
pub fn save_checkpoint(params: &SegmentorParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CKPT_MAGIC} K={} c={}", params.classes, params.base)
        .map_err(|e| Error::io(path, e))?;
    for t in &params.tensors {
        nst::write_record(&mut w, &NstValue::F32(t.clone())).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SegmentorParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let header = header.trim_end();
    let rest = header
        .strip_prefix(CKPT_MAGIC)
        .ok_or_else(|| Error::BadMagic(path.display().to_string()))?;
    let mut classes = None;
    let mut base = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("K", v)) => classes = v.parse::<usize>().ok(),
            Some(("c", v)) => base = v.parse::<usize>().ok(),
            _ => return Err(Error::Parse(format!("checkpoint header token {tok:?}"))),
        }
    }
    let (classes, base) = classes
        .zip(base)
        .ok_or_else(|| Error::Parse(format!("checkpoint header {header:?}")))?;
    let specs = layer_specs(classes, base);
    let mut tensors = Vec::with_capacity(2 * specs.len());
    for (cin, cout, k) in specs {
        for shape in [vec![cout, cin, k, k], vec![cout]] {
            let t = match nst::read_record(&mut r)? {
                NstValue::F32(t) => t,
                NstValue::U8 { .. } => {
                    return Err(Error::Parse("checkpoint tensor stored as u8".into()))
                }
            };
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "load_checkpoint",
                    format!("expected {shape:?}, found {:?}", t.shape()),
                ));
            }
            tensors.push(t);
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Parse(
            "trailing bytes after checkpoint tensors".into(),
        ));
    }
    Ok(SegmentorParams {
        classes,
        base,
        tensors,
        init: InitRecord {
            seed: 0,
            stream: 0,
            scheme: "checkpoint".into(),
        },
    })
}
