use std::sync::Arc;

use super::eval_f64;
use crate::data::regions::{components, largest};
use crate::data::DenseMask;
use crate::error::{Error, Result};
use crate::mix::{MixPlan, OcclusionMask};
use crate::segmentor::argmax_channels;
use crate::tensor::{chw, Graph, MixField, NodeId, Real, Tensor};

/// How two prediction tensors are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NcsMode {
    /// Whole `[K,H,W]` tensors flattened to one vector.
    #[default]
    Flat,
    /// Cosine per class slice, averaged.
    PerClass,
}

impl NcsMode {
    pub fn node<T: Real>(self, g: &mut Graph<T>, p: NodeId, q: NodeId) -> Result<NodeId> {
        match self {
            NcsMode::Flat => g.ncs(p, q),
            NcsMode::PerClass => g.ncs_per_class(p, q),
        }
    }
}

/// One mixing direction: the mix field and the `1 - O` keep mask.
#[derive(Clone, Debug)]
pub struct MixedView {
    pub field: Arc<MixField>,
    pub keep: Arc<Vec<f32>>,
}

impl MixedView {
    pub fn new(field: MixField, occlusion: &OcclusionMask) -> Result<Self> {
        if (field.height, field.width) != (occlusion.height(), occlusion.width()) {
            return Err(Error::shape(
                "global_consistency",
                format!(
                    "field {}x{} vs occlusion {}x{}",
                    field.height,
                    field.width,
                    occlusion.height(),
                    occlusion.width()
                ),
            ));
        }
        Ok(MixedView {
            field: Arc::new(field),
            keep: Arc::new(occlusion.keep()),
        })
    }

    pub fn from_plan(plan: &MixPlan, occlusion: &OcclusionMask) -> Result<Self> {
        plan.validate()?;
        Self::new(plan.field(), occlusion)
    }
}

/// `ncs((1-O) * M(p1, p2), (1-O) * q)` for one direction. The occluded
/// region is masked on both sides: a softmax segmentor never outputs zeros
/// there, so only unoccluded pixels are comparable.
fn direction<T: Real>(
    g: &mut Graph<T>,
    view: &MixedView,
    p1: NodeId,
    p2: NodeId,
    q: NodeId,
    mode: NcsMode,
) -> Result<NodeId> {
    let mixed = g.mix(p1, p2, view.field.clone())?;
    let p = g.mask_mul(mixed, view.keep.clone())?;
    let q = g.mask_mul(q, view.keep.clone())?;
    mode.node(g, p, q)
}

/// Global consistency over both mixing directions. With `stopgrad` the
/// mixed-prediction side is detached.
#[allow(clippy::too_many_arguments)]
pub fn global_consistency_node<T: Real>(
    g: &mut Graph<T>,
    view12: &MixedView,
    view21: &MixedView,
    pred1: NodeId,
    pred2: NodeId,
    pred_o12: NodeId,
    pred_o21: NodeId,
    stopgrad: bool,
    mode: NcsMode,
) -> Result<NodeId> {
    let (p1, p2) = if stopgrad {
        (g.detach(pred1), g.detach(pred2))
    } else {
        (pred1, pred2)
    };
    let a = direction(g, view12, p1, p2, pred_o12, mode)?;
    let b = direction(g, view21, p2, p1, pred_o21, mode)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, T::of(0.5)))
}

/// Plain-value form of [`global_consistency_node`].
pub fn global_consistency(
    view12: &MixedView,
    view21: &MixedView,
    pred1: &Tensor,
    pred2: &Tensor,
    pred_o12: &Tensor,
    pred_o21: &Tensor,
) -> Result<f64> {
    eval_f64(|g| {
        let ids = [pred1, pred2, pred_o12, pred_o21].map(|t| g.constant(t.cast()));
        global_consistency_node(
            g,
            view12,
            view21,
            ids[0],
            ids[1],
            ids[2],
            ids[3],
            false,
            NcsMode::Flat,
        )
    })
}

/// Argmax labels with, for every foreground class, only its largest
/// 4-connected component kept; everything else becomes background.
/// Returns the mask and its one-hot `[K,H,W]` encoding.
pub fn largest_cc_target<T: Real>(pred: &Tensor<T>) -> Result<(DenseMask, Tensor<T>)> {
    let (k, h, w) = chw(pred.shape(), "largest_cc_target")?;
    if k < 2 {
        return Err(Error::Invalid(format!(
            "largest_cc_target needs K >= 2, got {k}"
        )));
    }
    let mut labels = argmax_channels(pred.data(), k);
    for class in 1..k as u8 {
        let comps = components(h, w, |p| labels[p] == class);
        if comps.len() < 2 {
            continue;
        }
        let keep = largest(&comps).map(|c| c.first);
        for c in comps.iter().filter(|c| Some(c.first) != keep) {
            for &p in &c.pixels {
                labels[p] = 0;
            }
        }
    }
    let hw = h * w;
    let mut onehot = vec![T::zero(); k * hw];
    for (p, &l) in labels.iter().enumerate() {
        onehot[l as usize * hw + p] = T::one();
    }
    Ok((
        DenseMask::new(k, h, w, labels)?,
        Tensor::new([k, h, w], onehot)?,
    ))
}

/// Local consistency of both unmixed predictions against their
/// largest-component targets, which are held constant.
pub fn local_consistency_node<T: Real>(
    g: &mut Graph<T>,
    pred1: NodeId,
    pred2: NodeId,
    mode: NcsMode,
) -> Result<NodeId> {
    let mut terms = Vec::with_capacity(2);
    for p in [pred1, pred2] {
        let (_, target) = largest_cc_target(g.value(p))?;
        let t = g.constant(target);
        terms.push(mode.node(g, p, t)?);
    }
    let s = g.add(terms[0], terms[1])?;
    Ok(g.scale(s, T::of(0.5)))
}

pub fn local_consistency(pred1: &Tensor, pred2: &Tensor) -> Result<f64> {
    eval_f64(|g| {
        let a = g.constant(pred1.cast());
        let b = g.constant(pred2.cast());
        local_consistency_node(g, a, b, NcsMode::Flat)
    })
}
