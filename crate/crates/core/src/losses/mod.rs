//! Scribble supervision and cycle-consistency losses, plus Dice.
//!
//! Each loss exists twice: as a graph builder (generic over the element type,
//! used by training and the gradient checks) and as a plain function on
//! tensors that evaluates the same graph in `f64`.

mod consistency;
mod dice;

pub use consistency::{
    global_consistency, global_consistency_node, largest_cc_target, local_consistency,
    local_consistency_node, MixedView, NcsMode,
};
pub use dice::{dice_score, DiceScores};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{CeReduction, CeTarget, Graph, NodeId, Real, Tensor};

/// Relative weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub unmix: f64,
    pub mix: f64,
    pub con_global: f64,
    pub con_local: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            unmix: 1.0,
            mix: 1.0,
            con_global: 0.05,
            con_local: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.unmix, self.mix, self.con_global, self.con_local];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(format!(
                "loss weights must be finite and >= 0: {all:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted loss terms of one step, with the labeled-pixel counts of the
/// cross-entropy terms (summed over both images of the pair).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub unmix: f64,
    pub mix: f64,
    pub con_g: f64,
    pub con_l: f64,
    pub unmix_labeled: usize,
    pub mix_labeled: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub unmix: f64,
    pub mix: f64,
    pub con_g: f64,
    pub con_l: f64,
    pub total: f64,
    pub unmix_labeled: usize,
    pub mix_labeled: usize,
}

/// Weighted sum of the four terms.
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        unmix: terms.unmix,
        mix: terms.mix,
        con_g: terms.con_g,
        con_l: terms.con_l,
        total: w.unmix * terms.unmix
            + w.mix * terms.mix
            + w.con_global * terms.con_g
            + w.con_local * terms.con_l,
        unmix_labeled: terms.unmix_labeled,
        mix_labeled: terms.mix_labeled,
    }
}

/// `(ce(p1, t1) + ce(p2, t2)) / 2` on the graph. Serves both the unmixed
/// and the mixed supervision terms.
pub fn symmetric_ce_node<T: Real>(
    g: &mut Graph<T>,
    p1: NodeId,
    t1: Arc<CeTarget>,
    p2: NodeId,
    t2: Arc<CeTarget>,
    reduction: CeReduction,
) -> Result<NodeId> {
    let a = g.partial_ce(p1, t1, reduction)?;
    let b = g.partial_ce(p2, t2, reduction)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, T::of(0.5)))
}

pub(crate) fn eval_f64(build: impl FnOnce(&mut Graph<f64>) -> Result<NodeId>) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let out = build(&mut g)?;
    g.value(out).item()
}

/// Summed cross-entropy over labeled pixels of a `[K,H,W]` prediction.
pub fn partial_ce(pred: &Tensor, target: &CeTarget) -> Result<f64> {
    let t = Arc::new(target.clone());
    eval_f64(|g| {
        let p = g.constant(pred.cast());
        g.partial_ce(p, t, CeReduction::Sum)
    })
}

pub fn loss_unmix(pred1: &Tensor, y1: &CeTarget, pred2: &Tensor, y2: &CeTarget) -> Result<f64> {
    Ok(0.5 * (partial_ce(pred1, y1)? + partial_ce(pred2, y2)?))
}

/// Same form as [`loss_unmix`] on the two mixed-and-occluded directions.
pub fn loss_mix(
    pred_o12: &Tensor,
    y_o12: &CeTarget,
    pred_o21: &Tensor,
    y_o21: &CeTarget,
) -> Result<f64> {
    Ok(0.5 * (partial_ce(pred_o12, y_o12)? + partial_ce(pred_o21, y_o21)?))
}

/// Negative cosine similarity of two tensors flattened to vectors.
pub fn ncs(p: &Tensor, q: &Tensor) -> Result<f64> {
    eval_f64(|g| {
        let a = g.constant(p.cast());
        let b = g.constant(q.cast());
        g.ncs(a, b)
    })
}
