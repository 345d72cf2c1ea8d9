//! Mix augmentation: saliency maps, block mix plans and their search,
//! random occlusion, and the MixUp / CutMix alternatives.

mod hungarian;
mod occlusion;
mod plan;
mod saliency;
mod strategies;

pub use hungarian::max_weight_assignment;
pub use occlusion::{
    apply_occlusion, sample_occlusion, OcclusionLabel, OcclusionMask, DEFAULT_SIDE_FRAC,
};
pub use plan::{
    exhaustive_mix_plan, optimize_mix_plan, optimize_mix_plan_traced, MixPlan, PlanConfig,
};
pub use saliency::{compute_saliency, SaliencyMap};
pub use strategies::{
    cutmix, cutmix_with_rect, mixup_linear, mixup_target, mixup_with_lambda, Rect,
};

use crate::data::ScribbleLabel;
use crate::error::Result;
use crate::tensor::Tensor;

/// `M(a1, a2)` for tensors.
pub fn apply_mix(plan: &MixPlan, a1: &Tensor, a2: &Tensor) -> Result<Tensor> {
    plan.apply(a1, a2)
}

/// `M(y1, y2)` for scribbles.
pub fn apply_mix_labels(
    plan: &MixPlan,
    y1: &ScribbleLabel,
    y2: &ScribbleLabel,
) -> Result<ScribbleLabel> {
    plan.apply_labels(y1, y2)
}
