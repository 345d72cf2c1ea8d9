use std::sync::Arc;

use crate::data::ScribbleLabel;
use crate::error::{Error, Result};
use crate::segmentor::SegmentorParams;
use crate::tensor::{chw, CeReduction, Graph, Tensor};

/// Nonnegative per-pixel saliency, `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    values: Tensor,
}

impl SaliencyMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape(
                "saliency",
                format!("expected [H,W], got {:?}", values.shape()),
            ));
        }
        if let Some(v) = values
            .data()
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Invalid(format!(
                "saliency value {v} is not finite and >= 0"
            )));
        }
        Ok(SaliencyMap { values })
    }

    /// Per-pixel l2 norm over channels of a `[C,H,W]` gradient buffer.
    pub fn from_gradient(grad: &[f32], shape: &[usize]) -> Result<Self> {
        let (c, h, w) = chw(shape, "saliency")?;
        if grad.len() != c * h * w {
            return Err(Error::shape(
                "saliency",
                format!("{} values for {shape:?}", grad.len()),
            ));
        }
        let hw = h * w;
        let data = (0..hw)
            .map(|p| {
                (0..c)
                    .map(|ch| (grad[ch * hw + p] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt() as f32
            })
            .collect();
        Self::new(Tensor::new([h, w], data)?)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn total(&self) -> f64 {
        self.values.data().iter().map(|&v| v as f64).sum()
    }
}

/// Input-gradient norm of the summed partial cross-entropy of `x` against
/// its own scribbles. Parameters are read only.
pub fn compute_saliency(
    params: &SegmentorParams,
    x: &Tensor,
    y: &ScribbleLabel,
) -> Result<SaliencyMap> {
    if y.labeled_count() == 0 {
        return Err(Error::Invalid(
            "saliency needs at least one labeled pixel".into(),
        ));
    }
    let mut g = Graph::<f32>::new();
    let att = params.attach(&mut g, false);
    let xi = g.constant(x.clone());
    let pred = att.forward(&mut g, xi)?;
    let loss = g.partial_ce(pred, Arc::new(y.to_target()), CeReduction::Sum)?;
    g.backward_wrt(loss, &[xi])?;
    let grad = g
        .grad(xi)
        .map(<[f32]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    SaliencyMap::from_gradient(&grad, x.shape())
}
