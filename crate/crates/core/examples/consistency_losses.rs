//! The loss terms on hand-made predictions: partial cross-entropy, the
//! largest-component target behind local consistency, and global
//! consistency under a mix plan with occlusion.
//!
//! ```bash
//! cargo run --release --example consistency_losses
//! ```

use scribblemix::data::{ScribbleLabel, UNLABELED};
use scribblemix::losses::{
    global_consistency, largest_cc_target, local_consistency, partial_ce, total_loss, LossTerms,
    LossWeights, MixedView,
};
use scribblemix::mix::{sample_occlusion, MixPlan};
use scribblemix::{RngStream, Tensor};

/// A per-pixel model: class probabilities depend on the pixel value only.
fn pixel_model(x: &Tensor) -> Tensor {
    let hw = x.numel();
    let mut p = vec![0.0f32; 2 * hw];
    for (i, &v) in x.data().iter().enumerate() {
        let s = 1.0 / (1.0 + (-4.0 * v).exp());
        p[i] = 1.0 - s;
        p[hw + i] = s;
    }
    Tensor::new([2, x.shape()[1], x.shape()[2]], p).unwrap()
}

fn main() -> scribblemix::Result<()> {
    // partial cross-entropy only sees labeled pixels
    let pred = Tensor::full([2, 2, 2], 0.5);
    let y = ScribbleLabel::new(2, 2, 2, vec![1, UNLABELED, UNLABELED, UNLABELED])?;
    println!(
        "partial CE, one labeled pixel at p = 0.5: {:.6}",
        partial_ce(&pred, &y.to_target())?
    );

    // two foreground islands: the smaller one becomes background
    let (h, w) = (6, 8);
    let mut probs = vec![0.2f32; 2 * h * w];
    for p in 0..h * w {
        let (r, c) = (p / w, p % w);
        let fg = (r < 3 && c < 3) || (r == 5 && c == 7);
        probs[p] = if fg { 0.2 } else { 0.8 };
        probs[h * w + p] = if fg { 0.8 } else { 0.2 };
    }
    let pred = Tensor::new([2, h, w], probs)?;
    let (mask, _) = largest_cc_target(&pred)?;
    for row in mask.data().chunks(w) {
        println!("  {row:?}");
    }
    println!("local consistency: {:.6}", local_consistency(&pred, &pred)?);

    // a per-pixel model is exactly consistent under any mix plan
    let mut rng = RngStream::new(1, 0);
    let x1 = Tensor::from_fn([1, 16, 16], |_| rng.range(-1.0, 1.0) as f32);
    let x2 = Tensor::from_fn([1, 16, 16], |_| rng.range(-1.0, 1.0) as f32);
    let mut plan = MixPlan::identity(16, 16, 8)?;
    plan.z = vec![0, 1, 1, 0];
    plan.pi2 = vec![3, 2, 1, 0];
    let occ = sample_occlusion(&mut rng, 16, 16, 0.25)?;
    let xo12 = occ.apply_image(&plan.apply(&x1, &x2)?)?;
    let xo21 = occ.apply_image(&plan.apply(&x2, &x1)?)?;
    let view = MixedView::from_plan(&plan, &occ)?;
    let g = global_consistency(
        &view,
        &view,
        &pixel_model(&x1),
        &pixel_model(&x2),
        &pixel_model(&xo12),
        &pixel_model(&xo21),
    )?;
    println!("global consistency of a per-pixel model: {g:.9}");

    let terms = LossTerms {
        unmix: 0.5,
        mix: 0.3,
        con_g: -1.0,
        con_l: -0.9,
        ..LossTerms::default()
    };
    println!(
        "total with default weights: {:.6}",
        total_loss(&terms, &LossWeights::default()).total
    );
    Ok(())
}
