//! Saliency-guided block mixing of two samples, with occlusion, plus the
//! MixUp and CutMix alternatives. Writes PGM previews of each.
//!
//! ```bash
//! cargo run --release --example saliency_mix -- [out_dir]
//! ```

use std::env;
use std::path::PathBuf;

use scribblemix::data::dataset::load_split;
use scribblemix::data::{build_dataset, load_manifest, Split, DEFAULT_COVERAGE};
use scribblemix::harness::{mix_demo, MixStrategy};
use scribblemix::mix::{compute_saliency, optimize_mix_plan_traced, PlanConfig};
use scribblemix::segmentor::SegmentorParams;
use scribblemix::RngStream;

fn main() -> scribblemix::Result<()> {
    let out = env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| env::temp_dir().join("scribblemix-examples/mix"));
    let data = out.join("data");
    build_dataset(&data, 20, 64, 0, &DEFAULT_COVERAGE)?;
    let manifest = load_manifest(&data)?;
    let train = load_split(&data, &manifest, Split::Train)?;
    let (a, b) = (&train[0], &train[1]);

    // saliency comes from an untrained model here; training uses the live one
    let params = SegmentorParams::init(4, 8, &RngStream::new(0, 0))?;
    let s1 = compute_saliency(&params, &a.image, &a.scribble)?;
    let s2 = compute_saliency(&params, &b.image, &b.scribble)?;
    let (plan, trace) = optimize_mix_plan_traced(&s1, &s2, &PlanConfig::default())?;
    println!("saliency totals: {:.4} and {:.4}", s1.total(), s2.total());
    println!("objective per iteration: {trace:.4?}");
    let from2 = plan.z.iter().filter(|&&z| z == 1).count();
    println!(
        "{from2} of {} blocks taken from the second image",
        plan.blocks()
    );

    for strategy in [MixStrategy::Puzzle, MixStrategy::Mixup, MixStrategy::Cutmix] {
        let dir = out.join(strategy.to_string());
        let files = mix_demo(&data, &dir, 0, strategy, None)?;
        println!("{strategy}: {} files in {}", files.len(), dir.display());
    }
    Ok(())
}
