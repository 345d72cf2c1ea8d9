//! Generates a rings dataset and prints what the scribbles cover.
//!
//! ```bash
//! cargo run --release --example generate_dataset -- [out_dir] [n] [seed]
//! ```

use std::env;
use std::path::PathBuf;

use scribblemix::data::dataset::load_split;
use scribblemix::data::{build_dataset, Split, DEFAULT_COVERAGE};

fn main() -> scribblemix::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let out = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| env::temp_dir().join("scribblemix-examples/rings"));
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let manifest = build_dataset(&out, n, 64, seed, &DEFAULT_COVERAGE)?;
    println!(
        "{} samples in {}: train {}, val {}, test {}",
        manifest.entries.len(),
        out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );

    // labeled fraction of each class region, averaged over the training split
    let train = load_split(&out, &manifest, Split::Train)?;
    let mut mean = [0.0; 4];
    for s in &train {
        for (m, c) in mean.iter_mut().zip(s.scribble.coverage(&s.mask)) {
            *m += c / train.len() as f64;
        }
    }
    for (k, (got, want)) in mean.iter().zip(DEFAULT_COVERAGE).enumerate() {
        println!("class {k}: coverage {got:.4} (target {want:.3})");
    }
    if !manifest.warnings.is_empty() {
        println!("shrunk scribble targets: {:?}", manifest.warnings);
    }
    Ok(())
}
