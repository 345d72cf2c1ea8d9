//! The five-row ablation: each row adds one component, from partial
//! cross-entropy alone up to the full objective. Short by default; the
//! acceptance target runs the full-length version.
//!
//! ```bash
//! cargo run --release --example ablation_study -- [epochs] [seeds] [rows]
//! ```

use std::env;

use scribblemix::data::{build_dataset, DEFAULT_COVERAGE};
use scribblemix::harness::ablate::{parse_rows, row_spec};
use scribblemix::harness::{ablate, TrainConfig};

fn main() -> scribblemix::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let rows = parse_rows(args.get(2).map_or("1-5", String::as_str))?;
    let root = env::temp_dir().join("scribblemix-examples/ablation");
    let data = root.join("data");
    build_dataset(&data, 60, 64, 0, &DEFAULT_COVERAGE)?;

    for &r in &rows {
        println!("{:?}", row_spec(r)?);
    }
    let base = TrainConfig {
        data,
        epochs,
        ..TrainConfig::default()
    };
    let rep = ablate(&base, &rows, seeds, Some(&root.join("runs")))?;
    print!("{}", rep.summary_csv());
    Ok(())
}
