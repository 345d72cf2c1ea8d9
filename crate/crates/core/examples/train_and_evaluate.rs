//! Trains the full configuration for a few epochs, then reloads the best
//! checkpoint and scores the test split.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate -- [epochs] [key=value ...]
//! ```

use std::env;

use scribblemix::data::{build_dataset, Split, DEFAULT_COVERAGE};
use scribblemix::harness::{evaluate, train, TrainConfig};

fn main() -> scribblemix::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(5);
    let root = env::temp_dir().join("scribblemix-examples/train");
    let data = root.join("data");
    build_dataset(&data, 60, 64, 0, &DEFAULT_COVERAGE)?;

    let mut cfg = TrainConfig {
        data: data.clone(),
        epochs,
        ..TrainConfig::default()
    };
    cfg.apply_overrides(&args[args.len().min(1)..])?;
    print!("{}", cfg.to_text());

    let run = root.join("run");
    let rep = train(&cfg, Some(&run))?;
    print!("{}", rep.trace_csv());
    println!("best epoch {}, {:.1}s", rep.best_epoch, rep.wall_clock_secs);

    let test = evaluate(&run.join("best.ckpt"), &data, Split::Test)?;
    print!("{}", test.summary_text());
    Ok(())
}
