//! Finite-difference check of every differentiable op and loss term, in
//! f64. Pass `--fault` to break the ReLU backward pass and watch it fail.
//!
//! ```bash
//! cargo run --release --example gradient_check -- [--fault]
//! ```

use scribblemix::harness::gradcheck::{format_table, run_gradcheck_suite, SuiteOptions};
use scribblemix::tensor::Fault;

fn main() -> scribblemix::Result<()> {
    let fault = std::env::args().any(|a| a == "--fault");
    let rows = run_gradcheck_suite(&SuiteOptions {
        instances: 5,
        seed: 0,
        fault: fault.then_some(Fault::ReluBackward),
    })?;
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passes()).count();
    println!("{} of {} checks pass", rows.len() - failed, rows.len());
    Ok(())
}
