//! Training loop, evaluation, the ablation matrix, mix previews, the
//! gradient-check suite, and the command-line front end.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod demo;
pub mod eval;
pub mod gradcheck;
pub mod train;

pub use ablate::{ablate, row_config, AblationReport};
pub use config::{MixStrategy, TrainConfig};
pub use demo::mix_demo;
pub use eval::{evaluate, evaluate_params, EvalReport};
pub use gradcheck::{run_gradcheck_suite, GradRow, SuiteOptions};
pub use train::{train, train_step, RunReport};
