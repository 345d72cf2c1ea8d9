//! Scribble-supervised segmentation with saliency-guided mix augmentation,
//! random occlusion and global/local cycle-consistency regularization.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tensor`]), a mini encoder-decoder segmentor ([`segmentor`]), a
//! synthetic cardiac-rings dataset with scribble synthesis ([`data`]), the
//! mixing machinery ([`mix`]), the loss terms and Dice metric ([`losses`]),
//! and the training / evaluation / ablation harness ([`harness`]).
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```bash
//! cargo run --release -p scribblemix --example generate_dataset
//! cargo run --release -p scribblemix --example saliency_mix
//! cargo run --release -p scribblemix --example consistency_losses
//! cargo run --release -p scribblemix --example train_and_evaluate
//! cargo run --release -p scribblemix --example ablation_study
//! cargo run --release -p scribblemix --example gradient_check
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod mix;
pub mod segmentor;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, NodeId, RngStream, Tensor};
