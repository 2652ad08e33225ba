//! Surrogate losses for non-differentiable evaluation metrics.
//!
//! A metric over model scores is rewritten as `g(h(f(s)))`: pairwise score
//! comparisons `f`, a sign step `h`, and an exact evaluator `g` over the
//! resulting bits. Training replaces `h` with a sigmoid and `g` with an
//! interpolant over sampled anchor configurations, which yields a loss with
//! useful gradients.

pub mod anchors;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod refactor;
pub mod relax;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
