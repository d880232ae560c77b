//! Stacking-ensemble video summarization.
//!
//! A shared self-attention encoder feeds two base learners: a shot-level
//! interest detector (anchors, focal classification, offset regression, NMS)
//! and a frame-level keyframe labeler. Their per-frame outputs are fused by
//! averaging or by a small meta-learner, and the fused scores are turned into
//! a summary with kernel temporal segmentation plus a budgeted 0/1 knapsack.
//!
//! Everything runs in `f64` on the CPU and is deterministic given a seed.

pub mod checkpoint;
pub mod data_model;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod frame_head;
pub mod fusion;
pub mod interest_head;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod summarizer;
pub mod training;

pub use error::{Error, Result};
