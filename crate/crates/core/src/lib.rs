//! Motion-guided dual-camera tip tracking.
//!
//! Cross-camera mutual templates, a selective-scan motion tokenizer and a
//! motion-guided prediction head localize the target in both cameras;
//! stereo disparity recovers its 3D position and the metrics suite turns
//! 3D trajectories into skill measures.

pub mod cmt;
pub mod config;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod mmh;
pub mod motion;
pub mod numeric;
pub mod oracles;
pub mod pyramid;
pub mod report;
pub mod selftest;
pub mod session;
pub mod stereo;
pub mod tracker;

pub use error::{Error, Result};
