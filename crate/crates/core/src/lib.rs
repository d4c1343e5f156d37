//! Top-k error, surrogate losses for it, Bregman-divergence views of the
//! entropy-type losses, and tools to probe top-k calibration empirically.
//!
//! Classes and labels are 0-based; ranks and order statistics are 1-based.

pub mod bregman;
pub mod error;
pub mod losses;
pub mod optim;
pub mod parse;
pub mod risk;
pub mod seed;
pub mod synth;
pub mod topk;

pub use error::{Error, Result};
pub use losses::{LossFamily, LossSpec};
pub use topk::{CondDist, ScoreVec, TieBreakPolicy, TopKSet};
