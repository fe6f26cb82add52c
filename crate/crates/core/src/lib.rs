//! Evaluation and existence-gating toolkit for referring video object
//! segmentation.
//!
//! * [`mask`] and [`rle`]: binary mask sequences and their run-length form.
//! * [`metrics`]: region J, boundary F, presence confusion (N-acc, T-acc)
//!   and dataset aggregation into J&F / Final rows.
//! * [`gating`]: the existence head, its BCE training, threshold gating
//!   and incremental threshold sweeps.
//! * [`synth`]: seeded synthetic scenarios and brute-force oracles.

pub mod error;
pub mod gating;
pub mod mask;
pub mod metrics;
pub mod query;
pub mod rle;
pub mod sum;
pub mod synth;

pub use error::{Error, Result};
pub use mask::{indicator, union_masks, union_sequences, Mask, MaskSequence};
pub use query::QueryRecord;
pub use rle::{rle_decode, rle_encode, RleMask};
