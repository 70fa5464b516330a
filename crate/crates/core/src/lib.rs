//! Training-free temporal token fusion for frame sequences.
//!
//! Each frame is split into 14×14 patches. A patch keeps its token from the
//! previous fused frame unless its luminance changed by more than a threshold
//! or the previous step's attention ranks it among the most task-relevant
//! patches. Periodic keyframes recompute everything. Because reused token
//! rows are bit-identical to the previous step's rows, the matching rows of
//! any linear projection (Q, K or V) can be copied rather than recomputed;
//! [`kqv`] checks that equivalence and counts the arithmetic saved.
//!
//! - [`imagio`]: PPM frames, luminance and the patch grid
//! - [`detection`]: pixel-difference and attention-relevance masks
//! - [`fusion`]: keyframes, mask combination, hard token selection, rolling state
//! - [`toyenc`]: deterministic encoder and attention stand-in, splitmix64
//! - [`kqv`]: selective projection and reuse ledger
//! - [`harness`]: configs, synthetic episodes, reports, sweeps, tensor files

pub mod detection;
pub mod fusion;
pub mod harness;
pub mod imagio;
pub mod kqv;
pub mod matrix;
pub mod toyenc;

pub use detection::{AttentionMode, AttentionSlice, PatchMask};
pub use fusion::{FusionConfig, FusionState, StepResult};
pub use imagio::{FrameObservation, GrayscaleImage, PatchGrid};
pub use matrix::{Matrix, TokenMatrix};
