//! Frame-by-frame inference: persistent recurrent state, a fixed ring buffer
//! of recent frames, view-difficulty scoring and selective flip refinement.

mod buffer;
mod engine;
mod oracle;
mod policy;

pub use buffer::{RingBuffer, Slot};
pub use engine::{
    flip_refine, forward_pass, mirrored_pass, unflip, FrameResult, FrontPass, PassCounter, PassOutput, StageLatency,
    StreamState,
};
pub use oracle::{
    calibrate_prototypes, oracle_batch, oracle_batch_with_noise, view_key, BatchOutput, Calibration,
    GroundTruthLifter, Lifter, ViewErrorEntry,
};
pub use policy::{difficulty_score, RefinementPolicy, DEFAULT_HYSTERESIS, DEFAULT_SIGMA};
