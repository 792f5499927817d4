//! Small differentiable network stack: a reverse-accumulation tape, the
//! parameter store, the model components and a finite-difference checker.

pub mod gradcheck;
pub mod model;
pub mod objective;
pub mod params;
pub mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, DEFAULT_STEP, grad_check_with_fault, Component, FaultInjection, GradCheckReport};
pub use model::{
    basis_generator_forward, encode_keypoints, motion_encoder_forward, pose_decoder_forward,
    view_encoder_forward, FrameInputs, FrameVars, Model, INPUT_DIM, OUTPUT_DIM,
};
pub use objective::{sequence_loss, LossVars, ObjectiveSpec, SequenceBatch};
pub use params::ParamStore;
pub use tape::{Gradients, Mode, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeluKind {
    /// `x·Φ(x)` with the error function.
    Erf,
    /// The `tanh` approximation of `Φ`.
    Tanh,
}

/// Widths of every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_view: usize,
    pub d_motion: usize,
    pub d_base: usize,
    /// Number of generated bases per frame.
    pub k: usize,
    /// Recurrent hidden width of the motion encoder and the decoder.
    pub hidden: usize,
    /// Width of the inner view-encoder layers.
    pub view_hidden: usize,
    pub dropout: f64,
    pub gelu: GeluKind,
    /// Decoder context window: how many prior outputs are averaged.
    pub window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_view: 32,
            d_motion: 32,
            d_base: 32,
            k: 4,
            hidden: 64,
            view_hidden: 64,
            dropout: 0.1,
            gelu: GeluKind::Erf,
            window: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_view != self.d_motion || self.d_motion != self.d_base {
            return Err(Error::InvalidArgument(format!(
                "d_view, d_motion and d_base must be equal (got {}, {}, {})",
                self.d_view, self.d_motion, self.d_base
            )));
        }
        if self.k == 0 || self.d_motion == 0 || self.hidden == 0 || self.view_hidden == 0 || self.window == 0 {
            return Err(Error::InvalidArgument("k, widths and window must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Shared feature width.
    pub fn dim(&self) -> usize {
        self.d_motion
    }
}
