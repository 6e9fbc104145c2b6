//! Decoding grasp phase and grasped object from multi-unit spike trains with
//! a bidirectional LSTM.

pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod realtime;
pub mod scalar;
pub mod seed;
pub mod session;
pub mod synth;
pub mod train;
pub mod tuner;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type BiLstmModel32 = nn::BiLstmModel<f32>;
pub type BiLstmModel64 = nn::BiLstmModel<f64>;
pub type GradientSet32 = nn::GradientSet<f32>;
pub type GradientSet64 = nn::GradientSet<f64>;
pub type SequenceBatch32 = nn::SequenceBatch<f32>;
pub type SequenceBatch64 = nn::SequenceBatch<f64>;
