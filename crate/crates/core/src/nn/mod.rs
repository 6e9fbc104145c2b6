//! Bidirectional LSTM classifier with hand-written backpropagation.

pub mod cell;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod model;
pub mod params;

pub use cell::{lstm_cell_step, sigmoid};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, Regularizer, DEFAULT_L1, DEFAULT_L2};
pub use gradcheck::{gradient_check, gradient_check_in};
pub use model::{cross_entropy, BiLstmModel, Mode, SequenceBatch, PROB_FLOOR};
pub use params::{DenseHead, GradientSet, LstmDirection, LstmLayer, ParamKind, Params};
