//! Criss-cross spatial/temporal transformer for multichannel EEG, with
//! masked-patch pretraining, fine-tuning heads and verification tooling.

pub mod cli;
pub mod eeg_io;
pub mod error;
pub mod finetune;
pub mod kv;
pub mod model;
pub mod patching;
pub mod preprocess;
pub mod training;
pub mod util;
pub mod verify;

pub use error::{Error, Result};
