//! Encoder network, defined as pure functions over a [`ParameterSet`].

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod flops;
pub mod ops;
pub mod params;
pub mod patch_encoder;
pub mod pos_encoding;
pub mod spectrum;

pub use checkpoint::Checkpoint;
pub use config::{AttentionVariant, AttnAxis, ConvLayerSpec, EnergyKind, HeadGroup, ModelConfig, PeVariant};
pub use encoder::{flatten, masked_mse, masked_mse_grad, reconstruct, Activation, Encoder, EncoderCache, Stage};
pub use flops::{count_flops, FlopReport};
pub use params::{count_params, ParameterSet};
pub use spectrum::fft_energy;
