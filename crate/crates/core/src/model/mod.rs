//! Micro transformer encoder classifier with per-head gates.

mod config;
mod example;
mod layout;
mod mask;
mod network;
mod params;

pub use config::ModelConfig;
pub use example::{Example, LanguageId, CLS_TOKEN, NUM_SPECIAL_TOKENS, SEP_TOKEN};
pub use layout::{HeadOffsets, LayerOffsets, ParamLayout, Segment};
pub use mask::SubnetworkMask;
pub use network::{
    argmax, evaluate, forward, forward_ungated, gate_grad, loss, loss_and_grad, loss_with_gates, predict, GateGrad,
    GradVector,
};
pub use params::Parameters;

/// Convenience alias for [`Parameters::init`].
pub fn init_model(config: &ModelConfig, seed: u64) -> crate::Result<Parameters> {
    Parameters::init(config, seed)
}
