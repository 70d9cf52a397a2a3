//! Small differentiable-computation layer used by the denoiser and the
//! evaluator.

pub mod layers;
pub mod params;
pub mod tape;
pub mod weights;

pub use layers::{AttentionBlock, Dense, LayerNorm, MultiHeadAttention};
pub use params::{AdamConfig, ExponentialLr, ParamId, ParamStore, PlateauLr};
pub use tape::{bce_loss, Gradients, Mat, Tape, Var};
pub use weights::{NamedTensor, WeightsFile};
