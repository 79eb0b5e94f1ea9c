//! Trainable float64 building blocks with hand-written backward passes.
//!
//! Every layer follows the same shape: `forward` returns the output together
//! with whatever it needs to cache, and `backward` takes that cache and the
//! upstream gradient, accumulates parameter gradients into a gradient
//! structure of the same type as the layer, and returns the input gradient.

mod adam;
mod attention;
mod encoder;
mod gradcheck;
mod linear;
mod mlp;
pub mod ops;
mod params;

pub use adam::{Adam, AdamConfig};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use encoder::{positional_encoding, EncoderCache, EncoderConfig, EncoderLayer, EncoderStack, LayerCache};
pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::Linear;
pub use mlp::{MlpCache, MlpClassifier};
pub use ops::{LayerNorm, LayerNormCache};
pub use params::{add_scaled, flatten, load_flat, param_count, scale, set_param, Params};
pub(crate) use params::join as join_name;
