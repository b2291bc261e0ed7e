//! Minimal layer set with explicit forward/backward passes.
//!
//! Layers never hold activations. A training forward returns a cache that the
//! caller hands back to `backward`, which accumulates into each parameter's
//! gradient buffer and optionally returns the input gradient.

mod conv;
mod layers;
mod optim;
mod param;

pub use conv::{Conv2d, ConvCache};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, upsample2,
    upsample2_backward,
};
pub use optim::{poly_lr, Adam, AdamConfig, Sgd, SgdConfig};
pub use param::{Module, Param};
