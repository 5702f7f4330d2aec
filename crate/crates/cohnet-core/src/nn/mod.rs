//! Minimal deterministic reverse-mode autodiff substrate: tensors, layers,
//! networks, Adam, and weight serialization.

pub mod adam;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod weights;

pub use adam::{scheduled_lr, AdamState};
pub use layers::Layer;
pub use network::{build_mlp, build_unet, ForwardCache, Network, OutActivation};
pub use tensor::Tensor;
pub use weights::{apply_weights, load_weights, save_weights, WeightFile};
