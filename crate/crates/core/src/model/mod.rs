//! Multi-task segmentation network, loss, optimizer and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod network;
pub mod ops;
pub mod params;
pub mod tensor;


pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{LossWeights, NetworkConfig, Normalization};
pub use loss::{head_gradients, multitask_loss, TaskOutputs};
pub use network::{build_network, images_to_tensor, ForwardPass, Mode, Model, Network};
pub use params::{ModelParams, Param};
pub use tensor::{Real, Tensor};
