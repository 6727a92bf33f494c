//! Multi-task convolutional network with exact gradients, Adam and the
//! alternating training loop.

pub mod adam;
pub mod growth;
mod layers;
pub mod loss;
mod net;
pub mod persist;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use growth::{accepted_candidates, grow_architecture, GrowthConfig, GrowthOutcome, GrowthStep};
pub use layers::{Activation, LayerSpec, Padding, Shape};
pub use loss::{detection_loss, detection_loss_dp, estimation_loss};
pub use net::{Architecture, Head, MultiTaskNet, NetOutput, Scaling};
pub use persist::{load_model, save_model, ModelManifest};
pub use train::{init_net, train, train_with_progress, TrainConfig, TrainHistory, TrainingData, ValidationPoint};
