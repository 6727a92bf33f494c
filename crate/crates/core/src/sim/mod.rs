//! Generative imaging model: signals, backgrounds, noise and datasets.

pub mod clb;
pub mod dataset;
pub mod lumpy;
pub mod noise;
pub mod system;
pub mod task;

pub use clb::{render_clb_background, sample_clb, ClbModel, ClusteredLumpyBackground};
pub use dataset::{generate_dataset, Dataset, DatasetOptions};
pub use lumpy::{render_lumpy_background, sample_lumpy, LumpyBackground, LumpyModel};
pub use noise::NoiseModel;
pub use system::{render_signal_image, GaussianSignal, ImagingSystem};
pub use task::{
    simulate_measurement, BackgroundModel, BackgroundParams, LabeledImage, SignalParams, SignalPrior, TaskFamily,
    TaskSpec,
};
