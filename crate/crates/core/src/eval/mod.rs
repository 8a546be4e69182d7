//! Activity recognition proxy, metrics and end-to-end experiments.

pub mod classifier;
pub mod experiment;
pub mod features;
pub mod metrics;

pub use classifier::{classify_activity, ActivityClassifier, ClassifierConfig};
pub use experiment::{
    choose_link, run_experiment, write_outputs, ExperimentConfig, ExperimentModels, ExperimentOutput, Metrics, PathMetrics,
    SafeguardMode,
};
pub use features::{FeatureConfig, FeatureExtractor};
pub use metrics::{compute_adr, fid_1d, nearest_ssim, ssim_1d};
