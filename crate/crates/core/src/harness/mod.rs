//! Configuration, training, inference, ablations and plots.

pub mod ablation;
pub mod config;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod train;

pub use ablation::{run_ablation_matrix, AblationCell, AblationMatrix};
pub use config::{Profile, TrainConfig};
pub use pipeline::{evaluate_dataset, ground_truth, infer, run_experiment, ExperimentResult};
pub use plot::{compute_traces, plot_traces, Traces};
pub use train::{train, TrainOutcome};
