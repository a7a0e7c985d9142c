//! Layer-wise federated training of unfolded ISTA (LISTA) networks for
//! sparse recovery, with the synthetic-data harness used to evaluate it.
//!
//! The main entry points are [`fed_cs_train`] for the federated protocol,
//! [`train_centralized`] for the single-site baseline, [`ista_solve`] for
//! the classical iterative baseline, and [`run_experiment`] for
//! configuration-driven runs that write metrics, checkpoints and plots.

pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod ista;
mod linalg;
pub mod lista;
pub mod metrics;
pub mod plot;
pub mod rng;
mod textio;
pub mod trainer;

pub use data::{
    build_dataset, generate_sensing_matrix, generate_sparse_vector, load_matrix_file, measure,
    partition_dataset, Dataset, MagnitudeDist, Partition, Sample, SensingMatrix,
};
pub use error::{Error, Result};
pub use experiment::{build_problem, run_experiment, sweep, ExperimentConfig, MetricRecord, SweepAxis};
pub use federation::{
    aggregate_layer, aggregate_network, evaluate, fed_cs_train, FedConfig, FedOutcome, RoundRecord,
};
pub use ista::{ista_solve, ista_step, soft_threshold, IstaConfig};
pub use lista::{
    backward, forward, init_layer, loss, sgd_step, Batch, ForwardTrace, GradientBundle, InitMode,
    LayerParams, LossScope, NetworkParams,
};
pub use metrics::{nmse_db, psnr};
pub use plot::{render_svg, PlotSpec};
pub use trainer::{train_centralized, train_layer_local, BetaMode, Optimizer, TrainConfig};
