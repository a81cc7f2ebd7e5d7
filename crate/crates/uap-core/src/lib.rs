//! Universal adversarial perturbations against small trained classifiers.
//!
//! The crate covers the full pipeline: synthetic datasets, an MLP classifier
//! with analytic input gradients, per-example minimal perturbations
//! (DeepFool), the universal perturbation accumulation loop, fooling-rate
//! evaluation against random baselines, and label-transition graphs.

pub mod classifier;
pub mod dataset;
pub mod deepfool;
pub mod error;
pub mod evaluation;
mod io;
pub mod label_graph;
pub mod rng;
pub mod tensor;
pub mod universal;

pub use classifier::{accuracy, load_model, save_model, train, Layer, Model, TrainConfig};
pub use dataset::{
    generate_blobs, load_dataset, median_l2_norm, sample_attack_set, save_dataset,
    split_attack_set, Dataset,
};
pub use deepfool::{deepfool, DeepFoolConfig, DeepFoolResult};
pub use error::{Error, Result};
pub use evaluation::{
    fooling_rate, norm_sweep, random_perturbation, scale_to_norm, write_curve_csv, FoolingReport,
    SweepCurve,
};
pub use label_graph::{
    build_label_graph, dominant_labels, export_dot, export_edges_csv, LabelGraph,
};
pub use rng::Rng;
pub use tensor::{axpy, gaussian_tensor, lp_norm, Norm, Tensor};
pub use universal::{
    compute_uap, load_perturbation, project_lp_ball, save_perturbation, AttackConfig, Perturbation,
    UapRun,
};
