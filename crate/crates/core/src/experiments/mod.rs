//! Generators, metrics and harnesses for the desk-scale experiments.

pub mod fair_pca;
pub mod label_shift;
pub mod long_tail;
pub mod metrics;
pub mod tau;
pub mod toy;

pub use fair_pca::{fair_pca_run, gen_two_group_pca, FairPcaConfig, FairPcaResult};
pub use label_shift::{label_shift_proportions, sample_label_shift_test};
pub use long_tail::long_tail_downsample;
pub use metrics::{metrics_from_scores, ConfusionCounts, MetricsReport};
pub use tau::{select_tau, ErmStats, TauStrategy};
pub use toy::gen_two_gaussian_toy;
