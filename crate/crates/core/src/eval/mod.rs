//! Pose error metrics, view-cluster accuracy and cross-view feature spread.

mod cluster;
mod pose;
mod report;
mod variance;

pub use cluster::{kmeans, min_cost_assignment, view_cluster_accuracy, KMeansConfig, KMeansResult};
pub use pose::{
    accel_error, mpjpe, pa_mpjpe, procrustes_align, procrustes_points, AlignmentResult, COLLINEAR_TOL,
};
pub use report::{write_metric_csv, MetricRow};
pub use variance::cross_view_variance;
