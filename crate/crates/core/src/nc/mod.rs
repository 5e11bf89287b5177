//! Neural collapse geometry engine: class statistics, NC1–NC4, simplex
//! comparisons, NCC classifiers, ETF fixtures, and layerwise profiles.

pub mod etf;
pub mod io;
pub mod layerwise;
pub mod metrics;
pub mod stats;

pub use etf::standard_etf;
pub use layerwise::{layerwise_report, pooled_tap_features, LayerwiseEntry};
pub use metrics::{
    nc1, nc2, nc3, nc4_mismatch, nc_report, ncc_accuracy, ncc_matching_rate, ncc_predict,
    noncentered_angular, predicted_group_stats, simplex_similarity, NcReport, PredictedGroup,
};
pub use stats::{class_stats, ClassStats, FeatureSet};
