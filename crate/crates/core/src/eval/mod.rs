//! Focus measures, distance back-ends, pairing, grid search and set-level metrics.

mod distance;
mod focus;
mod metrics;

pub use distance::{
    grid_search_edit, pair_by_distance, BackendKind, DistanceBackend, GridPoint, GridSearchResult, MultiscaleL2, Pair,
    PairingResult, PixelL2,
};
pub use focus::{band_energy, focus_map, in_focus_average, mean_focus, region_mean_luminance, FOCUS_WINDOW};
pub use metrics::{
    domain_gap_estimate, external_metric, frechet_distance, pooled_histogram, ColorStatsFeatures, FeatureExtractor,
    MetricRegistry, MetricValue, Report, ReportEntry,
};
