//! Iterative spatiotemporal bilateral filtering of probability cubes.

mod bandwidth;
mod convergence;
mod cube;
mod kernel;
mod params;
mod run;
mod weights;

pub use bandwidth::{estimate_class_bandwidths, estimate_from_stack_labels, RANGE_FRACTION};
pub use convergence::{check_convergence, relative_change, stats_csv, IterationStats};
pub use cube::{
    argmax_labels, load_cube_set, read_cube_manifest, write_cube_set, CubeSet, ProbabilityCube,
    SUM_TOLERANCE,
};
pub use kernel::{filter_iteration, IterationOutput, SpatiotemporalFilter, WeightTable};
pub use params::{
    ClassBandwidthTable, FilterParams, Normalization, WeightMode, DEFAULT_EPSILON,
    DEFAULT_MAX_ITERATIONS, DEFAULT_SIGMA_R, DEFAULT_SIGMA_S, DEFAULT_TAU, DEFAULT_WINDOW_RADIUS,
    MIN_SIGMA_H, WEIGHT_CACHE_BUDGET,
};
pub use run::{run_filter, FilterRun, RunOptions};
pub use weights::{compute_weight, weight_from_distances, FilterGuide, PixelRef};
