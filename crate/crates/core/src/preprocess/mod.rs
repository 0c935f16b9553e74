//! Geometric preprocessing: DSM co-registration and nDSM extraction.

mod coregister;
mod morphology;

pub use coregister::{
    align_labels, align_planimetric, align_to_reference, apply_shift, classify_inliers, estimate_shift, CoregistrationParams,
    ShiftEstimate, DEFAULT_MAX_ITERATIONS, DEFAULT_OUTLIER_THRESHOLD, MIN_OVERLAP,
};
pub use morphology::{
    erode, ndsm, reconstruct_by_dilation, reconstruct_by_erosion_opening, StructuringElement,
};

/// Default disk radius in cells for nDSM extraction (60 m at 0.5 m cells).
pub const DEFAULT_SE_RADIUS: usize = 120;
