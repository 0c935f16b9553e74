use super::params::ClassBandwidthTable;
use crate::raster::{ClassLegend, ClassRaster};
use crate::stack::TemporalStack;
use crate::{Error, Result};

/// Fraction of the class nDSM range used as sigma_h.
pub const RANGE_FRACTION: f64 = 0.35;

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-class height bandwidth from labeled nDSM values pooled over dates.
///
/// `labels[t]` labels date `t`; `None` skips the date. In robust mode the
/// range is the 1st to 99th percentile span instead of max minus min.
pub fn estimate_class_bandwidths(
    stack: &TemporalStack,
    labels: &[Option<ClassRaster>],
    legend: &ClassLegend,
    robust: bool,
) -> Result<ClassBandwidthTable> {
    if labels.len() != stack.len() {
        return Err(Error::Dimension(format!(
            "{} label rasters for {} dates",
            labels.len(),
            stack.len()
        )));
    }
    let classes = legend.len();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for (scene, l) in stack.scenes().iter().zip(labels) {
        let Some(l) = l else { continue };
        if !l.matches_grid(&scene.ndsm) {
            return Err(Error::Dimension(format!(
                "labels for date {} are {}x{}, scene is {}x{}",
                scene.date_id,
                l.width(),
                l.height(),
                scene.width(),
                scene.height()
            )));
        }
        for (i, &c) in l.values().iter().enumerate() {
            if c == ClassRaster::UNLABELED {
                continue;
            }
            let bucket = samples.get_mut(usize::from(c)).ok_or(Error::UnknownClass(c))?;
            if let Some(h) = scene.ndsm.valid_at(i) {
                bucket.push(f64::from(h));
            }
        }
    }
    let mut sigma = Vec::with_capacity(classes);
    for (c, mut v) in samples.into_iter().enumerate() {
        if v.is_empty() {
            return Err(Error::EmptyClass {
                class: c,
                name: legend.name(c).to_string(),
            });
        }
        v.sort_by(f64::total_cmp);
        let range = if robust {
            percentile(&v, 99.0) - percentile(&v, 1.0)
        } else {
            v[v.len() - 1] - v[0]
        };
        // a zero range is floored by the table
        sigma.push((RANGE_FRACTION * range).max(f64::MIN_POSITIVE));
    }
    ClassBandwidthTable::new(sigma)
}

/// Uses the labels attached to each scene of the stack.
pub fn estimate_from_stack_labels(
    stack: &TemporalStack,
    legend: &ClassLegend,
    robust: bool,
) -> Result<ClassBandwidthTable> {
    let labels: Vec<Option<ClassRaster>> = stack.scenes().iter().map(|s| s.labels.clone()).collect();
    estimate_class_bandwidths(stack, &labels, legend, robust)
}
