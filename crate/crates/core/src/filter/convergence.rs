use super::cube::{argmax, CubeSet};
use super::params::FilterParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_rel_change: f64,
    pub max_rel_change: f64,
    /// Pixels (over all dates) whose argmax class changed.
    pub changed_label_count: usize,
    pub zero_weight_pixels: usize,
    pub converged: bool,
    pub seconds: f64,
}

/// `|curr - prev| / max(curr, epsilon)` for one value.
#[inline]
pub fn relative_change(prev: f64, curr: f64, epsilon: f64) -> f64 {
    (curr - prev).abs() / curr.max(epsilon)
}

/// Compares consecutive iterates. `iteration`, `zero_weight_pixels` and
/// `seconds` are left for the caller to fill in.
pub fn check_convergence(prev: &CubeSet, curr: &CubeSet, params: &FilterParams) -> Result<IterationStats> {
    if prev.dates() != curr.dates()
        || prev.width() != curr.width()
        || prev.height() != curr.height()
        || prev.classes() != curr.classes()
    {
        return Err(Error::Dimension("convergence check on cubes of different shape".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut max = 0f64;
    let mut changed = 0usize;
    for (a, b) in prev.cubes().iter().zip(curr.cubes()) {
        for i in 0..a.len() {
            let (p, q) = (a.pixel(i), b.pixel(i));
            if p[0].is_nan() || q[0].is_nan() {
                continue;
            }
            for (&x, &y) in p.iter().zip(q) {
                let r = relative_change(x, y, params.epsilon);
                sum += r;
                count += 1;
                max = max.max(r);
            }
            if argmax(p) != argmax(q) {
                changed += 1;
            }
        }
    }
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(IterationStats {
        iteration: 0,
        mean_rel_change: mean,
        max_rel_change: max,
        changed_label_count: changed,
        zero_weight_pixels: 0,
        converged: mean < params.convergence_tau,
        seconds: 0.0,
    })
}

pub fn stats_csv(stats: &[IterationStats]) -> String {
    let mut out = String::from("iteration,mean_rel_change,max_rel_change,changed_labels,seconds\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            s.iteration, s.mean_rel_change, s.max_rel_change, s.changed_label_count, s.seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::cube::ProbabilityCube;
    use crate::filter::params::ClassBandwidthTable;

    fn set(v: f64) -> CubeSet {
        CubeSet::new(vec![ProbabilityCube::new(1, 1, 1, vec![v]).unwrap()]).unwrap()
    }

    fn params() -> FilterParams {
        FilterParams::new(ClassBandwidthTable::uniform(1, 1.0).unwrap())
    }

    #[test]
    fn identical_is_converged() {
        let s = check_convergence(&set(0.5), &set(0.5), &params()).unwrap();
        assert_eq!((s.mean_rel_change, s.max_rel_change), (0.0, 0.0));
        assert!(s.converged);
    }

    #[test]
    fn small_change_converges() {
        let s = check_convergence(&set(0.50), &set(0.52), &params()).unwrap();
        assert!((s.mean_rel_change - 0.02 / 0.52).abs() < 1e-12);
        assert!(s.converged);
        let s = check_convergence(&set(0.50), &set(0.60), &params()).unwrap();
        assert!((s.mean_rel_change - 0.1 / 0.6).abs() < 1e-12);
        assert!(!s.converged);
    }

    #[test]
    fn zero_values_use_epsilon() {
        let s = check_convergence(&set(0.0), &set(0.0), &params()).unwrap();
        assert_eq!(s.mean_rel_change, 0.0);
        let s = check_convergence(&set(1e-10), &set(0.0), &params()).unwrap();
        assert!((s.max_rel_change - 0.1).abs() < 1e-9);
    }

    #[test]
    fn counts_label_flips_and_skips_nodata() {
        let a = ProbabilityCube::new(2, 1, 2, vec![0.7, 0.3, f64::NAN, f64::NAN]).unwrap();
        let b = ProbabilityCube::new(2, 1, 2, vec![0.4, 0.6, f64::NAN, f64::NAN]).unwrap();
        let s = check_convergence(
            &CubeSet::new(vec![a]).unwrap(),
            &CubeSet::new(vec![b]).unwrap(),
            &FilterParams::new(ClassBandwidthTable::uniform(2, 1.0).unwrap()),
        )
        .unwrap();
        assert_eq!(s.changed_label_count, 1);
        assert!(s.mean_rel_change <= s.max_rel_change);
        assert!(s.mean_rel_change.is_finite());
    }
}
