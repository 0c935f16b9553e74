//! Accuracy assessment: confusion matrices, accuracy-iteration curves and
//! per-class probability trajectories over a patch.

use crate::filter::{argmax_labels, CubeSet, ProbabilityCube};
use crate::raster::{ClassLegend, ClassRaster, Region};
use crate::{Error, Result};

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }

    /// Correct over truth count for `class`; `None` without truth pixels.
    pub fn producer_accuracy(&self, class: usize) -> Option<f64> {
        let row: u64 = (0..self.classes).map(|p| self.count(class, p)).sum();
        (row > 0).then(|| self.count(class, class) as f64 / row as f64)
    }

    /// Correct over predicted count for `class`.
    pub fn user_accuracy(&self, class: usize) -> Option<f64> {
        let col: u64 = (0..self.classes).map(|t| self.count(t, class)).sum();
        (col > 0).then(|| self.count(class, class) as f64 / col as f64)
    }

    /// Overall accuracy, then one row per class with producer and user
    /// accuracy, then the matrix itself.
    pub fn to_csv(&self, legend: &ClassLegend) -> String {
        let fmt = |v: Option<f64>| v.map(|a| format!("{a:.6}")).unwrap_or_default();
        let mut out = format!("overall_accuracy,{:.6}\ntotal,{}\n", self.overall_accuracy(), self.total());
        out.push_str("class,name,producer_accuracy,user_accuracy\n");
        for c in 0..self.classes {
            out.push_str(&format!(
                "{c},{},{},{}\n",
                legend.name(c),
                fmt(self.producer_accuracy(c)),
                fmt(self.user_accuracy(c))
            ));
        }
        out.push_str("truth\\pred");
        for c in 0..self.classes {
            out.push_str(&format!(",{}", legend.name(c)));
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(legend.name(t));
            for p in 0..self.classes {
                out.push_str(&format!(",{}", self.count(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies every pixel with a truth label, a prediction and (if given) a
/// true mask entry.
pub fn confusion_matrix(
    pred: &ClassRaster,
    truth: &ClassRaster,
    classes: usize,
    mask: Option<&[bool]>,
) -> Result<ConfusionMatrix> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    if let Some(m) = mask {
        if m.len() != truth.values().len() {
            return Err(Error::Dimension(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                truth.values().len()
            )));
        }
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (i, (&p, &t)) in pred.values().iter().zip(truth.values()).enumerate() {
        if t == ClassRaster::UNLABELED || p == ClassRaster::UNLABELED {
            continue;
        }
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if usize::from(p) >= classes {
            return Err(Error::UnknownClass(p));
        }
        if usize::from(t) >= classes {
            return Err(Error::UnknownClass(t));
        }
        cm.counts[usize::from(t) * classes + usize::from(p)] += 1;
    }
    Ok(cm)
}

/// Overall accuracy of the argmax labels of each stored iterate.
/// `history[k]` is the cube after `k` iterations.
pub fn accuracy_curve(
    history: &[ProbabilityCube],
    truth: &ClassRaster,
    legend: &ClassLegend,
    mask: Option<&[bool]>,
) -> Result<Vec<(usize, f64)>> {
    if history.is_empty() {
        return Err(Error::InvalidParameter("no stored iterations".into()));
    }
    history
        .iter()
        .enumerate()
        .map(|(k, cube)| {
            let pred = argmax_labels(cube, legend)?;
            Ok((k, confusion_matrix(&pred, truth, legend.len(), mask)?.overall_accuracy()))
        })
        .collect()
}

/// The cube of `date` from every iterate of a run history.
pub fn date_history(history: &[CubeSet], date: usize) -> Result<Vec<ProbabilityCube>> {
    history
        .iter()
        .map(|s| {
            if date < s.dates() {
                Ok(s.cube(date).clone())
            } else {
                Err(Error::InvalidParameter(format!("date {date} not in history")))
            }
        })
        .collect()
}

pub fn accuracy_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("iteration,overall_accuracy\n");
    for (k, a) in curve {
        out.push_str(&format!("{k},{a:.6}\n"));
    }
    out
}

/// Mean probability of each class over the valid pixels of `region`, per
/// iterate.
pub fn probability_trajectory(history: &[ProbabilityCube], region: &Region) -> Result<Vec<Vec<f64>>> {
    let Some(first) = history.first() else {
        return Err(Error::InvalidParameter("no stored iterations".into()));
    };
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    region.ensure_within(first.width(), first.height())?;
    history
        .iter()
        .map(|cube| {
            let mut sum = vec![0.0; cube.classes()];
            let mut n = 0usize;
            for y in region.y0..region.y1 {
                for x in region.x0..region.x1 {
                    let p = cube.pixel(y * cube.width() + x);
                    if p[0].is_nan() {
                        continue;
                    }
                    n += 1;
                    for (s, v) in sum.iter_mut().zip(p) {
                        *s += v;
                    }
                }
            }
            if n == 0 {
                return Err(Error::EmptyRegion);
            }
            Ok(sum.into_iter().map(|s| s / n as f64).collect())
        })
        .collect()
}

/// Percent values, one row per iteration, one column per class.
pub fn trajectory_csv(trajectory: &[Vec<f64>], legend: &ClassLegend) -> String {
    let mut out = String::from("iteration");
    for name in legend.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (k, row) in trajectory.iter().enumerate() {
        out.push_str(&k.to_string());
        for v in row {
            out.push_str(&format!(",{:.2}", v * 100.0));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_half() {
        let t = ClassRaster::new(10, 10, (0..100).map(|i| (i % 2) as u8).collect()).unwrap();
        let cm = confusion_matrix(&t, &t, 2, None).unwrap();
        assert_eq!(cm.correct(), 100);
        assert_eq!(cm.overall_accuracy(), 1.0);
        let p = ClassRaster::filled(10, 10, 0).unwrap();
        let cm = confusion_matrix(&p, &t, 2, None).unwrap();
        assert_eq!(cm.overall_accuracy(), 0.5);
        assert_eq!(cm.producer_accuracy(0), Some(1.0));
        assert_eq!(cm.producer_accuracy(1), Some(0.0));
        assert_eq!(cm.user_accuracy(1), None);
    }

    #[test]
    fn unknown_prediction_and_unlabeled_truth() {
        let t = ClassRaster::new(3, 1, vec![0, ClassRaster::UNLABELED, 1]).unwrap();
        let p = ClassRaster::new(3, 1, vec![0, 7, 1]).unwrap();
        assert_eq!(confusion_matrix(&p, &t, 2, None).unwrap().total(), 2);
        let p = ClassRaster::new(3, 1, vec![5, 0, 1]).unwrap();
        assert!(matches!(confusion_matrix(&p, &t, 2, None), Err(Error::UnknownClass(5))));
    }

    #[test]
    fn random_pair_matches_naive_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40 * 30;
        let t: Vec<u8> = (0..n).map(|_| if rng.gen_bool(0.1) { 255 } else { rng.gen_range(0..4) }).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        let cm = confusion_matrix(
            &ClassRaster::new(40, 30, p.clone()).unwrap(),
            &ClassRaster::new(40, 30, t.clone()).unwrap(),
            4,
            Some(&mask),
        )
        .unwrap();
        let mut naive = [[0u64; 4]; 4];
        for i in 0..n {
            if mask[i] && t[i] != 255 {
                naive[t[i] as usize][p[i] as usize] += 1;
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(cm.count(a, b), naive[a][b]);
            }
        }
    }

    #[test]
    fn single_point_curve_and_constant_trajectory() {
        let cube = ProbabilityCube::new(2, 1, 2, vec![0.8, 0.2, 0.3, 0.7]).unwrap();
        let truth = ClassRaster::new(2, 1, vec![0, 0]).unwrap();
        let legend = ClassLegend::numbered(2).unwrap();
        let curve = accuracy_curve(std::slice::from_ref(&cube), &truth, &legend, None).unwrap();
        assert_eq!(curve, vec![(0, 0.5)]);
        assert!(accuracy_curve(&[], &truth, &legend, None).is_err());
        let traj = probability_trajectory(&[cube.clone(), cube.clone()], &Region::new(1, 0, 2, 1)).unwrap();
        assert_eq!(traj, vec![vec![0.3, 0.7]; 2]);
        let csv = trajectory_csv(&traj, &legend);
        assert!(csv.lines().nth(1).unwrap().ends_with(",30.00,70.00"), "{csv}");
        assert!(matches!(probability_trajectory(std::slice::from_ref(&cube), &Region::new(1, 0, 1, 1)), Err(Error::EmptyRegion)));
        assert!(probability_trajectory(&[cube], &Region::new(0, 0, 3, 1)).is_err());
    }

    proptest! {
        #[test]
        fn accuracy_bounded_and_total_matches(
            t in proptest::collection::vec(0u8..3, 36),
            p in proptest::collection::vec(0u8..3, 36),
            m in proptest::collection::vec(any::<bool>(), 36),
        ) {
            let cm = confusion_matrix(
                &ClassRaster::new(6, 6, p).unwrap(),
                &ClassRaster::new(6, 6, t).unwrap(),
                3,
                Some(&m),
            ).unwrap();
            prop_assert!((0.0..=1.0).contains(&cm.overall_accuracy()));
            prop_assert_eq!(cm.total(), m.iter().filter(|&&b| b).count() as u64);
        }

        #[test]
        fn trajectory_within_patch_bounds(v in proptest::collection::vec(0f64..1.0, 32), x0 in 0usize..3, y0 in 0usize..3) {
            let cube = ProbabilityCube::new(4, 4, 2, v).unwrap();
            let region = Region::new(x0, y0, 4, 4);
            let traj = probability_trajectory(std::slice::from_ref(&cube), &region).unwrap();
            for c in 0..2 {
                let vals: Vec<f64> = (y0..4).flat_map(|y| (x0..4).map(move |x| (x, y))).map(|(x, y)| cube.get(x, y, c)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(traj[0][c] >= lo - 1e-12 && traj[0][c] <= hi + 1e-12);
            }
        }
    }
}
