//! Training-label propagation across dates.
//!
//! A reference label is carried over to another date only where both the
//! nDSM and the NDVI stayed within conservative change thresholds.

use crate::raster::{ndvi, ClassRaster, ClassLegend};
use crate::stack::TemporalScene;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationThresholds {
    /// Metres.
    pub max_ndsm_diff: f64,
    pub max_ndvi_diff: f64,
}

impl Default for PropagationThresholds {
    fn default() -> Self {
        PropagationThresholds {
            max_ndsm_diff: 1.0,
            max_ndvi_diff: 0.1,
        }
    }
}

impl PropagationThresholds {
    pub fn new(max_ndsm_diff: f64, max_ndvi_diff: f64) -> Result<Self> {
        if !(max_ndsm_diff >= 0.0) || !(max_ndvi_diff >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "propagation thresholds must be >= 0, got nDSM {max_ndsm_diff}, NDVI {max_ndvi_diff}"
            )));
        }
        Ok(PropagationThresholds {
            max_ndsm_diff,
            max_ndvi_diff,
        })
    }
}

pub fn propagate_labels(
    ref_labels: &ClassRaster,
    ref_scene: &TemporalScene,
    tgt_scene: &TemporalScene,
    th: &PropagationThresholds,
) -> Result<ClassRaster> {
    ref_scene
        .ndsm
        .ensure_same_shape(&tgt_scene.ndsm, "propagation scenes")?;
    if !ref_labels.matches_grid(&ref_scene.ndsm) {
        return Err(Error::Dimension(format!(
            "reference labels are {}x{}, scene is {}x{}",
            ref_labels.width(),
            ref_labels.height(),
            ref_scene.width(),
            ref_scene.height()
        )));
    }
    let ndvi_ref = ndvi(&ref_scene.image)?;
    let ndvi_tgt = ndvi(&tgt_scene.image)?;
    let unchanged = |i: usize| -> bool {
        let (Some(h0), Some(h1)) = (ref_scene.ndsm.valid_at(i), tgt_scene.ndsm.valid_at(i)) else {
            return false;
        };
        let (Some(v0), Some(v1)) = (ndvi_ref.valid_at(i), ndvi_tgt.valid_at(i)) else {
            return false;
        };
        (f64::from(h0) - f64::from(h1)).abs() <= th.max_ndsm_diff
            && (f64::from(v0) - f64::from(v1)).abs() <= th.max_ndvi_diff
    };
    let values = ref_labels
        .values()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l != ClassRaster::UNLABELED && unchanged(i) {
                l
            } else {
                ClassRaster::UNLABELED
            }
        })
        .collect();
    ClassRaster::new(ref_labels.width(), ref_labels.height(), values)
}

/// Per-class `(input, retained)` labeled-pixel counts, for auditing.
pub fn retention_counts(
    input: &ClassRaster,
    output: &ClassRaster,
    classes: usize,
) -> Vec<(usize, usize)> {
    let mut counts = vec![(0, 0); classes];
    for (&a, &b) in input.values().iter().zip(output.values()) {
        if let Some(c) = counts.get_mut(usize::from(a)) {
            c.0 += 1;
        }
        if let Some(c) = counts.get_mut(usize::from(b)) {
            c.1 += 1;
        }
    }
    counts
}

pub fn retention_report(counts: &[(usize, usize)], legend: Option<&ClassLegend>) -> String {
    let mut out = String::from("class,name,input,retained\n");
    for (c, (i, r)) in counts.iter().enumerate() {
        let name = legend.map(|l| l.name(c).to_string()).unwrap_or_default();
        out.push_str(&format!("{c},{name},{i},{r}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Grid, MultibandImage};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(ndsm: Vec<f32>, nir: Vec<f32>, red: Vec<f32>, w: usize) -> TemporalScene {
        let h = ndsm.len() / w;
        let g = |v: Vec<f32>| Grid::new(w, h, 0.5, crate::raster::DEFAULT_NODATA, v).unwrap();
        let green = vec![0.1; ndsm.len()];
        let img = MultibandImage::nir_red_green(g(nir), g(red), g(green)).unwrap();
        let dsm = g(ndsm.clone());
        TemporalScene::new("t", img, dsm, g(ndsm), None).unwrap()
    }

    #[test]
    fn identical_scenes_keep_all_labels() {
        let s = scene(vec![0.0, 3.0, 8.0, 0.2], vec![0.5, 0.4, 0.3, 0.6], vec![0.1, 0.2, 0.3, 0.1], 2);
        let labels = ClassRaster::new(2, 2, vec![0, 1, 2, ClassRaster::UNLABELED]).unwrap();
        let out = propagate_labels(&labels, &s, &s.clone(), &PropagationThresholds::default()).unwrap();
        assert_eq!(out, labels);
    }

    #[test]
    fn demolished_building_is_dropped() {
        let a = scene(vec![8.0, 0.0], vec![0.3, 0.5], vec![0.3, 0.1], 2);
        let b = scene(vec![0.0, 0.0], vec![0.3, 0.5], vec![0.3, 0.1], 2);
        let labels = ClassRaster::new(2, 1, vec![2, 0]).unwrap();
        let out = propagate_labels(&labels, &a, &b, &PropagationThresholds::new(1.0, 0.1).unwrap()).unwrap();
        assert_eq!(out.values(), &[ClassRaster::UNLABELED, 0]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = scene(vec![0.0; 4], vec![0.5; 4], vec![0.1; 4], 2);
        let b = scene(vec![0.0; 4], vec![0.5; 4], vec![0.1; 4], 4);
        let labels = ClassRaster::filled(2, 2, 0).unwrap();
        assert!(matches!(
            propagate_labels(&labels, &a, &b, &PropagationThresholds::default()),
            Err(Error::Dimension(_))
        ));
        assert!(PropagationThresholds::new(-1.0, 0.1).is_err());
    }

    #[test]
    fn random_scenes_match_per_pixel_predicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (24, 18);
        let n = w * h;
        let base_ndsm: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..12.0)).collect();
        let nir: Vec<f32> = (0..n).map(|_| rng.gen_range(0.2..0.9)).collect();
        let red: Vec<f32> = (0..n).map(|_| rng.gen_range(0.05..0.4)).collect();
        let changed: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let tgt_ndsm: Vec<f32> = base_ndsm
            .iter()
            .zip(&changed)
            .map(|(&v, &c)| if c { v + 5.0 } else { v })
            .collect();
        let a = scene(base_ndsm, nir.clone(), red.clone(), w);
        let b = scene(tgt_ndsm, nir, red, w);
        let labels =
            ClassRaster::new(w, h, (0..n).map(|_| rng.gen_range(0..4u8)).collect()).unwrap();
        let out = propagate_labels(&labels, &a, &b, &PropagationThresholds::default()).unwrap();
        for i in 0..n {
            let expected = if changed[i] { ClassRaster::UNLABELED } else { labels.values()[i] };
            assert_eq!(out.values()[i], expected, "pixel {i}");
        }
        let counts = retention_counts(&labels, &out, 4);
        assert_eq!(counts.iter().map(|c| c.1).sum::<usize>(), out.labeled_count());
    }

    proptest! {
        #[test]
        fn tightening_never_adds_labels(
            h0 in proptest::collection::vec(0f32..10.0, 16),
            h1 in proptest::collection::vec(0f32..10.0, 16),
            r1 in proptest::collection::vec(0.01f32..0.5, 16),
            t_ndsm in 0f64..5.0, t_ndvi in 0f64..1.0, shrink in 0f64..1.0,
        ) {
            let nir = vec![0.5; 16];
            let a = scene(h0, nir.clone(), vec![0.2; 16], 4);
            let b = scene(h1, nir, r1, 4);
            let labels = ClassRaster::new(4, 4, (0..16).map(|i| (i % 3) as u8).collect()).unwrap();
            let loose = propagate_labels(&labels, &a, &b, &PropagationThresholds::new(t_ndsm, t_ndvi).unwrap()).unwrap();
            let tight = propagate_labels(&labels, &a, &b, &PropagationThresholds::new(t_ndsm * shrink, t_ndvi).unwrap()).unwrap();
            let tight2 = propagate_labels(&labels, &a, &b, &PropagationThresholds::new(t_ndsm, t_ndvi * shrink).unwrap()).unwrap();
            let inf = propagate_labels(&labels, &a, &b, &PropagationThresholds::new(f64::INFINITY, f64::INFINITY).unwrap()).unwrap();
            prop_assert_eq!(&inf, &labels);
            for i in 0..16 {
                let l = loose.values()[i];
                prop_assert!(l == ClassRaster::UNLABELED || l == labels.values()[i]);
                for t in [&tight, &tight2] {
                    let v = t.values()[i];
                    prop_assert!(v == ClassRaster::UNLABELED || v == l);
                }
            }
        }
    }
}
