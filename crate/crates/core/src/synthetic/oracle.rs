//! Direct nested-loop evaluation of one filter iteration, kept deliberately
//! naive: no caching, no precomputed offsets, one weight per term as the
//! product of the spatial, spectral and height kernels.

use crate::filter::{CubeSet, FilterParams, Normalization, ProbabilityCube};
use crate::raster::to_cielab;
use crate::stack::TemporalStack;
use crate::{Error, Result};

pub const ORACLE_MAX_SIDE: usize = 32;
pub const ORACLE_MAX_DATES: usize = 4;
pub const ORACLE_MAX_CLASSES: usize = 6;

pub fn brute_force_filter(prev: &CubeSet, stack: &TemporalStack, params: &FilterParams) -> Result<CubeSet> {
    let (w, h, dates, classes) = (prev.width(), prev.height(), prev.dates(), prev.classes());
    if w > ORACLE_MAX_SIDE || h > ORACLE_MAX_SIDE || dates > ORACLE_MAX_DATES || classes > ORACLE_MAX_CLASSES {
        return Err(Error::TooLarge(format!(
            "{w}x{h}, {dates} dates, {classes} classes exceeds the reference filter limits"
        )));
    }
    if stack.len() != dates || stack.width() != w || stack.height() != h || params.bandwidths.len() != classes {
        return Err(Error::Dimension("cubes, stack and bandwidths disagree".into()));
    }

    let mut lab = Vec::new();
    for scene in stack.scenes() {
        lab.push(to_cielab(&scene.image)?);
    }
    // Lab and nDSM of (x, y) at date t, or None for nodata
    let guide = |t: usize, x: usize, y: usize| -> Option<([f64; 3], f64)> {
        let l = lab[t].band("L").ok()?.value(x, y)?;
        let a = lab[t].band("a").ok()?.value(x, y)?;
        let b = lab[t].band("b").ok()?.value(x, y)?;
        let z = stack.scene(t).ndsm.value(x, y)?;
        Some(([l as f64, a as f64, b as f64], z as f64))
    };

    let r = params.window_radius as i64;
    let mut out = Vec::new();
    for m in 0..dates {
        let mut data = vec![0f64; w * h * classes];
        for y in 0..h {
            for x in 0..w {
                for c in 0..classes {
                    let previous = prev.cube(m).get(x, y, c);
                    let slot = &mut data[(y * w + x) * classes + c];
                    if previous.is_nan() {
                        *slot = f64::NAN;
                        continue;
                    }
                    let Some((lab_i, h_i)) = guide(m, x, y) else {
                        *slot = previous;
                        continue;
                    };
                    let mut numerator = 0.0;
                    let mut denominator = 0.0;
                    for n in 0..dates {
                        for yj in (y as i64 - r)..=(y as i64 + r) {
                            for xj in (x as i64 - r)..=(x as i64 + r) {
                                if xj < 0 || yj < 0 || xj >= w as i64 || yj >= h as i64 {
                                    continue;
                                }
                                let (xj, yj) = (xj as usize, yj as usize);
                                let Some((lab_j, h_j)) = guide(n, xj, yj) else { continue };
                                let p = prev.cube(n).get(xj, yj, c);
                                if p.is_nan() {
                                    continue;
                                }
                                let dxy = (x as f64 - xj as f64).powi(2) + (y as f64 - yj as f64).powi(2);
                                let dlab = (lab_i[0] - lab_j[0]).powi(2)
                                    + (lab_i[1] - lab_j[1]).powi(2)
                                    + (lab_i[2] - lab_j[2]).powi(2);
                                let dh = (h_i - h_j).powi(2);
                                let sh = params.bandwidths.sigma_h(c);
                                let weight = (-dxy / (2.0 * params.sigma_s.powi(2))).exp()
                                    * (-dlab / (2.0 * params.sigma_r.powi(2))).exp()
                                    * (-dh / (2.0 * sh * sh)).exp();
                                numerator += weight * p;
                                denominator += weight;
                            }
                        }
                    }
                    *slot = match params.normalization {
                        Normalization::WeightSum => numerator / denominator,
                        Normalization::LiteralNT => numerator / (params.window_pixels() * dates) as f64,
                    };
                }
                if params.renormalize {
                    let p = &mut data[(y * w + x) * classes..(y * w + x + 1) * classes];
                    let total: f64 = p.iter().sum();
                    if total > 0.0 && guide(m, x, y).is_some() {
                        p.iter_mut().for_each(|v| *v /= total);
                    }
                }
            }
        }
        out.push(ProbabilityCube::new(w, h, classes, data)?);
    }
    CubeSet::new(out)
}
