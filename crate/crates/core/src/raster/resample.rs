//! Bilinear sampling and cell-size resampling.
//!
//! Coordinates are in pixel-index space: `(u, v) = (x, y)` addresses the
//! centre of cell `(x, y)`.

use super::{ClassRaster, Grid};
use crate::{Error, Result};

/// Bilinear interpolation at `(u, v)`. `None` outside the grid or when a
/// contributing cell with non-zero weight is nodata.
#[inline]
pub fn sample_bilinear(grid: &Grid, u: f64, v: f64) -> Option<f64> {
    let max_u = (grid.width() - 1) as f64;
    let max_v = (grid.height() - 1) as f64;
    if !(u >= 0.0 && u <= max_u && v >= 0.0 && v <= max_v) {
        return None;
    }
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    let at = |x: usize, y: usize| grid.value(x, y).map(f64::from);
    let top = lerp(at(x0, y0)?, || at(x1, y0), fx)?;
    let bottom = if y1 == y0 {
        top
    } else {
        lerp(at(x0, y1)?, || at(x1, y1), fx)?
    };
    if fy > 0.0 {
        Some(top + (bottom - top) * fy)
    } else {
        Some(top)
    }
}

#[inline]
fn lerp(a: f64, b: impl FnOnce() -> Option<f64>, t: f64) -> Option<f64> {
    if t > 0.0 {
        let b = b()?;
        Some(a + (b - a) * t)
    } else {
        Some(a)
    }
}

/// As [`sample_bilinear`] with coordinates clamped to the grid.
#[inline]
pub fn sample_bilinear_clamped(grid: &Grid, u: f64, v: f64) -> Option<f64> {
    let u = u.clamp(0.0, (grid.width() - 1) as f64);
    let v = v.clamp(0.0, (grid.height() - 1) as f64);
    sample_bilinear(grid, u, v)
}

fn output_dims(width: usize, height: usize, cell: f64, target: f64) -> Result<(usize, usize)> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target cell size must be positive, got {target}"
        )));
    }
    // Slack keeps exact ratios like 3 * 0.5 / 0.25 from rounding up a cell.
    let dim = |n: usize| ((n as f64 * cell / target) - 1e-9).ceil();
    let (w, h) = (dim(width), dim(height));
    if !(w >= 1.0 && h >= 1.0 && w * h <= (u32::MAX as f64)) {
        return Err(Error::Dimension(format!(
            "resampling {width}x{height} at {cell} m to {target} m gives degenerate size {w}x{h}"
        )));
    }
    Ok((w as usize, h as usize))
}

/// Bilinear resampling to `target_cell_size`. The output covers the input
/// extent; cells whose interpolation touches nodata become nodata.
pub fn resample(grid: &Grid, target_cell_size: f64) -> Result<Grid> {
    let cell = grid.cell_size();
    let (w, h) = output_dims(grid.width(), grid.height(), cell, target_cell_size)?;
    if w == grid.width() && h == grid.height() && target_cell_size == cell {
        return Ok(grid.clone());
    }
    let ratio = target_cell_size / cell;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        let v = (y as f64 + 0.5) * ratio - 0.5;
        for x in 0..w {
            let u = (x as f64 + 0.5) * ratio - 0.5;
            values.push(
                sample_bilinear_clamped(grid, u, v)
                    .map(|s| s as f32)
                    .unwrap_or(grid.nodata()),
            );
        }
    }
    Grid::new(w, h, target_cell_size, grid.nodata(), values)
}

/// Nearest-neighbour resampling for class rasters.
pub fn resample_labels(labels: &ClassRaster, cell_size: f64, target_cell_size: f64) -> Result<ClassRaster> {
    let (w, h) = output_dims(labels.width(), labels.height(), cell_size, target_cell_size)?;
    let ratio = target_cell_size / cell_size;
    let pick = |k: usize, n: usize| (((k as f64 + 0.5) * ratio).floor() as usize).min(n - 1);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = pick(y, labels.height());
        for x in 0..w {
            values.push(labels.get(pick(x, labels.width()), sy));
        }
    }
    ClassRaster::new(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::DEFAULT_NODATA;
    use proptest::prelude::*;

    #[test]
    fn same_cell_size_is_identity() {
        let g = Grid::from_fn(5, 4, 0.5, |x, y| (x * 10 + y) as f32).unwrap();
        assert!(resample(&g, 0.5).unwrap().bit_identical(&g));
    }

    #[test]
    fn constant_upsampled() {
        let g = Grid::filled(2, 2, 1.0, 3.7).unwrap();
        let r = resample(&g, 0.5).unwrap();
        assert_eq!((r.width(), r.height()), (4, 4));
        assert!(r.values().iter().all(|&v| v == 3.7));
    }

    #[test]
    fn ramp_midpoints_match_analytic_ramp() {
        // v(x, y) = 2x + 3y at cell centres
        let g = Grid::from_fn(8, 6, 1.0, |x, y| (2 * x + 3 * y) as f32).unwrap();
        let r = resample(&g, 0.5).unwrap();
        assert_eq!((r.width(), r.height()), (16, 12));
        for y in 1..11 {
            for x in 1..15 {
                let u = (x as f64 + 0.5) * 0.5 - 0.5;
                let v = (y as f64 + 0.5) * 0.5 - 0.5;
                let expected = 2.0 * u + 3.0 * v;
                assert!((f64::from(r.get(x, y)) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nodata_contaminates_neighbours_only() {
        let mut g = Grid::filled(4, 4, 1.0, 1.0).unwrap();
        g.set(0, 0, DEFAULT_NODATA).unwrap();
        let r = resample(&g, 0.5).unwrap();
        assert_eq!(r.value(0, 0), None);
        assert_eq!(r.value(2, 2), None);
        assert_eq!(r.value(7, 7), Some(1.0));
        assert_eq!(sample_bilinear(&g, 1.0, 1.0), Some(1.0));
        assert_eq!(sample_bilinear(&g, 0.5, 1.0), Some(1.0));
        assert_eq!(sample_bilinear(&g, 0.5, 0.5), None);
    }

    #[test]
    fn degenerate_target_rejected() {
        let g = Grid::filled(2, 2, 1.0, 0.0).unwrap();
        assert!(resample(&g, 0.0).is_err());
        assert!(resample(&g, -1.0).is_err());
        assert!(resample(&g, 1e-12).is_err());
    }

    #[test]
    fn sampler_outside_grid_is_none() {
        let g = Grid::filled(3, 3, 1.0, 1.0).unwrap();
        assert_eq!(sample_bilinear(&g, -0.01, 1.0), None);
        assert_eq!(sample_bilinear(&g, 2.0, 2.0), Some(1.0));
        assert_eq!(sample_bilinear(&g, 2.0001, 2.0), None);
    }

    #[test]
    fn labels_nearest_neighbour() {
        let l = ClassRaster::new(2, 1, vec![3, 5]).unwrap();
        let r = resample_labels(&l, 1.0, 0.5).unwrap();
        assert_eq!(r.values(), &[3, 3, 5, 5, 3, 3, 5, 5]);
        let d = resample_labels(&r, 0.5, 1.0).unwrap();
        assert_eq!(d, l);
    }

    proptest! {
        #[test]
        fn bilinear_output_within_input_range(
            values in proptest::collection::vec(-100f32..100.0, 36),
            target in 0.2f64..3.0,
        ) {
            let g = Grid::new(6, 6, 1.0, DEFAULT_NODATA, values).unwrap();
            let (lo, hi) = g.min_max().unwrap();
            let r = resample(&g, target).unwrap();
            for &v in r.values() {
                prop_assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
            }
        }

        #[test]
        fn constants_preserved_exactly(c in -1e4f32..1e4, target in 0.1f64..4.0) {
            let g = Grid::filled(5, 3, 1.0, c).unwrap();
            let r = resample(&g, target).unwrap();
            prop_assert!(r.values().iter().all(|&v| v == c));
        }
    }
}
