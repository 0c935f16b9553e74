//! Shift-only DSM co-registration.
//!
//! The target is modelled as the reference translated by `(dx, dy)` and
//! offset by `dz`: `tgt(p + s) = ref(p) + dz`. The shift minimises the sum
//! of squared height residuals over inlier pixels, solved by damped
//! Gauss-Newton with bilinear sampling and central-difference gradients.
//! Inliers are re-evaluated against the current shift on every iteration.

use rayon::prelude::*;

use crate::raster::{sample_bilinear, ClassRaster, Grid};
use crate::{Error, Result};

pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 6.0;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
pub const MIN_OVERLAP: usize = 1000;

/// Iteration stops once the planimetric update is below this many cells.
const STEP_TOLERANCE_CELLS: f64 = 0.01;
const GRADIENT_STEP: f64 = 0.5;
const MAX_STEP_HALVINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoregistrationParams {
    pub outlier_threshold: f64,
    pub max_iterations: usize,
}

impl Default for CoregistrationParams {
    fn default() -> Self {
        CoregistrationParams {
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Translation of a target DSM relative to its reference. `dx`/`dy` in
/// metres (positive x = columns, positive y = rows), `dz` in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEstimate {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub inlier_count: usize,
    /// RMS residual over inliers only.
    pub rms_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inlier RMS after each accepted iteration, starting with the initial guess.
    pub rms_history: Vec<f64>,
}

impl ShiftEstimate {
    pub fn zero() -> Self {
        ShiftEstimate {
            dx: 0.0,
            dy: 0.0,
            dz: 0.0,
            inlier_count: 0,
            rms_residual: 0.0,
            iterations: 0,
            converged: true,
            rms_history: Vec::new(),
        }
    }

    pub fn from_components(dx: f64, dy: f64, dz: f64) -> Self {
        ShiftEstimate {
            dx,
            dy,
            dz,
            ..ShiftEstimate::zero()
        }
    }

    /// The shift that undoes this one.
    pub fn inverse(&self) -> Self {
        ShiftEstimate::from_components(-self.dx, -self.dy, -self.dz)
    }

    /// `key=value` lines: dx, dy, dz, rms, inliers, iterations, converged.
    pub fn to_report(&self) -> String {
        format!(
            "dx={}\ndy={}\ndz={}\nrms={}\ninliers={}\niterations={}\nconverged={}\n",
            self.dx,
            self.dy,
            self.dz,
            self.rms_residual,
            self.inlier_count,
            self.iterations,
            self.converged
        )
    }

    pub fn parse_report(text: &str) -> Result<Self> {
        let mut est = ShiftEstimate::zero();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("shift report line '{line}'")))?;
            let bad = || Error::Format(format!("bad value in shift report line '{line}'"));
            match k.trim() {
                "dx" => est.dx = v.trim().parse().map_err(|_| bad())?,
                "dy" => est.dy = v.trim().parse().map_err(|_| bad())?,
                "dz" => est.dz = v.trim().parse().map_err(|_| bad())?,
                "rms" => est.rms_residual = v.trim().parse().map_err(|_| bad())?,
                "inliers" => est.inlier_count = v.trim().parse().map_err(|_| bad())?,
                "iterations" => est.iterations = v.trim().parse().map_err(|_| bad())?,
                "converged" => est.converged = v.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::Format(format!("unknown shift report key '{other}'"))),
            }
        }
        Ok(est)
    }
}

/// Resamples `grid` so that `out(p) = grid(p - s) + dz`, i.e. moves its
/// content by the shift. Samples falling outside the grid become nodata.
pub fn apply_shift(grid: &Grid, shift: &ShiftEstimate) -> Result<Grid> {
    let cell = grid.cell_size();
    let (sx, sy) = (shift.dx / cell, shift.dy / cell);
    let w = grid.width();
    let values: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            match sample_bilinear(grid, x - sx, y - sy) {
                Some(v) => (v + shift.dz) as f32,
                None => grid.nodata(),
            }
        })
        .collect();
    grid.with_values(values)
}

/// Aligns a target onto its reference given the estimated shift.
pub fn align_to_reference(tgt: &Grid, shift: &ShiftEstimate) -> Result<Grid> {
    apply_shift(tgt, &shift.inverse())
}

/// Like [`align_to_reference`] but without the height offset, for
/// non-elevation rasters such as image bands.
pub fn align_planimetric(tgt: &Grid, shift: &ShiftEstimate) -> Result<Grid> {
    apply_shift(tgt, &ShiftEstimate::from_components(-shift.dx, -shift.dy, 0.0))
}

/// Nearest-neighbour alignment of a label raster with cell size `cell`.
/// Pixels mapping outside the raster become unlabeled.
pub fn align_labels(labels: &ClassRaster, cell: f64, shift: &ShiftEstimate) -> Result<ClassRaster> {
    let (sx, sy) = (shift.dx / cell, shift.dy / cell);
    let (w, h) = (labels.width(), labels.height());
    let values = (0..w * h)
        .map(|i| {
            let u = ((i % w) as f64 + sx).round();
            let v = ((i / w) as f64 + sy).round();
            if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                ClassRaster::UNLABELED
            } else {
                labels.get(u as usize, v as usize)
            }
        })
        .collect();
    ClassRaster::new(w, h, values)
}

/// Normal-equation sums for one pass.
#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    jtj: [f64; 6],
    jtr: [f64; 3],
    sq: f64,
    count: usize,
}

impl Accum {
    fn merge(mut self, o: &Accum) -> Accum {
        for k in 0..6 {
            self.jtj[k] += o.jtj[k];
        }
        for k in 0..3 {
            self.jtr[k] += o.jtr[k];
        }
        self.sq += o.sq;
        self.count += o.count;
        self
    }

    fn rms(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            (self.sq / self.count as f64).sqrt()
        }
    }
}

struct Problem<'a> {
    reference: &'a Grid,
    target: &'a Grid,
    threshold: f64,
}

impl Problem<'_> {
    /// Residual `tgt(p + s) - dz - ref(p)` at pixel `i`.
    fn residual(&self, i: usize, s: [f64; 3]) -> Option<f64> {
        let w = self.reference.width();
        let (x, y) = (i % w, i / w);
        let r = f64::from(self.reference.value(x, y)?);
        let t = sample_bilinear(self.target, x as f64 + s[0], y as f64 + s[1])?;
        Some(t - s[2] - r)
    }

    /// Per-row partial sums, folded in row order so the result does not
    /// depend on the worker count.
    fn accumulate(&self, s: [f64; 3], with_jacobian: bool) -> Accum {
        let w = self.reference.width();
        let h = self.reference.height();
        let rows: Vec<Accum> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut acc = Accum::default();
                for x in 0..w {
                    let i = y * w + x;
                    let Some(r) = self.residual(i, s) else { continue };
                    if r.abs() > self.threshold {
                        continue;
                    }
                    acc.sq += r * r;
                    acc.count += 1;
                    if !with_jacobian {
                        continue;
                    }
                    // Reference slopes stand in for target slopes at p + s;
                    // they agree at the solution and are not touched by
                    // target blunders.
                    let (u, v) = (x as f64, y as f64);
                    let Some(gx) = self.gradient(u, v, true) else { continue };
                    let Some(gy) = self.gradient(u, v, false) else { continue };
                    let j = [gx, gy, -1.0];
                    acc.jtj[0] += j[0] * j[0];
                    acc.jtj[1] += j[0] * j[1];
                    acc.jtj[2] += j[0] * j[2];
                    acc.jtj[3] += j[1] * j[1];
                    acc.jtj[4] += j[1] * j[2];
                    acc.jtj[5] += j[2] * j[2];
                    acc.jtr[0] += j[0] * r;
                    acc.jtr[1] += j[1] * r;
                    acc.jtr[2] += j[2] * r;
                }
                acc
            })
            .collect();
        rows.iter().fold(Accum::default(), |a, b| a.merge(b))
    }

    fn gradient(&self, u: f64, v: f64, along_x: bool) -> Option<f64> {
        let h = GRADIENT_STEP;
        let (a, b) = if along_x {
            (
                sample_bilinear(self.reference, u + h, v)?,
                sample_bilinear(self.reference, u - h, v)?,
            )
        } else {
            (
                sample_bilinear(self.reference, u, v + h)?,
                sample_bilinear(self.reference, u, v - h)?,
            )
        };
        Some((a - b) / (2.0 * h))
    }
}

/// Solves the symmetric 3x3 system stored as upper triangle `[a00 a01 a02 a11 a12 a22]`.
fn solve3(m: [f64; 6], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [
        [m[0], m[1], m[2], b[0]],
        [m[1], m[3], m[4], b[1]],
        [m[2], m[4], m[5], b[2]],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0f64; 3];
    for row in (0..3).rev() {
        let mut s = a[row][3];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Estimates the translation of `tgt` relative to `ref_dsm`.
///
/// Returns the best estimate with `converged == false` when `max_iterations`
/// is exhausted.
pub fn estimate_shift(
    ref_dsm: &Grid,
    tgt_dsm: &Grid,
    params: &CoregistrationParams,
) -> Result<ShiftEstimate> {
    ref_dsm.ensure_same_shape(tgt_dsm, "co-registration")?;
    if ref_dsm.cell_size() != tgt_dsm.cell_size() {
        return Err(Error::Dimension(format!(
            "cell sizes differ: {} vs {}",
            ref_dsm.cell_size(),
            tgt_dsm.cell_size()
        )));
    }
    if !(params.outlier_threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "outlier threshold must be positive, got {}",
            params.outlier_threshold
        )));
    }
    let diffs: Vec<f64> = ref_dsm
        .values()
        .iter()
        .zip(tgt_dsm.values())
        .filter(|(r, t)| !ref_dsm.is_nodata(**r) && !tgt_dsm.is_nodata(**t))
        .map(|(&r, &t)| f64::from(t) - f64::from(r))
        .collect();
    if diffs.len() < MIN_OVERLAP {
        return Err(Error::InsufficientOverlap {
            found: diffs.len(),
            required: MIN_OVERLAP,
        });
    }

    let problem = Problem {
        reference: ref_dsm,
        target: tgt_dsm,
        threshold: params.outlier_threshold,
    };
    let mut s = [0.0, 0.0, median(diffs)];
    let mut current = problem.accumulate(s, true);
    let mut history = vec![current.rms()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iterations {
        if current.count < 3 {
            return Err(Error::InsufficientOverlap {
                found: current.count,
                required: 3,
            });
        }
        iterations += 1;
        let neg = current.jtr.map(|v| -v);
        let Some(step) = solve3(current.jtj, neg) else {
            converged = true;
            break;
        };
        let step_cells = step[0].abs().max(step[1].abs());

        // Halve the step until the inlier RMS does not increase.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let trial = [
                s[0] + alpha * step[0],
                s[1] + alpha * step[1],
                s[2] + alpha * step[2],
            ];
            let acc = problem.accumulate(trial, false);
            if acc.count >= 3 && acc.rms() <= current.rms() {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(trial) = accepted else {
            converged = step_cells < STEP_TOLERANCE_CELLS || current.rms() < 1e-9;
            break;
        };
        s = trial;
        current = problem.accumulate(s, true);
        history.push(current.rms());
        if alpha * step_cells < STEP_TOLERANCE_CELLS {
            converged = true;
            break;
        }
    }

    let cell = ref_dsm.cell_size();
    Ok(ShiftEstimate {
        dx: s[0] * cell,
        dy: s[1] * cell,
        dz: s[2],
        inlier_count: current.count,
        rms_residual: current.rms(),
        iterations,
        converged,
        rms_history: history,
    })
}

/// Inlier mask on the reference grid for a given shift: valid overlap and
/// `|residual| <= threshold`.
pub fn classify_inliers(
    ref_dsm: &Grid,
    tgt_dsm: &Grid,
    shift: &ShiftEstimate,
    threshold: f64,
) -> Result<Vec<bool>> {
    ref_dsm.ensure_same_shape(tgt_dsm, "co-registration")?;
    let cell = ref_dsm.cell_size();
    let problem = Problem {
        reference: ref_dsm,
        target: tgt_dsm,
        threshold,
    };
    let s = [shift.dx / cell, shift.dy / cell, shift.dz];
    Ok((0..ref_dsm.len())
        .map(|i| problem.residual(i, s).is_some_and(|r| r.abs() <= threshold))
        .collect())
}
