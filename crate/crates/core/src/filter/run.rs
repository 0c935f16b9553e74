use std::time::Instant;

use super::convergence::{check_convergence, IterationStats};
use super::cube::{CubeSet, SUM_TOLERANCE};
use super::kernel::SpatiotemporalFilter;
use super::params::FilterParams;
use crate::stack::TemporalStack;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every iterate; `history[0]` is the input.
    pub keep_history: bool,
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub cubes: CubeSet,
    pub stats: Vec<IterationStats>,
    pub history: Vec<CubeSet>,
    pub converged: bool,
}

impl FilterRun {
    pub fn iterations(&self) -> usize {
        self.stats.len()
    }
}

/// Values must stay in [0, 1]. Class sums are only pinned to 1 when the
/// pixels are renormalized; per-class bandwidths let them drift otherwise.
fn check_iterate(cubes: &CubeSet, iteration: usize, renormalize: bool) -> Result<()> {
    for (t, cube) in cubes.cubes().iter().enumerate() {
        for i in 0..cube.len() {
            let p = cube.pixel(i);
            if p[0].is_nan() {
                continue;
            }
            let sum: f64 = p.iter().sum();
            let bad_sum = renormalize && sum > 0.0 && (sum - 1.0).abs() > SUM_TOLERANCE;
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || bad_sum {
                return Err(Error::InvalidCube(format!(
                    "iteration {iteration}, date {t}, pixel {i}: values {p:?} left the unit range"
                )));
            }
        }
    }
    Ok(())
}

/// Iterates the filter until the mean relative change drops below tau or
/// the iteration cap is hit. Not converging is reported, not an error.
pub fn run_filter(
    initial: &CubeSet,
    stack: &TemporalStack,
    params: &FilterParams,
    options: &RunOptions,
) -> Result<FilterRun> {
    initial.validate()?;
    let filter = SpatiotemporalFilter::new(stack, params)?;
    let mut history = Vec::new();
    if options.keep_history {
        history.push(initial.clone());
    }
    let mut current = initial.clone();
    let mut stats = Vec::new();
    let mut converged = false;
    for k in 1..=params.max_iterations {
        let start = Instant::now();
        let out = filter.iterate(&current)?;
        check_iterate(&out.cubes, k, params.renormalize)?;
        let mut s = check_convergence(&current, &out.cubes, params)?;
        s.iteration = k;
        s.zero_weight_pixels = out.zero_weight_pixels;
        s.seconds = start.elapsed().as_secs_f64();
        converged = s.converged;
        stats.push(s);
        current = out.cubes;
        if options.keep_history {
            history.push(current.clone());
        }
        if converged {
            break;
        }
    }
    Ok(FilterRun {
        cubes: current,
        stats,
        history,
        converged,
    })
}
