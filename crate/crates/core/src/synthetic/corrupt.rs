use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::filter::CubeSet;
use crate::raster::Region;
use crate::{Error, Result};

/// How a block of probabilities is damaged. Every mode keeps the per-pixel
/// class sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    /// Exchange the two most probable classes (ties: lowest id ranks first).
    SwapTop2,
    /// Spread the pixel's mass evenly over all classes.
    Uniform,
    /// Move half the mass onto one class drawn from the seed.
    Bias,
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap-top2" => Ok(CorruptionMode::SwapTop2),
            "uniform" => Ok(CorruptionMode::Uniform),
            "bias" => Ok(CorruptionMode::Bias),
            other => Err(Error::InvalidParameter(format!(
                "unknown corruption mode '{other}' (expected swap-top2, uniform or bias)"
            ))),
        }
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionMode::SwapTop2 => "swap-top2",
            CorruptionMode::Uniform => "uniform",
            CorruptionMode::Bias => "bias",
        })
    }
}

fn top2(p: &[f64]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..p.len()).collect();
    // stable sort keeps lower ids first among ties
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    (order[0], order[1])
}

/// Returns a copy of `cubes` with `region` of `date` corrupted. Nodata
/// pixels are left alone.
pub fn corrupt_probabilities(
    cubes: &CubeSet,
    date: usize,
    region: &Region,
    mode: CorruptionMode,
    seed: u64,
) -> Result<CubeSet> {
    if date >= cubes.dates() {
        return Err(Error::InvalidParameter(format!(
            "date {date} out of range for {} dates",
            cubes.dates()
        )));
    }
    region.ensure_within(cubes.width(), cubes.height())?;
    let classes = cubes.classes();
    let bias_class = ChaCha8Rng::seed_from_u64(seed).gen_range(0..classes);
    let mut out = cubes.clone();
    let cube = out.cube_mut(date);
    let width = cube.width();
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            let p = cube.pixel_mut(y * width + x);
            if p[0].is_nan() {
                continue;
            }
            let sum: f64 = p.iter().sum();
            match mode {
                CorruptionMode::SwapTop2 => {
                    if classes >= 2 {
                        let (a, b) = top2(p);
                        p.swap(a, b);
                    }
                }
                CorruptionMode::Uniform => p.fill(sum / classes as f64),
                CorruptionMode::Bias => {
                    for v in p.iter_mut() {
                        *v *= 0.5;
                    }
                    p[bias_class] += 0.5 * sum;
                }
            }
        }
    }
    Ok(out)
}
