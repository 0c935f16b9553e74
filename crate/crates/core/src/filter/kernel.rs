//! One Jacobi-style filtering pass over all dates.
//!
//! Every output value at target date `m` is a weighted combination of the
//! previous iteration's values in the spatial window across all dates
//! (including `m`). Neighbour weights come from [`FilterGuide`] and are
//! either recomputed per pass or taken from a [`WeightTable`] built once;
//! both paths run the same gather and accumulate code, so they agree bit
//! for bit.

use rayon::prelude::*;

use super::cube::{CubeSet, ProbabilityCube};
use super::params::{FilterParams, Normalization, WeightMode, WEIGHT_CACHE_BUDGET};
use super::weights::FilterGuide;
use crate::stack::TemporalStack;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct WindowOffset {
    dx: isize,
    dy: isize,
    /// `(dx² + dy²) / 2 sigma_s²`
    spatial: f64,
}

/// Precomputed neighbour lists for every (date, pixel) centre.
///
/// Entries of centre `k = m * w * h + i` live in
/// `offsets[k]..offsets[k + 1]`; `sources` holds the flat neighbour index
/// `n * w * h + j` and `weights` holds `classes` weights per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    offsets: Vec<usize>,
    sources: Vec<u32>,
    weights: Vec<f64>,
}

impl WeightTable {
    pub fn entries(&self) -> usize {
        self.sources.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bit_identical(&self, other: &WeightTable) -> bool {
        self.offsets == other.offsets
            && self.sources == other.sources
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub cubes: CubeSet,
    /// Valid pixels whose total weight was zero and kept their previous value.
    pub zero_weight_pixels: usize,
}

/// The filter bound to one stack and parameter set.
#[derive(Debug, Clone)]
pub struct SpatiotemporalFilter {
    guide: FilterGuide,
    params: FilterParams,
    window: Vec<WindowOffset>,
    inv_2h2: Vec<f64>,
    spectral_scale: f64,
    cache: Option<WeightTable>,
}

#[derive(Default)]
struct Sums {
    num: Vec<f64>,
    den: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Sums {
    fn reset(&mut self, classes: usize) {
        self.num.clear();
        self.num.resize(classes, 0.0);
        self.den.clear();
        self.den.resize(classes, 0.0);
        self.lo.clear();
        self.lo.resize(classes, f64::INFINITY);
        self.hi.clear();
        self.hi.resize(classes, f64::NEG_INFINITY);
    }
}

#[derive(Default)]
struct Scratch {
    sources: Vec<u32>,
    weights: Vec<f64>,
    sums: Sums,
}

impl SpatiotemporalFilter {
    pub fn new(stack: &TemporalStack, params: &FilterParams) -> Result<Self> {
        params.validate()?;
        if stack.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "filtering needs at least 2 dates, got {}",
                stack.len()
            )));
        }
        let guide = FilterGuide::from_stack(stack)?;
        let r = params.window_radius as isize;
        let two_ss = 2.0 * params.sigma_s * params.sigma_s;
        let mut window = Vec::with_capacity(params.window_pixels());
        for dy in -r..=r {
            for dx in -r..=r {
                window.push(WindowOffset {
                    dx,
                    dy,
                    spatial: ((dx * dx + dy * dy) as f64) / two_ss,
                });
            }
        }
        let inv_2h2 = params
            .bandwidths
            .values()
            .iter()
            .map(|s| 1.0 / (2.0 * s * s))
            .collect();
        let mut filter = SpatiotemporalFilter {
            guide,
            params: params.clone(),
            window,
            inv_2h2,
            spectral_scale: 1.0 / (2.0 * params.sigma_r * params.sigma_r),
            cache: None,
        };
        let use_cache = match params.weight_mode {
            WeightMode::OnTheFly => false,
            WeightMode::Cached => true,
            WeightMode::Auto => filter.estimated_table_bytes() <= WEIGHT_CACHE_BUDGET,
        };
        if use_cache {
            filter.cache = Some(filter.build_weight_table());
        }
        Ok(filter)
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn guide(&self) -> &FilterGuide {
        &self.guide
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn classes(&self) -> usize {
        self.inv_2h2.len()
    }

    fn estimated_table_bytes(&self) -> usize {
        let pixels = self.guide.width() * self.guide.height();
        let t = self.guide.dates();
        let entries = pixels * t * self.window.len() * t;
        entries.saturating_mul(4 + 8 * self.classes())
    }

    /// Neighbour list and per-class weights for centre `(x, y)` at date `m`.
    /// Empty when the centre is nodata in the guide.
    fn gather(&self, m: usize, x: usize, y: usize, sources: &mut Vec<u32>, weights: &mut Vec<f64>) {
        sources.clear();
        weights.clear();
        let (w, h) = (self.guide.width(), self.guide.height());
        let plane = w * h;
        let center = m * plane + y * w + x;
        if !self.guide.is_valid(center) {
            return;
        }
        for n in 0..self.guide.dates() {
            for off in &self.window {
                let nx = x as isize + off.dx;
                let ny = y as isize + off.dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let k = n * plane + ny as usize * w + nx as usize;
                if !self.guide.is_valid(k) {
                    continue;
                }
                let base = off.spatial + self.guide.lab_distance2(center, k) * self.spectral_scale;
                let dh2 = self.guide.ndsm_distance2(center, k);
                sources.push(k as u32);
                for inv in &self.inv_2h2 {
                    weights.push((-(base + dh2 * inv)).exp());
                }
            }
        }
    }

    /// Builds the full weight table. Independent of any probabilities.
    pub fn build_weight_table(&self) -> WeightTable {
        let (w, h) = (self.guide.width(), self.guide.height());
        let rows: Vec<(Vec<usize>, Vec<u32>, Vec<f64>)> = (0..self.guide.dates() * h)
            .into_par_iter()
            .map(|row| {
                let (m, y) = (row / h, row % h);
                let mut counts = Vec::with_capacity(w);
                let mut sources = Vec::new();
                let mut weights = Vec::new();
                let (mut s, mut wt) = (Vec::new(), Vec::new());
                for x in 0..w {
                    self.gather(m, x, y, &mut s, &mut wt);
                    counts.push(s.len());
                    sources.extend_from_slice(&s);
                    weights.extend_from_slice(&wt);
                }
                (counts, sources, weights)
            })
            .collect();
        let mut offsets = Vec::with_capacity(self.guide.dates() * w * h + 1);
        offsets.push(0);
        let total: usize = rows.iter().map(|r| r.1.len()).sum();
        let mut sources = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total * self.classes());
        for (counts, s, wt) in rows {
            for c in counts {
                offsets.push(offsets.last().copied().unwrap_or(0) + c);
            }
            sources.extend(s);
            weights.extend(wt);
        }
        WeightTable {
            offsets,
            sources,
            weights,
        }
    }

    /// Combines neighbour values into `out` for one centre. Returns `true`
    /// when the total weight was zero and the previous value was kept.
    ///
    /// In weight-sum mode the mean is taken of differences to the centre's
    /// previous value and clamped to the range of the values averaged, so a
    /// constant neighbourhood reproduces itself bit for bit.
    fn accumulate(
        &self,
        prev: &CubeSet,
        sources: &[u32],
        weights: &[f64],
        center_prev: &[f64],
        sums: &mut Sums,
        out: &mut [f64],
    ) -> bool {
        let classes = self.classes();
        let plane = self.guide.width() * self.guide.height();
        let weight_sum = self.params.normalization == Normalization::WeightSum;
        sums.reset(classes);
        for (e, &src) in sources.iter().enumerate() {
            let src = src as usize;
            let p = prev.cube(src / plane).pixel(src % plane);
            if p[0].is_nan() {
                continue;
            }
            let wrow = &weights[e * classes..(e + 1) * classes];
            for c in 0..classes {
                let v = if weight_sum { p[c] - center_prev[c] } else { p[c] };
                sums.num[c] += wrow[c] * v;
                sums.den[c] += wrow[c];
                sums.lo[c] = sums.lo[c].min(p[c]);
                sums.hi[c] = sums.hi[c].max(p[c]);
            }
        }
        let mut zero = false;
        match self.params.normalization {
            Normalization::WeightSum => {
                for c in 0..classes {
                    if sums.den[c] > 0.0 {
                        let v = center_prev[c] + sums.num[c] / sums.den[c];
                        out[c] = v.clamp(sums.lo[c], sums.hi[c]);
                    } else {
                        out[c] = center_prev[c];
                        zero = true;
                    }
                }
            }
            Normalization::LiteralNT => {
                let norm = (self.params.window_pixels() * self.guide.dates()) as f64;
                if sums.den.iter().all(|&d| d == 0.0) {
                    out.copy_from_slice(center_prev);
                    zero = true;
                } else {
                    for c in 0..classes {
                        out[c] = sums.num[c] / norm;
                    }
                }
            }
        }
        if self.params.renormalize && !zero {
            let sum: f64 = out.iter().sum();
            if sum > 0.0 {
                for v in out.iter_mut() {
                    *v /= sum;
                }
            }
        }
        zero
    }

    fn check_input(&self, prev: &CubeSet) -> Result<()> {
        if prev.dates() != self.guide.dates()
            || prev.width() != self.guide.width()
            || prev.height() != self.guide.height()
        {
            return Err(Error::Dimension(format!(
                "cubes are {}x{} over {} dates, stack is {}x{} over {}",
                prev.width(),
                prev.height(),
                prev.dates(),
                self.guide.width(),
                self.guide.height(),
                self.guide.dates()
            )));
        }
        if prev.classes() != self.classes() {
            return Err(Error::InvalidParameter(format!(
                "cubes have {} classes, bandwidth table {}",
                prev.classes(),
                self.classes()
            )));
        }
        Ok(())
    }

    /// One filtering pass. Reads only `prev`; nodata pixels stay nodata.
    pub fn iterate(&self, prev: &CubeSet) -> Result<IterationOutput> {
        self.check_input(prev)?;
        let (w, h) = (self.guide.width(), self.guide.height());
        let classes = self.classes();
        let mut zero_weight_pixels = 0;
        let mut cubes = Vec::with_capacity(self.guide.dates());
        for m in 0..self.guide.dates() {
            let prev_m = prev.cube(m);
            let mut data = vec![0f64; w * h * classes];
            let zero_rows: Vec<usize> = data
                .par_chunks_mut(w * classes)
                .enumerate()
                .map_init(Scratch::default, |scratch, (y, row_out)| {
                    let mut zeros = 0;
                    for x in 0..w {
                        let i = y * w + x;
                        let out = &mut row_out[x * classes..(x + 1) * classes];
                        let center_prev = prev_m.pixel(i);
                        if center_prev[0].is_nan() {
                            out.copy_from_slice(center_prev);
                            continue;
                        }
                        let zero = match &self.cache {
                            Some(table) => {
                                let k = m * w * h + i;
                                let (a, b) = (table.offsets[k], table.offsets[k + 1]);
                                self.accumulate(
                                    prev,
                                    &table.sources[a..b],
                                    &table.weights[a * classes..b * classes],
                                    center_prev,
                                    &mut scratch.sums,
                                    out,
                                )
                            }
                            None => {
                                let Scratch { sources, weights, sums } = scratch;
                                self.gather(m, x, y, sources, weights);
                                self.accumulate(prev, sources, weights, center_prev, sums, out)
                            }
                        };
                        zeros += usize::from(zero);
                    }
                    zeros
                })
                .collect();
            zero_weight_pixels += zero_rows.iter().sum::<usize>();
            cubes.push(ProbabilityCube::new(w, h, classes, data)?);
        }
        Ok(IterationOutput {
            cubes: CubeSet::new(cubes)?,
            zero_weight_pixels,
        })
    }
}

/// Single pass of the filter over `prev`.
pub fn filter_iteration(
    prev: &CubeSet,
    stack: &TemporalStack,
    params: &FilterParams,
) -> Result<IterationOutput> {
    SpatiotemporalFilter::new(stack, params)?.iterate(prev)
}
