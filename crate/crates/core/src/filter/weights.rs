//! The spatiotemporal bilateral weight.
//!
//! For a centre pixel `i` at target date `m` and a neighbour `j` at date `n`:
//!
//! ```text
//! W = exp(-( |xy_i - xy_j|^2 / 2 sigma_s^2
//!          + |Lab_i(m) - Lab_j(n)|^2 / 2 sigma_r^2
//!          + (ndsm_i(m) - ndsm_j(n))^2 / 2 sigma_h(c)^2 ))
//! ```
//!
//! The weight depends only on the stack and the parameters, never on the
//! probabilities, so it is constant across iterations.

use super::params::FilterParams;
use crate::raster::to_cielab;
use crate::stack::TemporalStack;
use crate::{Error, Result};

/// A pixel at a given date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRef {
    pub x: usize,
    pub y: usize,
    pub date: usize,
}

impl PixelRef {
    pub fn new(x: usize, y: usize, date: usize) -> Self {
        PixelRef { x, y, date }
    }
}

/// Per-date CIELAB colour and nDSM, flattened as `date * (w * h) + pixel`.
#[derive(Debug, Clone)]
pub struct FilterGuide {
    width: usize,
    height: usize,
    dates: usize,
    lab: Vec<[f64; 3]>,
    ndsm: Vec<f64>,
    valid: Vec<bool>,
}

impl FilterGuide {
    pub fn from_stack(stack: &TemporalStack) -> Result<Self> {
        let (width, height) = (stack.width(), stack.height());
        let n = width * height;
        let mut lab = Vec::with_capacity(n * stack.len());
        let mut ndsm = Vec::with_capacity(n * stack.len());
        let mut valid = Vec::with_capacity(n * stack.len());
        for scene in stack.scenes() {
            let converted = to_cielab(&scene.image)?;
            let (l, a, b) = (converted.band("L")?, converted.band("a")?, converted.band("b")?);
            for i in 0..n {
                let h = scene.ndsm.valid_at(i);
                let c = (l.valid_at(i), a.valid_at(i), b.valid_at(i));
                match (h, c) {
                    (Some(h), (Some(l), Some(a), Some(b))) => {
                        lab.push([f64::from(l), f64::from(a), f64::from(b)]);
                        ndsm.push(f64::from(h));
                        valid.push(true);
                    }
                    _ => {
                        lab.push([0.0; 3]);
                        ndsm.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Ok(FilterGuide {
            width,
            height,
            dates: stack.len(),
            lab,
            ndsm,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dates(&self) -> usize {
        self.dates
    }

    #[inline]
    pub(crate) fn index(&self, p: PixelRef) -> usize {
        p.date * self.width * self.height + p.y * self.width + p.x
    }

    #[inline]
    pub(crate) fn is_valid(&self, k: usize) -> bool {
        self.valid[k]
    }

    #[inline]
    pub(crate) fn lab_distance2(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (&self.lab[a], &self.lab[b]);
        let d0 = p[0] - q[0];
        let d1 = p[1] - q[1];
        let d2 = p[2] - q[2];
        d0 * d0 + d1 * d1 + d2 * d2
    }

    #[inline]
    pub(crate) fn ndsm_distance2(&self, a: usize, b: usize) -> f64 {
        let d = self.ndsm[a] - self.ndsm[b];
        d * d
    }
}

/// `exp(-(d_xy2 / 2 sigma_s^2 + d_lab2 / 2 sigma_r^2 + d_h2 / 2 sigma_h^2))`.
#[inline]
pub fn weight_from_distances(
    d_xy2: f64,
    d_lab2: f64,
    d_h2: f64,
    sigma_s: f64,
    sigma_r: f64,
    sigma_h: f64,
) -> f64 {
    (-(d_xy2 / (2.0 * sigma_s * sigma_s)
        + d_lab2 / (2.0 * sigma_r * sigma_r)
        + d_h2 / (2.0 * sigma_h * sigma_h)))
        .exp()
}

/// Weight of `neighbor` when filtering `center` for `class`. Zero when
/// either pixel is nodata in the guide.
pub fn compute_weight(
    guide: &FilterGuide,
    params: &FilterParams,
    center: PixelRef,
    neighbor: PixelRef,
    class: usize,
) -> Result<f64> {
    for p in [center, neighbor] {
        if p.x >= guide.width || p.y >= guide.height || p.date >= guide.dates {
            return Err(Error::Dimension(format!(
                "pixel ({}, {}) at date {} outside {}x{}x{}",
                p.x, p.y, p.date, guide.width, guide.height, guide.dates
            )));
        }
    }
    if class >= params.bandwidths.len() {
        return Err(Error::InvalidParameter(format!(
            "class {class} has no bandwidth"
        )));
    }
    let (a, b) = (guide.index(center), guide.index(neighbor));
    if !guide.is_valid(a) || !guide.is_valid(b) {
        return Ok(0.0);
    }
    let dx = center.x as f64 - neighbor.x as f64;
    let dy = center.y as f64 - neighbor.y as f64;
    Ok(weight_from_distances(
        dx * dx + dy * dy,
        guide.lab_distance2(a, b),
        guide.ndsm_distance2(a, b),
        params.sigma_s,
        params.sigma_r,
        params.bandwidths.sigma_h(class),
    ))
}
