//! Grayscale morphology on DSMs: disk erosion, reconstruction by dilation,
//! and the top-hat-by-reconstruction nDSM.

use std::collections::VecDeque;

use crate::raster::Grid;
use crate::{Error, Result};

/// Flat disk structuring element: offsets `(dx, dy)` with `dx² + dy² <= r²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    radius: usize,
}

impl StructuringElement {
    pub fn disk(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidParameter(
                "structuring element radius must be at least 1".into(),
            ));
        }
        Ok(StructuringElement { radius })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Half chord width of the disk at row offset `dy`.
    pub fn half_width(&self, dy: isize) -> usize {
        let r = self.radius as isize;
        debug_assert!(dy.abs() <= r);
        let rem = (r * r - dy * dy) as usize;
        let mut hw = (rem as f64).sqrt() as usize;
        while (hw + 1) * (hw + 1) <= rem {
            hw += 1;
        }
        while hw * hw > rem {
            hw -= 1;
        }
        hw
    }
}

/// Sliding-window minimum over `[i - half, i + half]` (van Herk / Gil-Werman).
/// `row` uses `+inf` for excluded cells.
fn sliding_min(row: &[f32], half: usize, out: &mut [f32]) {
    let n = row.len();
    let k = 2 * half + 1;
    if half == 0 {
        out.copy_from_slice(row);
        return;
    }
    // Pad by `half` on both sides, then blocks of size k.
    let padded_len = n + 2 * half;
    let blocks = padded_len.div_ceil(k);
    let total = blocks * k;
    let get = |i: usize| {
        if i < half || i >= half + n {
            f32::INFINITY
        } else {
            row[i - half]
        }
    };
    let mut prefix = vec![f32::INFINITY; total];
    let mut suffix = vec![f32::INFINITY; total];
    for b in 0..blocks {
        let start = b * k;
        let mut acc = f32::INFINITY;
        for i in start..start + k {
            acc = acc.min(get(i));
            prefix[i] = acc;
        }
        let mut acc = f32::INFINITY;
        for i in (start..start + k).rev() {
            acc = acc.min(get(i));
            suffix[i] = acc;
        }
    }
    // Window in padded coords for output i is [i, i + k - 1].
    for (i, o) in out.iter_mut().enumerate() {
        *o = suffix[i].min(prefix[i + k - 1]);
    }
}

/// Erosion by a flat disk. Nodata cells and cells outside the grid are
/// excluded from the support; nodata centres stay nodata.
pub fn erode(grid: &Grid, se: &StructuringElement) -> Result<Grid> {
    let (w, h) = (grid.width(), grid.height());
    let r = se.radius() as isize;
    let src: Vec<f32> = grid
        .values()
        .iter()
        .map(|&v| if grid.is_nodata(v) { f32::INFINITY } else { v })
        .collect();
    let mut out = vec![f32::INFINITY; w * h];
    let mut row_min = vec![0f32; w];
    for dy in -r..=r {
        let half = se.half_width(dy);
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let sy = sy as usize;
            sliding_min(&src[sy * w..(sy + 1) * w], half, &mut row_min);
            for (o, &m) in out[y * w..(y + 1) * w].iter_mut().zip(&row_min) {
                *o = o.min(m);
            }
        }
    }
    for (o, &v) in out.iter_mut().zip(grid.values()) {
        if grid.is_nodata(v) {
            *o = grid.nodata();
        }
    }
    grid.with_values(out)
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Grayscale reconstruction by dilation of `marker` under `mask`
/// (8-connectivity), using the raster/anti-raster scan plus FIFO queue
/// formulation. `marker` is clipped to `mask` first; nodata mask cells are
/// neither updated nor propagated through.
pub fn reconstruct_by_dilation(marker: &Grid, mask: &Grid) -> Result<Grid> {
    marker.ensure_same_shape(mask, "reconstruction marker vs mask")?;
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let valid: Vec<bool> = mask.values().iter().map(|&v| !mask.is_nodata(v)).collect();
    let m: Vec<f32> = mask.values().to_vec();
    let mut j: Vec<f32> = marker
        .values()
        .iter()
        .zip(&m)
        .zip(&valid)
        .map(|((&mk, &ms), &ok)| {
            if !ok || marker.is_nodata(mk) {
                f32::NEG_INFINITY
            } else {
                mk.min(ms)
            }
        })
        .collect();
    let idx = |x: isize, y: isize| (y * w + x) as usize;
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h;

    // Forward scan with the causal half of the neighbourhood.
    for y in 0..h {
        for x in 0..w {
            let p = idx(x, y);
            if !valid[p] {
                continue;
            }
            let mut best = j[p];
            for &(dx, dy) in &NEIGHBOURS[..4] {
                let (qx, qy) = (x + dx, y + dy);
                if inside(qx, qy) && valid[idx(qx, qy)] {
                    best = best.max(j[idx(qx, qy)]);
                }
            }
            j[p] = best.min(m[p]);
        }
    }

    // Backward scan, seeding the queue where further propagation is possible.
    let mut queue = VecDeque::new();
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let p = idx(x, y);
            if !valid[p] {
                continue;
            }
            let mut best = j[p];
            for &(dx, dy) in &NEIGHBOURS[4..] {
                let (qx, qy) = (x + dx, y + dy);
                if inside(qx, qy) && valid[idx(qx, qy)] {
                    best = best.max(j[idx(qx, qy)]);
                }
            }
            j[p] = best.min(m[p]);
            for &(dx, dy) in &NEIGHBOURS[4..] {
                let (qx, qy) = (x + dx, y + dy);
                if inside(qx, qy) {
                    let q = idx(qx, qy);
                    if valid[q] && j[q] < j[p] && j[q] < m[q] {
                        queue.push_back(p);
                        break;
                    }
                }
            }
        }
    }

    while let Some(p) = queue.pop_front() {
        let (x, y) = ((p as isize) % w, (p as isize) / w);
        for &(dx, dy) in &NEIGHBOURS {
            let (qx, qy) = (x + dx, y + dy);
            if !inside(qx, qy) {
                continue;
            }
            let q = idx(qx, qy);
            if valid[q] && j[q] < j[p] && m[q] != j[q] {
                j[q] = j[p].min(m[q]);
                queue.push_back(q);
            }
        }
    }

    let nodata = mask.nodata();
    let values = j
        .into_iter()
        .zip(&valid)
        .map(|(v, &ok)| if ok && v.is_finite() { v } else { nodata })
        .collect();
    mask.with_values(values)
}

/// Opening by reconstruction: erosion by `se`, then reconstruction by
/// dilation under the original DSM. Approximates the ground surface.
pub fn reconstruct_by_erosion_opening(dsm: &Grid, se: &StructuringElement) -> Result<Grid> {
    let marker = erode(dsm, se)?;
    reconstruct_by_dilation(&marker, dsm)
}

/// Values this close to zero after subtraction are snapped to zero.
const NDSM_ZERO_SNAP: f32 = 1e-6;

/// Top-hat by reconstruction: `dsm - opening_by_reconstruction(dsm)`, >= 0.
pub fn ndsm(dsm: &Grid, se: &StructuringElement) -> Result<Grid> {
    let ground = reconstruct_by_erosion_opening(dsm, se)?;
    let values = dsm
        .values()
        .iter()
        .zip(ground.values())
        .map(|(&d, &g)| {
            if dsm.is_nodata(d) || ground.is_nodata(g) {
                dsm.nodata()
            } else {
                let v = d - g;
                if v.abs() < NDSM_ZERO_SNAP {
                    0.0
                } else {
                    v.max(0.0)
                }
            }
        })
        .collect();
    dsm.with_values(values)
}
