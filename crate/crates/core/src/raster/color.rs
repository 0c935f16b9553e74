//! Band math: NDVI and the CIELAB pseudo-colour transform.

use super::{Grid, MultibandImage, BAND_GREEN, BAND_NIR, BAND_RED};
use crate::{Error, Result};

/// Denominators `nir + red` at or below this are treated as undefined.
pub const NDVI_EPSILON: f64 = 1e-6;

/// Inputs may exceed [0, 1] by this much from rounding after 8-bit scaling.
const RANGE_SLACK: f32 = 1e-6;

// sRGB primaries to XYZ, D65 reference white (2 degree observer).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
];
const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

/// `(nir - red) / (nir + red)`. Nodata where either input is nodata or
/// negative, or where the denominator is at most [`NDVI_EPSILON`].
pub fn ndvi(image: &MultibandImage) -> Result<Grid> {
    let nir = image.band(BAND_NIR)?;
    let red = image.band(BAND_RED)?;
    let nodata = nir.nodata();
    let values = nir
        .values()
        .iter()
        .zip(red.values())
        .map(|(&n, &r)| {
            if nir.is_nodata(n) || red.is_nodata(r) || n < 0.0 || r < 0.0 {
                return nodata;
            }
            let (n, r) = (f64::from(n), f64::from(r));
            let denom = n + r;
            if denom <= NDVI_EPSILON {
                nodata
            } else {
                ((n - r) / denom).clamp(-1.0, 1.0) as f32
            }
        })
        .collect();
    nir.with_values(values)
}

/// Converts a NIR/red/green image with values in [0, 1] to CIELAB, feeding
/// NIR, red and green as the R, G and B channels of an sRGB colour.
///
/// The output has bands `L`, `a`, `b`; `L` lies in [0, 100]. A pixel that
/// is nodata in any input band is nodata in all outputs.
pub fn to_cielab(image: &MultibandImage) -> Result<MultibandImage> {
    let channels = [
        image.band(BAND_NIR)?,
        image.band(BAND_RED)?,
        image.band(BAND_GREEN)?,
    ];
    let n = channels[0].len();
    let nodata = channels[0].nodata();
    let mut out = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
    for i in 0..n {
        let mut rgb = [0f64; 3];
        let mut missing = false;
        for (k, band) in channels.iter().enumerate() {
            match band.valid_at(i) {
                Some(v) if (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) => {
                    rgb[k] = f64::from(v.clamp(0.0, 1.0))
                }
                Some(v) => {
                    return Err(Error::InvalidValue(format!(
                        "band value {v} outside [0, 1] at pixel {i}; scale 8-bit input by 1/255"
                    )))
                }
                None => missing = true,
            }
        }
        if missing {
            for band in &mut out {
                band[i] = nodata;
            }
            continue;
        }
        let lab = srgb_to_lab(rgb);
        for k in 0..3 {
            out[k][i] = lab[k] as f32;
        }
    }
    let [l, a, b] = out;
    let proto = channels[0];
    MultibandImage::new(vec![
        ("L".into(), proto.with_values(l)?),
        ("a".into(), proto.with_values(a)?),
        ("b".into(), proto.with_values(b)?),
    ])
}

pub(crate) fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    });
    let mut xyz = [0f64; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let f = |t: f64| {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    };
    let fx = f(xyz[0] / WHITE_D65[0]);
    let fy = f(xyz[1] / WHITE_D65[1]);
    let fz = f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}
