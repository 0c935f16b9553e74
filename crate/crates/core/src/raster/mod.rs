//! Raster primitives shared by every processing stage.

mod color;
mod io;
mod resample;

pub use color::{ndvi, to_cielab, NDVI_EPSILON};
pub use io::{read_grid, read_raster, write_grid, write_raster, RasterFormat};
pub use resample::{resample, resample_labels, sample_bilinear, sample_bilinear_clamped};

use crate::{Error, Result};

pub const DEFAULT_NODATA: f32 = -9999.0;

pub const BAND_NIR: &str = "nir";
pub const BAND_RED: &str = "red";
pub const BAND_GREEN: &str = "green";

/// Single-band raster stored row-major, with a nodata sentinel.
#[derive(Debug, Clone)]
pub struct Grid {
    width: usize,
    height: usize,
    cell_size: f64,
    nodata: f32,
    values: Vec<f32>,
}

impl Grid {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        nodata: f32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidValue(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        let grid = Grid {
            width,
            height,
            cell_size,
            nodata,
            values,
        };
        if let Some(i) = grid
            .values
            .iter()
            .position(|&v| !grid.is_nodata(v) && !v.is_finite())
        {
            return Err(Error::InvalidValue(format!(
                "non-finite value at ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(grid)
    }

    pub fn filled(width: usize, height: usize, cell_size: f64, value: f32) -> Result<Self> {
        Grid::new(
            width,
            height,
            cell_size,
            DEFAULT_NODATA,
            vec![value; width * height],
        )
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        cell_size: f64,
        f: impl Fn(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Grid::new(width, height, cell_size, DEFAULT_NODATA, values)
    }

    /// A grid with the same geometry and nodata sentinel but new values.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Grid::new(self.width, self.height, self.cell_size, self.nodata, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn is_nodata(&self, v: f32) -> bool {
        if self.nodata.is_nan() {
            v.is_nan()
        } else {
            v == self.nodata
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Value at `(x, y)`, or `None` for nodata.
    #[inline]
    pub fn value(&self, x: usize, y: usize) -> Option<f32> {
        self.valid_at(y * self.width + x)
    }

    #[inline]
    pub fn valid_at(&self, index: usize) -> Option<f32> {
        let v = self.values[index];
        (!self.is_nodata(v)).then_some(v)
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) -> Result<()> {
        if !self.is_nodata(v) && !v.is_finite() {
            return Err(Error::InvalidValue(format!("non-finite value {v}")));
        }
        self.values[y * self.width + x] = v;
        Ok(())
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Bitwise equality of geometry, sentinel and payload.
    pub fn bit_identical(&self, other: &Grid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.cell_size.to_bits() == other.cell_size.to_bits()
            && self.nodata.to_bits() == other.nodata.to_bits()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// (min, max) over valid cells.
    pub fn min_max(&self) -> Option<(f32, f32)> {
        self.values
            .iter()
            .filter(|&&v| !self.is_nodata(v))
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.bit_identical(other)
    }
}

/// Named bands sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandImage {
    bands: Vec<(String, Grid)>,
}

impl MultibandImage {
    pub fn new(bands: Vec<(String, Grid)>) -> Result<Self> {
        let Some((_, first)) = bands.first() else {
            return Err(Error::Format("image has no bands".into()));
        };
        for (i, (name, grid)) in bands.iter().enumerate() {
            if !grid.same_shape(first) || grid.cell_size() != first.cell_size() {
                return Err(Error::Dimension(format!(
                    "band '{name}' does not match the geometry of band '{}'",
                    bands[0].0
                )));
            }
            if bands[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Format(format!("duplicate band name '{name}'")));
            }
        }
        Ok(MultibandImage { bands })
    }

    pub fn single(name: &str, grid: Grid) -> Self {
        MultibandImage {
            bands: vec![(name.to_string(), grid)],
        }
    }

    /// Builds a NIR/red/green image.
    pub fn nir_red_green(nir: Grid, red: Grid, green: Grid) -> Result<Self> {
        MultibandImage::new(vec![
            (BAND_NIR.into(), nir),
            (BAND_RED.into(), red),
            (BAND_GREEN.into(), green),
        ])
    }

    pub fn band(&self, name: &str) -> Result<&Grid> {
        self.bands
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
            .ok_or_else(|| Error::MissingBand(name.to_string()))
    }

    pub fn bands(&self) -> &[(String, Grid)] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<(String, Grid)> {
        self.bands
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn first(&self) -> &Grid {
        &self.bands[0].1
    }

    pub fn width(&self) -> usize {
        self.first().width()
    }

    pub fn height(&self) -> usize {
        self.first().height()
    }

    pub fn cell_size(&self) -> f64 {
        self.first().cell_size()
    }

    /// Multiplies every valid cell by `factor`, e.g. `1.0 / 255.0` for 8-bit input.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let bands = self
            .bands
            .iter()
            .map(|(name, g)| {
                let values = g
                    .values()
                    .iter()
                    .map(|&v| if g.is_nodata(v) { v } else { v * factor })
                    .collect();
                Ok((name.clone(), g.with_values(values)?))
            })
            .collect::<Result<Vec<_>>>()?;
        MultibandImage::new(bands)
    }

    /// Applies a per-band transform, keeping names.
    pub fn try_map(&self, mut f: impl FnMut(&Grid) -> Result<Grid>) -> Result<Self> {
        let bands = self
            .bands
            .iter()
            .map(|(n, g)| Ok((n.clone(), f(g)?)))
            .collect::<Result<Vec<_>>>()?;
        MultibandImage::new(bands)
    }
}

/// Per-pixel class ids. [`ClassRaster::UNLABELED`] marks pixels without a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRaster {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl ClassRaster {
    pub const UNLABELED: u8 = u8::MAX;

    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} labels for a {width}x{height} raster",
                values.len()
            )));
        }
        Ok(ClassRaster {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Result<Self> {
        ClassRaster::new(width, height, vec![class; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn label(&self, index: usize) -> Option<u8> {
        let v = self.values[index];
        (v != Self::UNLABELED).then_some(v)
    }

    pub fn labeled_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != Self::UNLABELED).count()
    }

    pub fn matches_grid(&self, grid: &Grid) -> bool {
        self.width == grid.width() && self.height == grid.height()
    }

    /// Encodes class ids as floats, unlabeled as nodata.
    pub fn to_grid(&self, cell_size: f64) -> Result<Grid> {
        let values = self
            .values
            .iter()
            .map(|&v| {
                if v == Self::UNLABELED {
                    DEFAULT_NODATA
                } else {
                    f32::from(v)
                }
            })
            .collect();
        Grid::new(self.width, self.height, cell_size, DEFAULT_NODATA, values)
    }

    pub fn from_grid(grid: &Grid) -> Result<Self> {
        let values = grid
            .values()
            .iter()
            .map(|&v| {
                if grid.is_nodata(v) {
                    Ok(Self::UNLABELED)
                } else if v >= 0.0 && v < f32::from(Self::UNLABELED) && v.fract() == 0.0 {
                    Ok(v as u8)
                } else {
                    Err(Error::InvalidValue(format!("{v} is not a class id")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ClassRaster::new(grid.width(), grid.height(), values)
    }
}

/// Class id to name mapping with dense ids `0..C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLegend {
    names: Vec<String>,
}

impl ClassLegend {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidParameter("empty class legend".into()));
        }
        if names.len() >= usize::from(ClassRaster::UNLABELED) {
            return Err(Error::InvalidParameter(format!(
                "at most {} classes are supported",
                ClassRaster::UNLABELED
            )));
        }
        Ok(ClassLegend { names })
    }

    /// Generic names `class0..class{n-1}`.
    pub fn numbered(n: usize) -> Result<Self> {
        ClassLegend::new((0..n).map(|i| format!("class{i}")).collect())
    }

    /// Parses `id name` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, name) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Format(format!("legend line {}: expected 'id name'", lineno + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Format(format!("legend line {}: bad id '{id}'", lineno + 1)))?;
            entries.push((id, name.trim().to_string()));
        }
        entries.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::Format(format!(
                    "legend ids must be dense from 0, missing id {expected}"
                )));
            }
        }
        ClassLegend::new(entries.into_iter().map(|(_, n)| n).collect())
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{i} {n}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Region { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }

    pub fn ensure_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x1 > width || self.y1 > height {
            return Err(Error::Dimension(format!(
                "region {},{},{},{} exceeds {width}x{height}",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    /// Parses `x0,y0,x1,y1`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidParameter(format!("bad region '{s}'")))?;
        match parts[..] {
            [x0, y0, x1, y1] => Ok(Region::new(x0, y0, x1, y1)),
            _ => Err(Error::InvalidParameter(format!(
                "region needs 4 values x0,y0,x1,y1, got '{s}'"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_finite_values() {
        let err = Grid::new(2, 1, 1.0, DEFAULT_NODATA, vec![1.0, f32::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::InvalidValue(_)));
        // NaN is fine when it is the sentinel
        let g = Grid::new(2, 1, 1.0, f32::NAN, vec![1.0, f32::NAN]).unwrap();
        assert_eq!(g.value(1, 0), None);
    }

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(Grid::new(0, 1, 1.0, 0.0, vec![]).is_err());
        assert!(Grid::new(1, 1, 0.0, 0.0, vec![1.0]).is_err());
        assert!(Grid::new(2, 2, 1.0, 0.0, vec![1.0; 3]).is_err());
    }

    #[test]
    fn image_rejects_duplicate_or_mismatched_bands() {
        let a = Grid::filled(2, 2, 1.0, 0.0).unwrap();
        let b = Grid::filled(3, 2, 1.0, 0.0).unwrap();
        assert!(MultibandImage::new(vec![("x".into(), a.clone()), ("x".into(), a.clone())]).is_err());
        assert!(MultibandImage::new(vec![("x".into(), a.clone()), ("y".into(), b)]).is_err());
        let img = MultibandImage::single("x", a);
        assert!(matches!(img.band("nir"), Err(Error::MissingBand(_))));
    }

    #[test]
    fn class_raster_grid_round_trip() {
        let labels = ClassRaster::new(3, 1, vec![0, ClassRaster::UNLABELED, 4]).unwrap();
        let grid = labels.to_grid(0.5).unwrap();
        assert_eq!(ClassRaster::from_grid(&grid).unwrap(), labels);
        let bad = Grid::new(1, 1, 1.0, DEFAULT_NODATA, vec![1.5]).unwrap();
        assert!(ClassRaster::from_grid(&bad).is_err());
    }

    #[test]
    fn legend_parsing() {
        let legend = ClassLegend::parse("# classes\n1 trees\n0 ground\n2 building roofs\n").unwrap();
        assert_eq!(legend.len(), 3);
        assert_eq!(legend.name(2), "building roofs");
        assert_eq!(ClassLegend::parse(&legend.to_text()).unwrap(), legend);
        assert!(ClassLegend::parse("0 a\n2 b\n").is_err());
        assert!(ClassLegend::parse("# nothing\n").is_err());
    }

    #[test]
    fn region_parse_and_bounds() {
        let r = Region::parse("1, 2,5,6").unwrap();
        assert_eq!(r, Region::new(1, 2, 5, 6));
        assert_eq!(r.area(), 16);
        assert!(r.ensure_within(5, 6).is_ok());
        assert!(r.ensure_within(4, 6).is_err());
        assert!(Region::parse("1,2,3").is_err());
        assert!(Region::new(3, 0, 3, 4).is_empty());
    }
}
