//! Per-date probability cubes and their on-disk manifests.
//!
//! A cube manifest has one line per date listing the C class rasters in
//! class-id order. Relative paths resolve against the manifest directory.

use std::path::{Path, PathBuf};

use crate::raster::{
    read_grid, write_grid, ClassLegend, ClassRaster, Grid, RasterFormat, DEFAULT_NODATA,
};
use crate::{Error, Result};

/// Slack on the per-pixel class sum at ingest.
pub const SUM_TOLERANCE: f64 = 1e-3;

/// Class probabilities for one date, stored pixel-major
/// (`data[pixel * classes + class]`). Nodata pixels are NaN in every class.
#[derive(Debug, Clone)]
pub struct ProbabilityCube {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbabilityCube {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || classes == 0 {
            return Err(Error::InvalidCube(format!(
                "degenerate cube {width}x{height}x{classes}"
            )));
        }
        if data.len() != width * height * classes {
            return Err(Error::InvalidCube(format!(
                "{} values for a {width}x{height} cube with {classes} classes",
                data.len()
            )));
        }
        Ok(ProbabilityCube {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, classes: usize, p: f64) -> Result<Self> {
        ProbabilityCube::new(width, height, classes, vec![p; width * height * classes])
    }

    /// Builds a cube from one grid per class.
    pub fn from_layers(layers: &[Grid]) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidCube("no class layers".into()));
        };
        for l in layers {
            first.ensure_same_shape(l, "class layers")?;
        }
        let classes = layers.len();
        let mut data = vec![0f64; first.len() * classes];
        for (c, layer) in layers.iter().enumerate() {
            for (i, &v) in layer.values().iter().enumerate() {
                data[i * classes + c] = if layer.is_nodata(v) {
                    f64::NAN
                } else {
                    f64::from(v)
                };
            }
        }
        ProbabilityCube::new(first.width(), first.height(), classes, data)
    }

    /// One f32 grid per class, NaN mapped to the default nodata sentinel.
    pub fn to_layers(&self, cell_size: f64) -> Result<Vec<Grid>> {
        (0..self.classes)
            .map(|c| {
                let values = (0..self.len())
                    .map(|i| {
                        let v = self.data[i * self.classes + c];
                        if v.is_nan() {
                            DEFAULT_NODATA
                        } else {
                            v as f32
                        }
                    })
                    .collect();
                Grid::new(self.width, self.height, cell_size, DEFAULT_NODATA, values)
            })
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Pixel count.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.classes..(index + 1) * self.classes]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.classes..(index + 1) * self.classes]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, class: usize) -> f64 {
        self.data[(y * self.width + x) * self.classes + class]
    }

    pub fn set(&mut self, x: usize, y: usize, class: usize, v: f64) {
        let i = (y * self.width + x) * self.classes + class;
        self.data[i] = v;
    }

    pub fn is_valid_pixel(&self, index: usize) -> bool {
        !self.pixel(index)[0].is_nan()
    }

    /// Ingest invariants: values in [0, 1], a pixel is nodata in all classes
    /// or none, and valid pixel sums lie in (0, 1 + 1e-3].
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            let p = self.pixel(i);
            let nan = p.iter().filter(|v| v.is_nan()).count();
            if nan == self.classes {
                continue;
            }
            let (x, y) = (i % self.width, i / self.width);
            if nan > 0 {
                return Err(Error::InvalidCube(format!(
                    "pixel ({x}, {y}) is nodata in some classes only"
                )));
            }
            if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidCube(format!(
                    "probability {v} outside [0, 1] at ({x}, {y})"
                )));
            }
            let sum: f64 = p.iter().sum();
            if !(sum > 0.0 && sum <= 1.0 + SUM_TOLERANCE) {
                return Err(Error::InvalidCube(format!(
                    "class probabilities at ({x}, {y}) sum to {sum}"
                )));
            }
        }
        Ok(())
    }

    pub fn bit_identical(&self, other: &ProbabilityCube) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.classes == other.classes
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Class with the highest probability at `pixel`; ties go to the lowest id.
#[inline]
pub(crate) fn argmax(p: &[f64]) -> Option<u8> {
    let mut best: Option<(usize, f64)> = None;
    for (c, &v) in p.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((c, v)),
        }
    }
    best.map(|(c, _)| c as u8)
}

/// Per-pixel maximum-probability class. Ties resolve to the lowest class
/// id; pixels that are nodata in every class are unlabeled.
pub fn argmax_labels(cube: &ProbabilityCube, legend: &ClassLegend) -> Result<ClassRaster> {
    if legend.len() != cube.classes() {
        return Err(Error::InvalidCube(format!(
            "cube has {} classes, legend {}",
            cube.classes(),
            legend.len()
        )));
    }
    let values = (0..cube.len())
        .map(|i| argmax(cube.pixel(i)).unwrap_or(ClassRaster::UNLABELED))
        .collect();
    ClassRaster::new(cube.width(), cube.height(), values)
}

/// Cubes for all dates of a stack, in date order.
#[derive(Debug, Clone)]
pub struct CubeSet {
    cubes: Vec<ProbabilityCube>,
}

impl CubeSet {
    pub fn new(cubes: Vec<ProbabilityCube>) -> Result<Self> {
        let Some(first) = cubes.first() else {
            return Err(Error::InvalidCube("no dates".into()));
        };
        for (t, c) in cubes.iter().enumerate() {
            if c.width != first.width || c.height != first.height || c.classes != first.classes {
                return Err(Error::InvalidCube(format!(
                    "date {t} is {}x{}x{}, date 0 is {}x{}x{}",
                    c.width, c.height, c.classes, first.width, first.height, first.classes
                )));
            }
        }
        Ok(CubeSet { cubes })
    }

    pub fn dates(&self) -> usize {
        self.cubes.len()
    }

    pub fn width(&self) -> usize {
        self.cubes[0].width
    }

    pub fn height(&self) -> usize {
        self.cubes[0].height
    }

    pub fn classes(&self) -> usize {
        self.cubes[0].classes
    }

    pub fn cube(&self, t: usize) -> &ProbabilityCube {
        &self.cubes[t]
    }

    pub fn cube_mut(&mut self, t: usize) -> &mut ProbabilityCube {
        &mut self.cubes[t]
    }

    pub fn cubes(&self) -> &[ProbabilityCube] {
        &self.cubes
    }

    pub fn into_cubes(self) -> Vec<ProbabilityCube> {
        self.cubes
    }

    pub fn validate(&self) -> Result<()> {
        for (t, c) in self.cubes.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::InvalidCube(format!("date {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn bit_identical(&self, other: &CubeSet) -> bool {
        self.cubes.len() == other.cubes.len()
            && self
                .cubes
                .iter()
                .zip(&other.cubes)
                .all(|(a, b)| a.bit_identical(b))
    }
}

pub fn read_cube_manifest(path: &Path) -> Result<Vec<Vec<PathBuf>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rows: Vec<Vec<PathBuf>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|p| base.join(p)).collect())
        .collect();
    let Some(first) = rows.first() else {
        return Err(Error::Format(format!("{}: no dates listed", path.display())));
    };
    if let Some((t, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != first.len()) {
        return Err(Error::Format(format!(
            "{}: date {t} lists {} class rasters, date 0 lists {}",
            path.display(),
            r.len(),
            first.len()
        )));
    }
    Ok(rows)
}

pub fn load_cube_set(manifest: &Path) -> Result<CubeSet> {
    let cubes = read_cube_manifest(manifest)?
        .iter()
        .map(|paths| {
            let layers = paths
                .iter()
                .map(|p| read_grid(p, RasterFormat::from_path(p)))
                .collect::<Result<Vec<_>>>()?;
            ProbabilityCube::from_layers(&layers)
        })
        .collect::<Result<Vec<_>>>()?;
    CubeSet::new(cubes)
}

/// Writes `date{t}_class{c}.stpr` rasters into `dir` plus a `cubes.txt`
/// manifest; returns the manifest path.
pub fn write_cube_set(cubes: &CubeSet, dir: &Path, cell_size: f64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (t, cube) in cubes.cubes().iter().enumerate() {
        let mut names = Vec::new();
        for (c, layer) in cube.to_layers(cell_size)?.iter().enumerate() {
            let name = format!("date{t}_class{c}.stpr");
            write_grid(layer, &dir.join(&name), RasterFormat::Binary)?;
            names.push(name);
        }
        manifest.push_str(&names.join(" "));
        manifest.push('\n');
    }
    let path = dir.join("cubes.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
