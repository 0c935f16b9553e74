//! Per-date scenes and the temporal stack, plus their on-disk layout.
//!
//! A scene directory holds `image.stpr` (bands `nir`, `red`, `green`),
//! `dsm.stpr`, and optionally `ndsm.stpr` and `labels.stpr`. A stack
//! manifest lists one scene per line, either as `path` or `date_id path`;
//! relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use crate::raster::{
    read_grid, read_raster, write_grid, write_raster, ClassRaster, Grid, MultibandImage,
    RasterFormat,
};
use crate::{Error, Result};

pub const IMAGE_FILE: &str = "image.stpr";
pub const DSM_FILE: &str = "dsm.stpr";
pub const NDSM_FILE: &str = "ndsm.stpr";
pub const LABELS_FILE: &str = "labels.stpr";

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalScene {
    pub date_id: String,
    pub image: MultibandImage,
    pub dsm: Grid,
    pub ndsm: Grid,
    pub labels: Option<ClassRaster>,
}

impl TemporalScene {
    pub fn new(
        date_id: impl Into<String>,
        image: MultibandImage,
        dsm: Grid,
        ndsm: Grid,
        labels: Option<ClassRaster>,
    ) -> Result<Self> {
        let date_id = date_id.into();
        image
            .first()
            .ensure_same_shape(&dsm, &format!("scene {date_id}: image vs dsm"))?;
        dsm.ensure_same_shape(&ndsm, &format!("scene {date_id}: dsm vs ndsm"))?;
        if let Some(l) = &labels {
            if !l.matches_grid(&dsm) {
                return Err(Error::Dimension(format!(
                    "scene {date_id}: labels are {}x{}, rasters {}x{}",
                    l.width(),
                    l.height(),
                    dsm.width(),
                    dsm.height()
                )));
            }
        }
        if let Some(v) = ndsm
            .values()
            .iter()
            .find(|&&v| !ndsm.is_nodata(v) && v < 0.0)
        {
            return Err(Error::InvalidValue(format!(
                "scene {date_id}: negative nDSM value {v}"
            )));
        }
        Ok(TemporalScene {
            date_id,
            image,
            dsm,
            ndsm,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.dsm.width()
    }

    pub fn height(&self) -> usize {
        self.dsm.height()
    }
}

/// Date-ordered scenes sharing one pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStack {
    scenes: Vec<TemporalScene>,
}

impl TemporalStack {
    pub fn new(scenes: Vec<TemporalScene>) -> Result<Self> {
        let Some(first) = scenes.first() else {
            return Err(Error::InvalidParameter("a stack needs at least one scene".into()));
        };
        for s in &scenes[1..] {
            first.dsm.ensure_same_shape(
                &s.dsm,
                &format!("scene {} vs scene {}", first.date_id, s.date_id),
            )?;
        }
        Ok(TemporalStack { scenes })
    }

    pub fn scenes(&self) -> &[TemporalScene] {
        &self.scenes
    }

    pub fn scene(&self, t: usize) -> &TemporalScene {
        &self.scenes[t]
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn width(&self) -> usize {
        self.scenes[0].width()
    }

    pub fn height(&self) -> usize {
        self.scenes[0].height()
    }

    pub fn cell_size(&self) -> f64 {
        self.scenes[0].dsm.cell_size()
    }

    pub fn into_scenes(self) -> Vec<TemporalScene> {
        self.scenes
    }
}

/// Scene files as found on disk, before nDSM extraction.
#[derive(Debug, Clone)]
pub struct RawScene {
    pub date_id: String,
    pub image: MultibandImage,
    pub dsm: Grid,
    pub ndsm: Option<Grid>,
    pub labels: Option<ClassRaster>,
}

impl RawScene {
    pub fn load(date_id: impl Into<String>, dir: &Path) -> Result<Self> {
        let fmt = RasterFormat::Binary;
        let optional = |name: &str| -> Result<Option<Grid>> {
            let p = dir.join(name);
            if p.exists() {
                read_grid(&p, fmt).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(RawScene {
            date_id: date_id.into(),
            image: read_raster(&dir.join(IMAGE_FILE), fmt)?,
            dsm: read_grid(&dir.join(DSM_FILE), fmt)?,
            ndsm: optional(NDSM_FILE)?,
            labels: optional(LABELS_FILE)?
                .map(|g| ClassRaster::from_grid(&g))
                .transpose()?,
        })
    }

    /// Requires an nDSM on disk.
    pub fn into_scene(self) -> Result<TemporalScene> {
        let ndsm = self.ndsm.ok_or_else(|| {
            Error::InvalidParameter(format!(
                "scene {} has no {NDSM_FILE}; run the ndsm stage first",
                self.date_id
            ))
        })?;
        TemporalScene::new(self.date_id, self.image, self.dsm, ndsm, self.labels)
    }
}

pub fn write_scene_dir(scene: &TemporalScene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fmt = RasterFormat::Binary;
    write_raster(&scene.image, &dir.join(IMAGE_FILE), fmt)?;
    write_grid(&scene.dsm, &dir.join(DSM_FILE), fmt)?;
    write_grid(&scene.ndsm, &dir.join(NDSM_FILE), fmt)?;
    if let Some(labels) = &scene.labels {
        write_grid(
            &labels.to_grid(scene.dsm.cell_size())?,
            &dir.join(LABELS_FILE),
            fmt,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub date_id: String,
    pub dir: PathBuf,
}

pub fn read_stack_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (date_id, rel) = match tokens[..] {
            [p] => (
                Path::new(p)
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| entries.len().to_string()),
                p,
            ),
            [d, p] => (d.to_string(), p),
            _ => {
                return Err(Error::Format(format!(
                    "{} line {}: expected 'path' or 'date_id path'",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        entries.push(ManifestEntry {
            date_id,
            dir: base.join(rel),
        });
    }
    if entries.is_empty() {
        return Err(Error::Format(format!("{}: no scenes listed", path.display())));
    }
    Ok(entries)
}

pub fn write_stack_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let text: String = entries
        .iter()
        .map(|(d, p)| format!("{d} {p}\n"))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_raw_scenes(manifest: &Path) -> Result<Vec<RawScene>> {
    read_stack_manifest(manifest)?
        .into_iter()
        .map(|e| RawScene::load(e.date_id, &e.dir))
        .collect()
}

/// Loads a stack whose scene directories already contain nDSMs.
pub fn load_stack(manifest: &Path) -> Result<TemporalStack> {
    let scenes = load_raw_scenes(manifest)?
        .into_iter()
        .map(RawScene::into_scene)
        .collect::<Result<Vec<_>>>()?;
    TemporalStack::new(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(id: &str, w: usize, h: usize) -> TemporalScene {
        let g = Grid::filled(w, h, 0.5, 0.25).unwrap();
        let img = MultibandImage::nir_red_green(g.clone(), g.clone(), g.clone()).unwrap();
        TemporalScene::new(id, img, g.clone(), g, Some(ClassRaster::filled(w, h, 1).unwrap())).unwrap()
    }

    #[test]
    fn negative_ndsm_rejected() {
        let g = Grid::filled(2, 2, 0.5, 0.25).unwrap();
        let neg = Grid::filled(2, 2, 0.5, -1.0).unwrap();
        let img = MultibandImage::nir_red_green(g.clone(), g.clone(), g.clone()).unwrap();
        assert!(TemporalScene::new("x", img, g, neg, None).is_err());
    }

    #[test]
    fn stack_rejects_mixed_dimensions() {
        assert!(TemporalStack::new(vec![scene("a", 3, 3), scene("b", 3, 4)]).is_err());
        assert!(TemporalStack::new(vec![]).is_err());
    }

    #[test]
    fn scene_dirs_and_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = vec![scene("d0", 4, 3), scene("d1", 4, 3)];
        for s in &scenes {
            write_scene_dir(s, &dir.path().join(&s.date_id)).unwrap();
        }
        let manifest = dir.path().join("stack.txt");
        write_stack_manifest(
            &manifest,
            &[("d0".into(), "d0".into()), ("d1".into(), "d1".into())],
        )
        .unwrap();
        let stack = load_stack(&manifest).unwrap();
        assert_eq!(stack.scenes(), &scenes[..]);
    }

    #[test]
    fn manifest_single_token_uses_dir_name() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.txt");
        std::fs::write(&manifest, "# comment\nscenes/2014\n").unwrap();
        let entries = read_stack_manifest(&manifest).unwrap();
        assert_eq!(entries[0].date_id, "2014");
        assert_eq!(entries[0].dir, dir.path().join("scenes/2014"));
        std::fs::write(&manifest, "a b c\n").unwrap();
        assert!(read_stack_manifest(&manifest).is_err());
    }
}
