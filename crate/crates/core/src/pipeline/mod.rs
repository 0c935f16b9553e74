//! End-to-end driver: resample, co-register, nDSM, optional label
//! propagation, bandwidth estimation, filtering, labelling and evaluation.
//!
//! Each stage is also exposed on its own so that running the stages one by
//! one through files gives the same bytes as the one-shot driver.

mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{validate_config, PipelineConfig, WORKERS_ENV};

use crate::evaluation::{accuracy_curve, accuracy_curve_csv, confusion_matrix, date_history};
use crate::filter::{
    argmax_labels, estimate_class_bandwidths, load_cube_set, run_filter, stats_csv, write_cube_set,
    ClassBandwidthTable, CubeSet, FilterRun, RunOptions,
};
use crate::preprocess::{
    align_labels, align_planimetric, align_to_reference, estimate_shift, ndsm, CoregistrationParams,
    ShiftEstimate, StructuringElement,
};
use crate::propagation::{propagate_labels, retention_counts, retention_report, PropagationThresholds};
use crate::raster::{read_grid, resample, resample_labels, write_grid, ClassLegend, ClassRaster, RasterFormat};
use crate::stack::{load_raw_scenes, write_scene_dir, write_stack_manifest, RawScene, TemporalStack};
use crate::workers::with_workers;
use crate::{Error, Result};

pub const FAILED_MARKER: &str = "FAILED";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ARTIFACTS_FILE: &str = "artifacts.txt";

/// Resamples every raster of a scene to `target` cell size.
pub fn resample_scene(scene: RawScene, target: f64) -> Result<RawScene> {
    let cell = scene.dsm.cell_size();
    Ok(RawScene {
        date_id: scene.date_id,
        image: scene.image.try_map(|g| resample(g, target))?,
        dsm: resample(&scene.dsm, target)?,
        ndsm: scene.ndsm.as_ref().map(|g| resample(g, target)).transpose()?,
        labels: scene.labels.as_ref().map(|l| resample_labels(l, cell, target)).transpose()?,
    })
}

/// Estimates the shift of `scene` against `ref_dsm` and moves every raster
/// of the scene onto the reference grid.
pub fn coregister_scene(
    ref_dsm: &crate::raster::Grid,
    scene: RawScene,
    params: &CoregistrationParams,
) -> Result<(RawScene, ShiftEstimate)> {
    let shift = estimate_shift(ref_dsm, &scene.dsm, params)?;
    let cell = scene.dsm.cell_size();
    let aligned = RawScene {
        date_id: scene.date_id,
        image: scene.image.try_map(|g| align_planimetric(g, &shift))?,
        dsm: align_to_reference(&scene.dsm, &shift)?,
        ndsm: scene.ndsm.as_ref().map(|g| align_planimetric(g, &shift)).transpose()?,
        labels: scene.labels.as_ref().map(|l| align_labels(l, cell, &shift)).transpose()?,
    };
    Ok((aligned, shift))
}

pub fn ndsm_scene(scene: RawScene, se_radius: usize) -> Result<RawScene> {
    let se = StructuringElement::disk(se_radius)?;
    let n = ndsm(&scene.dsm, &se)?;
    Ok(RawScene { ndsm: Some(n), ..scene })
}

/// Fills unlabeled dates from the labels of date 0.
pub fn propagate_stack_labels(
    stack: &TemporalStack,
    th: &PropagationThresholds,
    classes: usize,
) -> Result<(Vec<Option<ClassRaster>>, Vec<String>)> {
    let reference = stack.scene(0);
    let Some(ref_labels) = &reference.labels else {
        return Err(Error::InvalidParameter("label propagation needs labels on date 0".into()));
    };
    let mut labels = vec![Some(ref_labels.clone())];
    let mut reports = Vec::new();
    for scene in &stack.scenes()[1..] {
        if scene.labels.is_some() {
            labels.push(scene.labels.clone());
            continue;
        }
        let out = propagate_labels(ref_labels, reference, scene, th)?;
        reports.push(retention_report(&retention_counts(ref_labels, &out, classes), None));
        labels.push(Some(out));
    }
    Ok((labels, reports))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ShiftSummary {
    pub date: String,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub rms: f64,
    pub inliers: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DateAccuracy {
    pub date: String,
    pub pre_filter: f64,
    pub post_filter: f64,
    pub assessed_pixels: u64,
}

/// Machine-readable outcome. Contains no timings, so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub dates: Vec<String>,
    pub classes: Vec<String>,
    pub shifts: Vec<ShiftSummary>,
    pub bandwidths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_mean_rel_change: f64,
    pub zero_weight_pixels: usize,
    pub accuracy: Vec<DateAccuracy>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub summary: RunSummary,
    pub artifacts: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

impl PipelineOutcome {
    pub fn converged(&self) -> bool {
        self.summary.converged
    }
}

struct Artifacts {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn add(&mut self, p: PathBuf) {
        self.files.push(p);
    }

    /// Path under the output root with its parent directory created.
    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(rel)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.add(p.clone());
        Ok(p)
    }

    fn manifest(&self) -> String {
        self.files
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(&self.root).unwrap_or(p);
                format!("{}\n", rel.display())
            })
            .collect()
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Runs the whole chain. Any stage error leaves a `FAILED` marker naming
/// the stage in the output directory next to whatever was already written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let workers = cfg.effective_workers()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let marker = cfg.out_dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = with_workers(workers, || run_stages(cfg)).and_then(|r| r);
    if let Err(e) = &result {
        let stage = match e {
            Error::Stage { stage, .. } => stage,
            _ => "setup",
        };
        let text = format!("stage: {stage}\nerror: {e}\n");
        std::fs::write(&marker, text).map_err(|err| Error::io(&marker, err))?;
    }
    result
}

fn run_stages(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let out = &cfg.out_dir;
    let mut art = Artifacts {
        root: out.clone(),
        files: Vec::new(),
    };
    let stack_path = cfg.stack.as_ref().expect("validated");
    let probs_path = cfg.probs.as_ref().expect("validated");

    let mut scenes = stage("load", load_raw_scenes(stack_path))?;
    let cubes = stage("load", load_cube_set(probs_path))?;
    let legend = match &cfg.legend {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
            stage("load", text.and_then(|t| ClassLegend::parse(&t)))?
        }
        None => stage("load", ClassLegend::numbered(cubes.classes()))?,
    };
    if legend.len() != cubes.classes() {
        return stage(
            "load",
            Err(Error::InvalidParameter(format!(
                "legend has {} classes, cubes {}",
                legend.len(),
                cubes.classes()
            ))),
        );
    }
    if scenes.len() != cubes.dates() {
        return stage(
            "load",
            Err(Error::Dimension(format!(
                "{} scenes but cubes for {} dates",
                scenes.len(),
                cubes.dates()
            ))),
        );
    }

    if let Some(target) = cfg.target_cell_size {
        scenes = stage(
            "resample",
            scenes.into_iter().map(|s| resample_scene(s, target)).collect(),
        )?;
    }

    let mut shifts = Vec::new();
    if cfg.coregister {
        let params = cfg.coregistration_params();
        let ref_dsm = scenes[0].dsm.clone();
        let mut aligned = vec![scenes[0].clone()];
        for s in scenes.into_iter().skip(1) {
            let (a, shift) = stage("coregister", coregister_scene(&ref_dsm, s, &params))?;
            art.write_text(&format!("shifts/{}.txt", a.date_id), &shift.to_report())?;
            shifts.push(ShiftSummary {
                date: a.date_id.clone(),
                dx: shift.dx,
                dy: shift.dy,
                dz: shift.dz,
                rms: shift.rms_residual,
                inliers: shift.inlier_count,
                converged: shift.converged,
            });
            aligned.push(a);
        }
        scenes = aligned;
    }

    if cfg.compute_ndsm {
        scenes = stage(
            "ndsm",
            scenes.into_iter().map(|s| ndsm_scene(s, cfg.se_radius)).collect(),
        )?;
    }
    let stack = stage(
        "ndsm",
        scenes
            .into_iter()
            .map(RawScene::into_scene)
            .collect::<Result<Vec<_>>>()
            .and_then(TemporalStack::new),
    )?;
    if stack.width() != cubes.width() || stack.height() != cubes.height() {
        return stage(
            "ndsm",
            Err(Error::Dimension(format!(
                "stack is {}x{} after preprocessing, cubes are {}x{}",
                stack.width(),
                stack.height(),
                cubes.width(),
                cubes.height()
            ))),
        );
    }
    let mut entries = Vec::new();
    for (t, s) in stack.scenes().iter().enumerate() {
        let rel = format!("scenes/date{t}");
        stage("write", write_scene_dir(s, &out.join(&rel)))?;
        let mut files = std::fs::read_dir(out.join(&rel))
            .and_then(|d| d.map(|f| f.map(|f| f.path())).collect::<std::io::Result<Vec<_>>>())
            .map_err(|e| Error::io(out.join(&rel), e))?;
        files.sort();
        files.into_iter().for_each(|f| art.add(f));
        entries.push((s.date_id.clone(), rel));
    }
    let manifest = out.join("stack.txt");
    stage("write", write_stack_manifest(&manifest, &entries))?;
    art.add(manifest);

    let labels: Vec<Option<ClassRaster>> = if cfg.propagate_labels {
        let th = stage("propagate", cfg.propagation_thresholds())?;
        let (labels, reports) = stage("propagate", propagate_stack_labels(&stack, &th, legend.len()))?;
        for (k, r) in reports.iter().enumerate() {
            art.write_text(&format!("propagation/date{}.csv", k + 1), r)?;
        }
        for (t, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                let p = art.path(&format!("propagation/labels{t}.stpr"))?;
                stage("propagate", write_grid(&l.to_grid(stack.cell_size())?, &p, RasterFormat::Binary))?;
                art.add(p);
            }
        }
        labels
    } else {
        stack.scenes().iter().map(|s| s.labels.clone()).collect()
    };

    let bandwidths = match &cfg.bandwidths {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
            stage("bandwidths", text.and_then(|t| ClassBandwidthTable::parse(&t)))?
        }
        None => stage(
            "bandwidths",
            estimate_class_bandwidths(&stack, &labels, &legend, cfg.robust_bandwidths),
        )?,
    };
    art.write_text("bandwidths.txt", &bandwidths.to_text(Some(&legend)))?;

    let params = cfg.filter_params(bandwidths.clone());
    let run: FilterRun = stage(
        "filter",
        run_filter(&cubes, &stack, &params, &RunOptions { keep_history: cfg.keep_history }),
    )?;
    let cube_manifest = stage("write", write_cube_set(&run.cubes, &out.join("filtered"), stack.cell_size()))?;
    for t in 0..run.cubes.dates() {
        for c in 0..run.cubes.classes() {
            art.add(out.join(format!("filtered/date{t}_class{c}.stpr")));
        }
    }
    art.add(cube_manifest);
    art.write_text("stats.csv", &stats_csv(&run.stats))?;
    if cfg.keep_history {
        for (k, set) in run.history.iter().enumerate() {
            let dir = out.join(format!("history/iter{k}"));
            let m = stage("write", write_cube_set(set, &dir, stack.cell_size()))?;
            art.add(m);
        }
    }

    let mut post_labels = Vec::new();
    for t in 0..run.cubes.dates() {
        let l = stage("labels", argmax_labels(run.cubes.cube(t), &legend))?;
        let p = art.path(&format!("labels/date{t}.stpr"))?;
        stage("labels", write_grid(&l.to_grid(stack.cell_size())?, &p, RasterFormat::Binary))?;
        art.add(p);
        post_labels.push(l);
    }

    let mut accuracy = Vec::new();
    for (t, truth_path) in cfg.truth.iter().enumerate().take(stack.len()) {
        let truth = stage(
            "evaluate",
            read_grid(truth_path, RasterFormat::from_path(truth_path)).and_then(|g| ClassRaster::from_grid(&g)),
        )?;
        let pre = stage("evaluate", argmax_labels(cubes.cube(t), &legend))?;
        let before = stage("evaluate", confusion_matrix(&pre, &truth, legend.len(), None))?;
        let after = stage("evaluate", confusion_matrix(&post_labels[t], &truth, legend.len(), None))?;
        art.write_text(&format!("evaluation/date{t}_pre.csv"), &before.to_csv(&legend))?;
        art.write_text(&format!("evaluation/date{t}_post.csv"), &after.to_csv(&legend))?;
        if cfg.keep_history {
            let hist = stage("evaluate", date_history(&run.history, t))?;
            let curve = stage("evaluate", accuracy_curve(&hist, &truth, &legend, None))?;
            art.write_text(&format!("evaluation/date{t}_curve.csv"), &accuracy_curve_csv(&curve))?;
        }
        accuracy.push(DateAccuracy {
            date: stack.scene(t).date_id.clone(),
            pre_filter: before.overall_accuracy(),
            post_filter: after.overall_accuracy(),
            assessed_pixels: after.total(),
        });
    }

    let summary = RunSummary {
        dates: stack.scenes().iter().map(|s| s.date_id.clone()).collect(),
        classes: legend.names().to_vec(),
        shifts,
        bandwidths: bandwidths.values().to_vec(),
        iterations: run.iterations(),
        converged: run.converged,
        final_mean_rel_change: run.stats.last().map_or(0.0, |s| s.mean_rel_change),
        zero_weight_pixels: run.stats.iter().map(|s| s.zero_weight_pixels).sum(),
        accuracy,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    art.write_text(SUMMARY_FILE, &(json + "\n"))?;
    let manifest_text = art.manifest() + ARTIFACTS_FILE + "\n";
    let manifest_path = out.join(ARTIFACTS_FILE);
    std::fs::write(&manifest_path, manifest_text).map_err(|e| Error::io(&manifest_path, e))?;
    art.add(manifest_path);
    Ok(PipelineOutcome {
        summary,
        artifacts: art.files,
        out_dir: out.clone(),
    })
}

/// Reads a cube history written with `keep_history`: `iter0`, `iter1`, ...
pub fn load_history(dir: &Path) -> Result<Vec<CubeSet>> {
    let mut sets = Vec::new();
    loop {
        let m = dir.join(format!("iter{}", sets.len())).join("cubes.txt");
        if !m.exists() {
            break;
        }
        sets.push(load_cube_set(&m)?);
    }
    if sets.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} holds no stored iterations",
            dir.display()
        )));
    }
    Ok(sets)
}
