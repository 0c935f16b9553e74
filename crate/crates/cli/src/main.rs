use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use stpr_core::evaluation::{confusion_matrix, date_history, probability_trajectory, trajectory_csv};
use stpr_core::filter::{
    argmax_labels, estimate_class_bandwidths, load_cube_set, read_cube_manifest, run_filter, stats_csv,
    write_cube_set, ClassBandwidthTable, FilterParams, Normalization, RunOptions, WeightMode, DEFAULT_EPSILON,
    DEFAULT_MAX_ITERATIONS, DEFAULT_SIGMA_R, DEFAULT_SIGMA_S, DEFAULT_TAU, DEFAULT_WINDOW_RADIUS,
};
use stpr_core::pipeline::{load_history, run_pipeline, validate_config, PipelineConfig, WORKERS_ENV};
use stpr_core::preprocess::{
    align_labels, align_planimetric, align_to_reference, estimate_shift, ndsm, CoregistrationParams,
    StructuringElement, DEFAULT_MAX_ITERATIONS as COREG_MAX_ITERATIONS, DEFAULT_OUTLIER_THRESHOLD, DEFAULT_SE_RADIUS,
};
use stpr_core::propagation::{propagate_labels, retention_counts, retention_report, PropagationThresholds};
use stpr_core::raster::{read_grid, read_raster, write_grid, write_raster, ClassLegend, ClassRaster, RasterFormat, Region};
use stpr_core::stack::{load_stack, RawScene};
use stpr_core::synthetic::{generate_scene, standard_fixture, write_scene, SceneSpec};
use stpr_core::workers::with_workers;
use stpr_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Spatiotemporal probability refinement for multitemporal land-cover maps.
#[derive(Parser)]
#[command(name = "stpr", version)]
struct Cli {
    /// Worker threads (0 = all cores). STPR_WORKERS takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multitemporal scene with truth and probabilities.
    Synth(SynthArgs),
    /// Estimate the shift of a DSM against a reference and align it.
    Coregister(CoregisterArgs),
    /// Normalized DSM by top-hat reconstruction.
    Ndsm(NdsmArgs),
    /// Carry reference labels to another date where nothing changed.
    PropagateLabels(PropagateArgs),
    /// Per-class height bandwidths from labeled nDSM values.
    Bandwidths(BandwidthArgs),
    /// Iterate the spatiotemporal filter over probability cubes.
    Filter(FilterArgs),
    /// Argmax label maps from probability cubes.
    Labels(LabelArgs),
    /// Confusion matrix and accuracies of a label map.
    Evaluate(EvaluateArgs),
    /// Mean class probabilities of a region across stored iterations.
    Trajectory(TrajectoryArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description file.
    #[arg(long, conflicts_with = "standard", required_unless_present = "standard")]
    spec: Option<PathBuf>,
    /// Use the built-in corrupted-date fixture.
    #[arg(long)]
    standard: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CoregisterArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Residuals above this many metres are outliers.
    #[arg(long, default_value_t = DEFAULT_OUTLIER_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = COREG_MAX_ITERATIONS)]
    max_iter: usize,
    /// Aligned target DSM.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Move another raster of the target date by the same shift: IN:OUT.
    #[arg(long, value_name = "IN:OUT")]
    apply: Vec<String>,
    /// Move a label raster (nearest neighbour): IN:OUT.
    #[arg(long, value_name = "IN:OUT")]
    apply_labels: Vec<String>,
}

#[derive(Args)]
struct NdsmArgs {
    #[arg(long)]
    dsm: PathBuf,
    /// Disk radius in pixels.
    #[arg(long, default_value_t = DEFAULT_SE_RADIUS)]
    se_radius: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    ref_labels: PathBuf,
    #[arg(long)]
    ref_scene: PathBuf,
    #[arg(long)]
    tgt_scene: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    ndsm_th: f64,
    #[arg(long, default_value_t = 0.1)]
    ndvi_th: f64,
    #[arg(long)]
    legend: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BandwidthArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    legend: PathBuf,
    /// Label raster for one date, overriding the scene's own: DATE:PATH.
    #[arg(long, value_name = "DATE:PATH")]
    labels: Vec<String>,
    /// Use the 1st to 99th percentile span instead of the full range.
    #[arg(long)]
    robust: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    probs: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW_RADIUS)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA_S)]
    sigma_s: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_R)]
    sigma_r: f64,
    #[arg(long)]
    bandwidths: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
    #[arg(long, default_value = "weight-sum")]
    norm: String,
    #[arg(long)]
    renormalize: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value = "auto")]
    weight_mode: String,
    /// Store every iterate under OUT_DIR/history.
    #[arg(long)]
    keep_history: bool,
    #[arg(long)]
    out_dir: PathBuf,
    /// Defaults to OUT_DIR/stats.csv.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    legend: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    legend: PathBuf,
    /// Only pixels with a non-zero mask value are assessed.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrajectoryArgs {
    /// Directory holding iter0, iter1, ... cube sets.
    #[arg(long)]
    history: PathBuf,
    /// x0,y0,x1,y1 (end exclusive).
    #[arg(long)]
    region: String,
    #[arg(long, default_value_t = 0)]
    date: usize,
    #[arg(long)]
    legend: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Validate and print the normalized config without running.
    #[arg(long)]
    check: bool,
}

enum Status {
    Done,
    NotConverged,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidParameter(msg.into()).into()
}

fn split_pair(s: &str) -> anyhow::Result<(&str, &str)> {
    s.split_once(':')
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| invalid(format!("expected IN:OUT, got '{s}'")))
}

fn format_of(p: &Path) -> RasterFormat {
    RasterFormat::from_path(p)
}

fn read_legend(path: &Path) -> anyhow::Result<ClassLegend> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ClassLegend::parse(&text)?)
}

fn read_labels(path: &Path) -> anyhow::Result<(ClassRaster, f64)> {
    let g = read_grid(path, format_of(path))?;
    Ok((ClassRaster::from_grid(&g)?, g.cell_size()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> anyhow::Result<Status> {
    let spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SceneSpec::parse(&text)?
        }
        None => standard_fixture(),
    };
    let scene = generate_scene(&spec)?;
    let written = write_scene(&scene, &a.out_dir)?;
    write_text(&a.out_dir.join("scene.txt"), &spec.to_text())?;
    println!("stack: {}", written.stack_manifest.display());
    println!("probabilities: {}", written.cube_manifest.display());
    Ok(Status::Done)
}

fn coregister(a: &CoregisterArgs) -> anyhow::Result<Status> {
    let reference = read_grid(&a.reference, format_of(&a.reference))?;
    let target = read_grid(&a.tgt, format_of(&a.tgt))?;
    let params = CoregistrationParams {
        outlier_threshold: a.threshold,
        max_iterations: a.max_iter,
    };
    let shift = estimate_shift(&reference, &target, &params)?;
    create_parent(&a.out)?;
    write_grid(&align_to_reference(&target, &shift)?, &a.out, format_of(&a.out))?;
    write_text(&a.report, &shift.to_report())?;
    for pair in &a.apply {
        let (input, output) = split_pair(pair)?;
        let (input, output) = (Path::new(input), Path::new(output));
        let image = read_raster(input, format_of(input))?;
        let moved = image.try_map(|g| align_planimetric(g, &shift))?;
        create_parent(output)?;
        write_raster(&moved, output, format_of(output))?;
    }
    for pair in &a.apply_labels {
        let (input, output) = split_pair(pair)?;
        let (input, output) = (Path::new(input), Path::new(output));
        let (labels, _) = read_labels(input)?;
        let cell = target.cell_size();
        let moved = align_labels(&labels, cell, &shift)?;
        create_parent(output)?;
        write_grid(&moved.to_grid(cell)?, output, format_of(output))?;
    }
    println!(
        "dx={} dy={} dz={} rms={} inliers={} converged={}",
        shift.dx, shift.dy, shift.dz, shift.rms_residual, shift.inlier_count, shift.converged
    );
    Ok(if shift.converged { Status::Done } else { Status::NotConverged })
}

fn run_ndsm(a: &NdsmArgs) -> anyhow::Result<Status> {
    let dsm = read_grid(&a.dsm, format_of(&a.dsm))?;
    let out = ndsm(&dsm, &StructuringElement::disk(a.se_radius)?)?;
    create_parent(&a.out)?;
    write_grid(&out, &a.out, format_of(&a.out))?;
    Ok(Status::Done)
}

fn propagate(a: &PropagateArgs) -> anyhow::Result<Status> {
    let th = PropagationThresholds::new(a.ndsm_th, a.ndvi_th)?;
    let (labels, cell) = read_labels(&a.ref_labels)?;
    let reference = RawScene::load("reference", &a.ref_scene)?.into_scene()?;
    let target = RawScene::load("target", &a.tgt_scene)?.into_scene()?;
    let out = propagate_labels(&labels, &reference, &target, &th)?;
    create_parent(&a.out)?;
    write_grid(&out.to_grid(cell)?, &a.out, format_of(&a.out))?;
    let legend = a.legend.as_deref().map(read_legend).transpose()?;
    let classes = match &legend {
        Some(l) => l.len(),
        None => labels
            .values()
            .iter()
            .filter(|&&c| c != ClassRaster::UNLABELED)
            .max()
            .map_or(0, |&c| usize::from(c) + 1),
    };
    let report = retention_report(&retention_counts(&labels, &out, classes), legend.as_ref());
    match &a.report {
        Some(p) => write_text(p, &report)?,
        None => print!("{report}"),
    }
    Ok(Status::Done)
}

fn bandwidths(a: &BandwidthArgs) -> anyhow::Result<Status> {
    let stack = load_stack(&a.stack)?;
    let legend = read_legend(&a.legend)?;
    let mut labels: Vec<Option<ClassRaster>> = stack.scenes().iter().map(|s| s.labels.clone()).collect();
    for pair in &a.labels {
        let (date, path) = split_pair(pair)?;
        let t: usize = date.parse().map_err(|_| invalid(format!("bad date index '{date}'")))?;
        let slot = labels
            .get_mut(t)
            .ok_or_else(|| invalid(format!("date {t} out of range for {} dates", stack.len())))?;
        *slot = Some(read_labels(Path::new(path))?.0);
    }
    let table = estimate_class_bandwidths(&stack, &labels, &legend, a.robust)?;
    write_text(&a.out, &table.to_text(Some(&legend)))?;
    Ok(Status::Done)
}

fn filter(a: &FilterArgs) -> anyhow::Result<Status> {
    let text = std::fs::read_to_string(&a.bandwidths).with_context(|| format!("reading {}", a.bandwidths.display()))?;
    let mut params = FilterParams::new(ClassBandwidthTable::parse(&text)?);
    params.window_radius = a.window;
    params.sigma_s = a.sigma_s;
    params.sigma_r = a.sigma_r;
    params.convergence_tau = a.tau;
    params.max_iterations = a.max_iter;
    params.normalization = a.norm.parse::<Normalization>()?;
    params.renormalize = a.renormalize;
    params.epsilon = a.epsilon;
    params.weight_mode = a.weight_mode.parse::<WeightMode>()?;
    params.validate()?;
    let stack = load_stack(&a.stack)?;
    let cubes = load_cube_set(&a.probs)?;
    let run = run_filter(&cubes, &stack, &params, &RunOptions { keep_history: a.keep_history })?;
    let cell = stack.cell_size();
    write_cube_set(&run.cubes, &a.out_dir, cell)?;
    let stats = a.stats.clone().unwrap_or_else(|| a.out_dir.join("stats.csv"));
    write_text(&stats, &stats_csv(&run.stats))?;
    if a.keep_history {
        for (k, set) in run.history.iter().enumerate() {
            write_cube_set(set, &a.out_dir.join("history").join(format!("iter{k}")), cell)?;
        }
    }
    let last = run.stats.last().map_or(0.0, |s| s.mean_rel_change);
    if run.converged {
        println!("converged after {} iterations (mean relative change {last})", run.iterations());
        Ok(Status::Done)
    } else {
        eprintln!("not converged after {} iterations (mean relative change {last})", run.iterations());
        Ok(Status::NotConverged)
    }
}

fn labels(a: &LabelArgs) -> anyhow::Result<Status> {
    let legend = read_legend(&a.legend)?;
    let first = read_cube_manifest(&a.probs)?
        .first()
        .and_then(|r| r.first().cloned())
        .ok_or_else(|| anyhow!("{}: empty cube manifest", a.probs.display()))?;
    let cell = read_grid(&first, format_of(&first))?.cell_size();
    let cubes = load_cube_set(&a.probs)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (t, cube) in cubes.cubes().iter().enumerate() {
        let l = argmax_labels(cube, &legend)?;
        write_grid(&l.to_grid(cell)?, &a.out_dir.join(format!("date{t}.stpr")), RasterFormat::Binary)?;
    }
    Ok(Status::Done)
}

fn evaluate(a: &EvaluateArgs) -> anyhow::Result<Status> {
    let legend = read_legend(&a.legend)?;
    let (pred, _) = read_labels(&a.pred)?;
    let (truth, _) = read_labels(&a.truth)?;
    let mask = match &a.mask {
        Some(p) => {
            let g = read_grid(p, format_of(p))?;
            Some(g.values().iter().map(|&v| !g.is_nodata(v) && v != 0.0).collect::<Vec<bool>>())
        }
        None => None,
    };
    let cm = confusion_matrix(&pred, &truth, legend.len(), mask.as_deref())?;
    write_text(&a.out, &cm.to_csv(&legend))?;
    println!("overall accuracy {:.6} over {} pixels", cm.overall_accuracy(), cm.total());
    Ok(Status::Done)
}

fn trajectory(a: &TrajectoryArgs) -> anyhow::Result<Status> {
    let region = Region::parse(&a.region)?;
    let history = load_history(&a.history)?;
    if history.is_empty() {
        return Err(invalid(format!("{}: no stored iterations", a.history.display())));
    }
    if a.date >= history[0].dates() {
        return Err(invalid(format!("date {} out of range for {} dates", a.date, history[0].dates())));
    }
    let legend = match &a.legend {
        Some(p) => read_legend(p)?,
        None => ClassLegend::numbered(history[0].classes())?,
    };
    let cubes = date_history(&history, a.date)?;
    let traj = probability_trajectory(&cubes, &region)?;
    write_text(&a.out, &trajectory_csv(&traj, &legend))?;
    Ok(Status::Done)
}

fn pipeline(a: &PipelineArgs) -> anyhow::Result<Status> {
    let cfg: PipelineConfig = validate_config(&a.config)?;
    if a.check {
        print!("{}", cfg.to_text());
        return Ok(Status::Done);
    }
    let outcome = run_pipeline(&cfg)?;
    for acc in &outcome.summary.accuracy {
        println!(
            "{}: overall accuracy {:.4} -> {:.4}",
            acc.date, acc.pre_filter, acc.post_filter
        );
    }
    println!("outputs in {}", outcome.out_dir.display());
    Ok(if outcome.converged() { Status::Done } else { Status::NotConverged })
}

fn worker_count(flag: usize) -> anyhow::Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{WORKERS_ENV}: bad value '{v}'"))),
        Err(_) => Ok(flag),
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<Status> {
    // the pipeline sizes its own pool from the config
    if let Command::Pipeline(a) = &cli.command {
        return pipeline(a);
    }
    let workers = worker_count(cli.workers)?;
    with_workers(workers, || match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Coregister(a) => coregister(a),
        Command::Ndsm(a) => run_ndsm(a),
        Command::PropagateLabels(a) => propagate(a),
        Command::Bandwidths(a) => bandwidths(a),
        Command::Filter(a) => filter(a),
        Command::Labels(a) => labels(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Trajectory(a) => trajectory(a),
        Command::Pipeline(a) => pipeline(a),
    })?
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidSpec(_)) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
