//! Deterministic synthetic scenes with known truth, probability corruption
//! and the brute-force reference filter.
//!
//! A scene spec is a flat `key = value` text file:
//!
//! ```text
//! width = 64
//! height = 64
//! dates = 3
//! seed = 7
//! class = ground 0.30 0.25 0.22 0.0 0.2
//! class = buildings 0.45 0.40 0.38 4.0 9.0
//! object = buildings rect 10 10 24 20 6.5
//! object = buildings disk 40 40 6 - 2
//! corrupt = 1 swap-top2 20,20,40,40
//! ```
//!
//! `class` lines give `name nir red green height_min height_max`; the first
//! class is the background. `object` lines give `class rect x0 y0 x1 y1` or
//! `class disk cx cy r`, then an optional height (`-` draws one from the
//! class range), first date and end date (exclusive).

mod corrupt;
mod oracle;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use corrupt::{corrupt_probabilities, CorruptionMode};
pub use oracle::{brute_force_filter, ORACLE_MAX_CLASSES, ORACLE_MAX_DATES, ORACLE_MAX_SIDE};

use crate::filter::{write_cube_set, CubeSet, ProbabilityCube};
use crate::raster::{write_grid, ClassLegend, ClassRaster, Grid, MultibandImage, RasterFormat, Region};
use crate::stack::{write_scene_dir, write_stack_manifest, TemporalScene, TemporalStack};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    /// NIR, red, green reflectance in [0, 1].
    pub centroid: [f64; 3],
    pub height_range: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { x0: usize, y0: usize, x1: usize, y1: usize },
    Disk { cx: usize, cy: usize, r: usize },
}

impl Shape {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disk { cx, cy, r } => {
                let dx = x as i64 - cx as i64;
                let dy = y as i64 - cy as i64;
                dx * dx + dy * dy <= (r * r) as i64
            }
        }
    }

    fn within(&self, width: usize, height: usize) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x0 < x1 && y0 < y1 && x1 <= width && y1 <= height,
            Shape::Disk { cx, cy, r } => cx >= r && cy >= r && cx + r < width && cy + r < height,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub class: usize,
    pub shape: Shape,
    /// `None` draws a height from the class range.
    pub height: Option<f64>,
    pub from_date: usize,
    /// Exclusive; `None` keeps the object to the last date.
    pub until_date: Option<usize>,
}

impl ObjectSpec {
    pub fn present_at(&self, t: usize) -> bool {
        t >= self.from_date && self.until_date.is_none_or(|u| t < u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    pub date: usize,
    pub mode: CorruptionMode,
    pub region: Region,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub dates: usize,
    pub cell_size: f64,
    pub seed: u64,
    /// Std. dev. of additive reflectance noise.
    pub spectral_noise: f64,
    /// Std. dev. of additive height noise, metres.
    pub height_noise: f64,
    /// Reflectance distance scale of the class likelihoods.
    pub likelihood_width: f64,
    /// Std. dev. of Gaussian noise on the class log-likelihoods.
    pub prob_noise: f64,
    /// Share of uniform probability mixed into every pixel.
    pub prob_floor: f64,
    /// Fraction of date-0 truth pixels kept as training labels.
    pub label_fraction: f64,
    pub ground_elevation: f64,
    /// Terrain rise per pixel along x, metres.
    pub slope: f64,
    pub classes: Vec<ClassSpec>,
    pub objects: Vec<ObjectSpec>,
    pub corruptions: Vec<CorruptionSpec>,
}

impl SceneSpec {
    /// Defaults with the given geometry and no classes.
    pub fn new(width: usize, height: usize, dates: usize, seed: u64) -> Self {
        SceneSpec {
            width,
            height,
            dates,
            cell_size: 0.5,
            seed,
            spectral_noise: 0.0,
            height_noise: 0.0,
            likelihood_width: 0.1,
            prob_noise: 0.0,
            prob_floor: 0.0,
            label_fraction: 0.1,
            ground_elevation: 0.0,
            slope: 0.0,
            classes: Vec::new(),
            objects: Vec::new(),
            corruptions: Vec::new(),
        }
    }

    pub fn legend(&self) -> Result<ClassLegend> {
        ClassLegend::new(self.classes.iter().map(|c| c.name.clone()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.width == 0 || self.height == 0 {
            errors.push(format!("degenerate size {}x{}", self.width, self.height));
        }
        if self.dates < 2 {
            errors.push(format!("dates must be >= 2, got {}", self.dates));
        }
        if !(self.cell_size > 0.0) {
            errors.push(format!("cell_size must be > 0, got {}", self.cell_size));
        }
        for (name, v) in [
            ("spectral_noise", self.spectral_noise),
            ("height_noise", self.height_noise),
            ("prob_noise", self.prob_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.likelihood_width > 0.0) {
            errors.push(format!("likelihood_width must be > 0, got {}", self.likelihood_width));
        }
        for (name, v) in [("prob_floor", self.prob_floor), ("label_fraction", self.label_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                errors.push(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.classes.is_empty() {
            errors.push("at least one class is required".into());
        }
        for c in &self.classes {
            if c.centroid.iter().any(|v| !(0.0..=1.0).contains(v)) {
                errors.push(format!("class {}: centroid outside [0, 1]", c.name));
            }
            if !(c.height_range.0 >= 0.0 && c.height_range.0 <= c.height_range.1) {
                errors.push(format!("class {}: bad height range", c.name));
            }
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.class >= self.classes.len() {
                errors.push(format!("object {k}: unknown class {}", o.class));
            }
            if !o.shape.within(self.width, self.height) {
                errors.push(format!("object {k}: outside the {}x{} scene", self.width, self.height));
            }
            if o.height.is_some_and(|h| !(h >= 0.0)) {
                errors.push(format!("object {k}: negative height"));
            }
            if o.from_date >= self.dates || o.until_date.is_some_and(|u| u <= o.from_date) {
                errors.push(format!("object {k}: bad date span"));
            }
        }
        for (k, c) in self.corruptions.iter().enumerate() {
            if c.date >= self.dates || c.region.ensure_within(self.width, self.height).is_err() {
                errors.push(format!("corruption {k}: outside the scene"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(errors.join("; ")))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::new(0, 0, 0, 0);
        let mut errors = Vec::new();
        let mut pending_objects = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            // classes may be declared after the objects that use them
            if key == "object" {
                pending_objects.push((lineno + 1, value.to_string()));
                continue;
            }
            if let Err(e) = spec.set(key, value) {
                errors.push(format!("line {}: {e}", lineno + 1));
            }
        }
        for (lineno, value) in pending_objects {
            match parse_object(&value, &spec.classes) {
                Ok(o) => spec.objects.push(o),
                Err(e) => errors.push(format!("line {}: {e}", lineno)),
            }
        }
        if !errors.is_empty() {
            return Err(Error::InvalidSpec(errors.join("; ")));
        }
        spec.validate()?;
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value '{v}' for {key}"))
        }
        match key {
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "dates" => self.dates = num(key, value)?,
            "cell_size" => self.cell_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "spectral_noise" => self.spectral_noise = num(key, value)?,
            "height_noise" => self.height_noise = num(key, value)?,
            "likelihood_width" => self.likelihood_width = num(key, value)?,
            "prob_noise" => self.prob_noise = num(key, value)?,
            "prob_floor" => self.prob_floor = num(key, value)?,
            "label_fraction" => self.label_fraction = num(key, value)?,
            "ground_elevation" => self.ground_elevation = num(key, value)?,
            "slope" => self.slope = num(key, value)?,
            "class" => {
                let t: Vec<&str> = value.split_whitespace().collect();
                if t.len() != 6 {
                    return Err("class needs: name nir red green height_min height_max".into());
                }
                self.classes.push(ClassSpec {
                    name: t[0].to_string(),
                    centroid: [num(key, t[1])?, num(key, t[2])?, num(key, t[3])?],
                    height_range: (num(key, t[4])?, num(key, t[5])?),
                });
            }
            "corrupt" => {
                let t: Vec<&str> = value.split_whitespace().collect();
                if !(3..=4).contains(&t.len()) {
                    return Err("corrupt needs: date mode x0,y0,x1,y1 [seed]".into());
                }
                self.corruptions.push(CorruptionSpec {
                    date: num(key, t[0])?,
                    mode: t[1].parse().map_err(|e: Error| e.to_string())?,
                    region: Region::parse(t[2]).map_err(|e| e.to_string())?,
                    seed: t.get(3).map(|s| num(key, s)).transpose()?.unwrap_or(0),
                });
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "width = {}\nheight = {}\ndates = {}\ncell_size = {}\nseed = {}\n\
             spectral_noise = {}\nheight_noise = {}\nlikelihood_width = {}\nprob_noise = {}\n\
             prob_floor = {}\nlabel_fraction = {}\nground_elevation = {}\nslope = {}\n",
            self.width,
            self.height,
            self.dates,
            self.cell_size,
            self.seed,
            self.spectral_noise,
            self.height_noise,
            self.likelihood_width,
            self.prob_noise,
            self.prob_floor,
            self.label_fraction,
            self.ground_elevation,
            self.slope
        );
        for c in &self.classes {
            out.push_str(&format!(
                "class = {} {} {} {} {} {}\n",
                c.name, c.centroid[0], c.centroid[1], c.centroid[2], c.height_range.0, c.height_range.1
            ));
        }
        for o in &self.objects {
            let shape = match o.shape {
                Shape::Rect { x0, y0, x1, y1 } => format!("rect {x0} {y0} {x1} {y1}"),
                Shape::Disk { cx, cy, r } => format!("disk {cx} {cy} {r}"),
            };
            let h = o.height.map_or("-".to_string(), |h| h.to_string());
            let until = o.until_date.map_or(String::new(), |u| format!(" {u}"));
            out.push_str(&format!(
                "object = {} {shape} {h} {}{until}\n",
                self.classes[o.class].name, o.from_date
            ));
        }
        for c in &self.corruptions {
            let r = c.region;
            out.push_str(&format!(
                "corrupt = {} {} {},{},{},{} {}\n",
                c.date, c.mode, r.x0, r.y0, r.x1, r.y1, c.seed
            ));
        }
        out
    }
}

fn parse_object(value: &str, classes: &[ClassSpec]) -> std::result::Result<ObjectSpec, String> {
    let t: Vec<&str> = value.split_whitespace().collect();
    let usage = "object needs: class rect x0 y0 x1 y1 | class disk cx cy r, then [height|-] [from] [until]";
    let class = t
        .first()
        .and_then(|n| classes.iter().position(|c| c.name == *n))
        .ok_or_else(|| format!("object references unknown class in '{value}'"))?;
    let int = |i: usize| -> std::result::Result<usize, String> {
        t.get(i).ok_or(usage.to_string())?.parse().map_err(|_| usage.to_string())
    };
    let (shape, rest) = match t.get(1).copied() {
        Some("rect") => (
            Shape::Rect { x0: int(2)?, y0: int(3)?, x1: int(4)?, y1: int(5)? },
            6,
        ),
        Some("disk") => (Shape::Disk { cx: int(2)?, cy: int(3)?, r: int(4)? }, 5),
        _ => return Err(usage.into()),
    };
    let height = match t.get(rest).copied() {
        None | Some("-") => None,
        Some(h) => Some(h.parse().map_err(|_| format!("bad object height '{h}'"))?),
    };
    let from_date = if t.len() > rest + 1 { int(rest + 1)? } else { 0 };
    let until_date = if t.len() > rest + 2 { Some(int(rest + 2)?) } else { None };
    if t.len() > rest + 3 {
        return Err(usage.into());
    }
    Ok(ObjectSpec {
        class,
        shape,
        height,
        from_date,
        until_date,
    })
}

/// Output of [`generate_scene`].
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Date 0 carries the sampled training labels.
    pub stack: TemporalStack,
    /// True class per date.
    pub truth: Vec<ClassRaster>,
    /// Noise-free object heights per date.
    pub true_heights: Vec<Grid>,
    /// Initial probabilities with the spec's corruptions applied.
    pub cubes: CubeSet,
    pub clean_cubes: CubeSet,
    pub legend: ClassLegend,
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

/// Deterministic for a fixed spec, seed included.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let legend = spec.legend()?;
    let (w, h, n) = (spec.width, spec.height, spec.width * spec.height);
    let classes = spec.classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spectral = normal(spec.spectral_noise);
    let height_noise = normal(spec.height_noise);
    let prob_noise = normal(spec.prob_noise);
    let draw = |d: &Option<Normal<f64>>, rng: &mut ChaCha8Rng| d.as_ref().map_or(0.0, |d| d.sample(rng));

    let object_heights: Vec<f64> = spec
        .objects
        .iter()
        .map(|o| {
            o.height.unwrap_or_else(|| {
                let (lo, hi) = spec.classes[o.class].height_range;
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
        })
        .collect();
    let (bg_lo, bg_hi) = spec.classes[0].height_range;
    let background: Vec<f64> = (0..n)
        .map(|_| if bg_hi > bg_lo { rng.gen_range(bg_lo..=bg_hi) } else { bg_lo })
        .collect();

    let mut scenes = Vec::with_capacity(spec.dates);
    let mut truth = Vec::with_capacity(spec.dates);
    let mut true_heights = Vec::with_capacity(spec.dates);
    let mut cubes = Vec::with_capacity(spec.dates);
    for t in 0..spec.dates {
        let mut labels = vec![0u8; n];
        let mut heights = background.clone();
        for (o, &oh) in spec.objects.iter().zip(&object_heights) {
            if !o.present_at(t) {
                continue;
            }
            for y in 0..h {
                for x in 0..w {
                    if o.shape.contains(x, y) {
                        labels[y * w + x] = o.class as u8;
                        heights[y * w + x] = oh;
                    }
                }
            }
        }
        let mut bands = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
        let mut dsm = vec![0f32; n];
        let mut ndsm = vec![0f32; n];
        let mut probs = vec![0f64; n * classes];
        for i in 0..n {
            let c = usize::from(labels[i]);
            let mut s = [0f64; 3];
            for b in 0..3 {
                s[b] = (spec.classes[c].centroid[b] + draw(&spectral, &mut rng)).clamp(0.0, 1.0);
                bands[b][i] = s[b] as f32;
            }
            let hv = (heights[i] + draw(&height_noise, &mut rng)).max(0.0);
            ndsm[i] = hv as f32;
            dsm[i] = (spec.ground_elevation + spec.slope * (i % w) as f64 + hv) as f32;
            let p = &mut probs[i * classes..(i + 1) * classes];
            let k2 = 2.0 * spec.likelihood_width * spec.likelihood_width;
            for (k, cls) in spec.classes.iter().enumerate() {
                let d2: f64 = (0..3).map(|b| (s[b] - cls.centroid[b]).powi(2)).sum();
                p[k] = -d2 / k2 + draw(&prob_noise, &mut rng);
            }
            let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in p.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in p.iter_mut() {
                *v = (1.0 - spec.prob_floor) * (*v / sum) + spec.prob_floor / classes as f64;
            }
        }
        let grid = |v: Vec<f32>| Grid::new(w, h, spec.cell_size, crate::raster::DEFAULT_NODATA, v);
        let [nir, red, green] = bands;
        let image = MultibandImage::nir_red_green(grid(nir)?, grid(red)?, grid(green)?)?;
        let truth_t = ClassRaster::new(w, h, labels)?;
        scenes.push((image, grid(dsm)?, grid(ndsm)?));
        true_heights.push(grid(heights.iter().map(|&v| v as f32).collect())?);
        truth.push(truth_t);
        cubes.push(ProbabilityCube::new(w, h, classes, probs)?);
    }
    let training: Vec<u8> = truth[0]
        .values()
        .iter()
        .map(|&c| if rng.gen_bool(spec.label_fraction) { c } else { ClassRaster::UNLABELED })
        .collect();
    let training = ClassRaster::new(w, h, training)?;
    let scenes = scenes
        .into_iter()
        .enumerate()
        .map(|(t, (image, dsm, ndsm))| {
            let labels = (t == 0).then(|| training.clone());
            TemporalScene::new(format!("t{t}"), image, dsm, ndsm, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let clean_cubes = CubeSet::new(cubes)?;
    let mut corrupted = clean_cubes.clone();
    for c in &spec.corruptions {
        corrupted = corrupt_probabilities(&corrupted, c.date, &c.region, c.mode, c.seed)?;
    }
    Ok(SyntheticScene {
        stack: TemporalStack::new(scenes)?,
        truth,
        true_heights,
        cubes: corrupted,
        clean_cubes,
        legend,
    })
}

pub const STACK_MANIFEST: &str = "stack.txt";
pub const LEGEND_FILE: &str = "legend.txt";
pub const PROBS_DIR: &str = "probs";

/// Paths produced by [`write_scene`].
#[derive(Debug, Clone)]
pub struct WrittenScene {
    pub stack_manifest: PathBuf,
    pub cube_manifest: PathBuf,
    pub legend: PathBuf,
    pub truth: Vec<PathBuf>,
}

/// Writes the stack (one directory per date), truth rasters, legend and
/// the initial probability cubes.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<WrittenScene> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut truth = Vec::new();
    let cell = scene.stack.cell_size();
    for (t, s) in scene.stack.scenes().iter().enumerate() {
        let name = format!("date{t}");
        write_scene_dir(s, &dir.join(&name))?;
        entries.push((s.date_id.clone(), name));
        let p = dir.join(format!("truth{t}.stpr"));
        write_grid(&scene.truth[t].to_grid(cell)?, &p, RasterFormat::Binary)?;
        truth.push(p);
    }
    let stack_manifest = dir.join(STACK_MANIFEST);
    write_stack_manifest(&stack_manifest, &entries)?;
    let legend = dir.join(LEGEND_FILE);
    std::fs::write(&legend, scene.legend.to_text()).map_err(|e| Error::io(&legend, e))?;
    let cube_manifest = write_cube_set(&scene.cubes, &dir.join(PROBS_DIR), cell)?;
    Ok(WrittenScene {
        stack_manifest,
        cube_manifest,
        legend,
        truth,
    })
}

/// Date whose probabilities the standard fixture corrupts.
pub const FIXTURE_CORRUPTED_DATE: usize = 1;

/// Corrupted block of the standard fixture.
pub fn fixture_region() -> Region {
    Region::new(44, 44, 84, 84)
}

/// Three dates, 128x128, five classes, one building appearing at the last
/// date and a 40x40 swap-top2 corruption of the middle date.
pub fn standard_fixture() -> SceneSpec {
    let mut spec = SceneSpec::new(128, 128, 3, 20240601);
    spec.spectral_noise = 0.03;
    spec.height_noise = 0.15;
    spec.likelihood_width = 0.08;
    spec.prob_noise = 0.6;
    spec.prob_floor = 0.02;
    spec.label_fraction = 0.1;
    spec.ground_elevation = 35.0;
    spec.slope = 0.01;
    let class = |name: &str, c: [f64; 3], lo: f64, hi: f64| ClassSpec {
        name: name.into(),
        centroid: c,
        height_range: (lo, hi),
    };
    spec.classes = vec![
        class("ground", [0.30, 0.26, 0.22], 0.0, 0.2),
        class("grass", [0.50, 0.14, 0.20], 0.0, 0.3),
        class("buildings", [0.40, 0.36, 0.33], 4.0, 10.0),
        class("trees", [0.58, 0.10, 0.16], 3.0, 9.0),
        class("roads", [0.22, 0.22, 0.22], 0.0, 0.1),
    ];
    let obj = |class: usize, shape: Shape, height: Option<f64>, from: usize| ObjectSpec {
        class,
        shape,
        height,
        from_date: from,
        until_date: None,
    };
    let rect = |x0, y0, x1, y1| Shape::Rect { x0, y0, x1, y1 };
    let disk = |cx, cy, r| Shape::Disk { cx, cy, r };
    spec.objects = vec![
        obj(1, rect(0, 0, 60, 40), None, 0),
        obj(1, rect(90, 90, 128, 128), None, 0),
        obj(4, rect(0, 60, 128, 68), None, 0),
        obj(4, rect(70, 0, 78, 128), None, 0),
        obj(2, rect(10, 10, 30, 28), Some(6.0), 0),
        obj(2, rect(48, 46, 66, 58), Some(8.5), 0),
        obj(2, rect(90, 20, 118, 44), Some(5.0), 0),
        obj(2, rect(20, 80, 40, 104), Some(7.0), 0),
        obj(3, disk(40, 48, 7), Some(6.5), 0),
        obj(3, disk(112, 80, 6), Some(5.5), 0),
        obj(3, disk(56, 76, 6), Some(7.5), 0),
        obj(3, disk(100, 104, 8), Some(8.0), 0),
        obj(2, rect(86, 50, 104, 58), Some(6.0), 2),
    ];
    spec.corruptions = vec![CorruptionSpec {
        date: FIXTURE_CORRUPTED_DATE,
        mode: CorruptionMode::SwapTop2,
        region: fixture_region(),
        seed: 0,
    }];
    spec
}
