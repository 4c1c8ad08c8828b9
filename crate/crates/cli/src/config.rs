//! INI experiment configuration with typed sections.
//!
//! Every key has a default, so an empty file is a valid ROBER
//! configuration. Unknown sections or keys are rejected so typos surface
//! as configuration errors rather than silently ignored settings.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use kinetic_pinn::integrators::Method;
use kinetic_pinn::pinn::{OutputTransform, Sampling, TrainingConfig};

use crate::CliError;

/// Training on the full kinetics or on the QSS-reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Regular,
    Stiff,
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regular" => Ok(Self::Regular),
            "stiff" => Ok(Self::Stiff),
            other => Err(format!("unknown mode `{other}` (expected regular or stiff)")),
        }
    }
}

impl Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Regular => "regular",
            Self::Stiff => "stiff",
        })
    }
}

/// Output-time grid for reference runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// The span start, then log-spaced points from `t_first` to the end.
    Log,
    /// Evenly spaced points over the span.
    Linear,
}

impl FromStr for GridKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "log" => Ok(Self::Log),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown grid `{other}` (expected log or linear)")),
        }
    }
}

impl Display for GridKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Log => "log",
            Self::Linear => "linear",
        })
    }
}

/// Residual weights: all ones, `1 / max_i^2` from a BDF reference, or an
/// explicit list.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Ones,
    InverseMaxSquared,
    Explicit(Vec<f64>),
}

impl FromStr for WeightSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ones" => Ok(Self::Ones),
            "inverse-max-squared" => Ok(Self::InverseMaxSquared),
            _ => parse_list::<f64>(s).map(Self::Explicit),
        }
    }
}

impl Display for WeightSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Ones => f.write_str("ones"),
            Self::InverseMaxSquared => f.write_str("inverse-max-squared"),
            Self::Explicit(v) => f.write_str(&join(v)),
        }
    }
}

/// Closure selection: the ROBER closed form when the mechanism has that
/// shape, Newton otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureChoice {
    Auto,
    ClosedForm,
    Newton,
}

impl FromStr for ClosureChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "closed-form" | "closed-form-rober" => Ok(Self::ClosedForm),
            "newton" => Ok(Self::Newton),
            other => Err(format!("unknown closure `{other}` (expected auto, closed-form or newton)")),
        }
    }
}

impl Display for ClosureChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Auto => "auto",
            Self::ClosedForm => "closed-form",
            Self::Newton => "newton",
        })
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| format!("bad list entry `{x}`: {e}")))
        .collect()
}

fn opt_to_string<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// A `widths x depth` hidden-layer shape such as `128x3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub width: usize,
    pub depth: usize,
}

impl Architecture {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.width; self.depth]
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, d) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("architecture `{s}` is not of the form <width>x<depth>"))?;
        let width = w.trim().parse().map_err(|e| format!("bad width in `{s}`: {e}"))?;
        let depth = d.trim().parse().map_err(|e| format!("bad depth in `{s}`: {e}"))?;
        if width == 0 || depth == 0 {
            return Err(format!("architecture `{s}` must have positive width and depth"));
        }
        Ok(Self { width, depth })
    }
}

impl Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub grid: GridKind,
    pub points: usize,
    /// First positive output time of a log grid.
    pub t_first: f64,
    /// End of the integration span; defaults to the mechanism's.
    pub t_end: Option<f64>,
    /// Integrate the QSS-reduced system and reconstruct the full state.
    pub reduced: bool,
    /// Where the reduced integration starts; earlier output rows come from
    /// the full system. Defaults to the span start, or to 1e-5 of the span
    /// past it when the closure has no solution at the initial state.
    pub reduced_start: Option<f64>,
    /// Span end for the explicit-vs-implicit step-count comparison.
    pub compare_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QssaSection {
    pub threshold: f64,
    pub closure: ClosureChoice,
    /// Explicit QSS species; otherwise taken from the mechanism file's
    /// `QSS:` line or selected by threshold.
    pub species: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub mode: TrainMode,
    /// `rober` or `pollu` defaults underlying the explicit keys below.
    pub preset: String,
    pub n_collocation: Option<usize>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub sampling: Option<Sampling>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_updates: Option<usize>,
    pub weights: Option<WeightSpec>,
    pub seed: u64,
    pub transform: Option<OutputTransform>,
    pub y_ref_scale: Option<Vec<f64>>,
    pub record_every: Option<usize>,
    /// `0` disables early stopping.
    pub plateau_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSection {
    pub checkpoint: Option<PathBuf>,
    /// Trajectory CSV; when absent a BDF reference is computed on the grid.
    pub reference: Option<PathBuf>,
    pub species: Option<Vec<String>>,
    /// Also report QSS species reconstructed through the closure.
    pub qss: bool,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub points: usize,
    pub grid: GridKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub architectures: Vec<Architecture>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSection {
    pub inputs: Vec<PathBuf>,
    pub logx: bool,
    pub logy: bool,
    pub title: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `builtin:<name>` or a mechanism file path.
    pub mechanism: String,
    pub solver: SolverSection,
    pub qssa: QssaSection,
    /// Hidden-layer widths.
    pub widths: Vec<usize>,
    pub training: TrainingSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
    pub plot: PlotSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mechanism: "builtin:rober".into(),
            solver: SolverSection {
                method: Method::Bdf,
                rtol: 1e-8,
                atol: 1e-12,
                grid: GridKind::Log,
                points: 200,
                t_first: 1e-6,
                t_end: None,
                reduced: false,
                reduced_start: None,
                compare_end: 100.0,
            },
            qssa: QssaSection {
                threshold: 1e-4,
                closure: ClosureChoice::Auto,
                species: None,
            },
            widths: vec![128, 128, 128],
            training: TrainingSection {
                mode: TrainMode::Stiff,
                preset: "rober".into(),
                n_collocation: None,
                t_min: None,
                t_max: None,
                sampling: None,
                batch_size: None,
                learning_rate: None,
                max_updates: None,
                weights: None,
                seed: 0,
                transform: None,
                y_ref_scale: None,
                record_every: None,
                plateau_window: None,
            },
            evaluate: EvaluateSection {
                checkpoint: None,
                reference: None,
                species: None,
                qss: false,
                t_min: None,
                t_max: None,
                points: 1000,
                grid: GridKind::Log,
            },
            sweep: SweepSection {
                architectures: ["64x4", "64x5", "128x2", "128x3", "256x1"]
                    .iter()
                    .map(|a| a.parse().expect("valid default"))
                    .collect(),
                seeds: 3,
            },
            plot: PlotSection {
                inputs: Vec::new(),
                logx: false,
                logy: false,
                title: String::new(),
                file: "plot.svg".into(),
            },
            output: OutputSection {
                directory: PathBuf::from("out"),
                svg: false,
            },
        }
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| CliError::Config(format!("[{section}] {key} = {value}: {e}")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("[{section}] {key} = {value}: expected a boolean"))),
    }
}

fn parse_opt<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Option<T>, CliError>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        Ok(None)
    } else {
        parse_value(section, key, value).map(Some)
    }
}

fn list_of<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    parse_list(value).map_err(|e| CliError::Config(format!("[{section}] {key}: {e}")))
}

fn opt_list<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Option<Vec<T>>, CliError>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        Ok(None)
    } else {
        list_of(section, key, value).map(Some)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("config syntax: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        Ok(cfg)
    }

    /// Applies one `section.key = value` setting.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let s = section;
        let v = value;
        match (s, key) {
            ("mechanism", "source") => self.mechanism = v.trim().to_string(),
            ("solver", "method") => self.solver.method = parse_value(s, key, v)?,
            ("solver", "rtol") => self.solver.rtol = parse_value(s, key, v)?,
            ("solver", "atol") => self.solver.atol = parse_value(s, key, v)?,
            ("solver", "grid") => self.solver.grid = parse_value(s, key, v)?,
            ("solver", "points") => self.solver.points = parse_value(s, key, v)?,
            ("solver", "t_first") => self.solver.t_first = parse_value(s, key, v)?,
            ("solver", "t_end") => self.solver.t_end = parse_opt(s, key, v)?,
            ("solver", "reduced") => self.solver.reduced = parse_bool(s, key, v)?,
            ("solver", "reduced_start") => self.solver.reduced_start = parse_opt(s, key, v)?,
            ("solver", "compare_end") => self.solver.compare_end = parse_value(s, key, v)?,
            ("qssa", "threshold") => self.qssa.threshold = parse_value(s, key, v)?,
            ("qssa", "closure") => self.qssa.closure = parse_value(s, key, v)?,
            ("qssa", "species") => self.qssa.species = opt_list(s, key, v)?,
            ("network", "widths") => self.widths = list_of(s, key, v)?,
            ("training", "mode") => self.training.mode = parse_value(s, key, v)?,
            ("training", "preset") => {
                let p = v.trim().to_ascii_lowercase();
                if p != "rober" && p != "pollu" {
                    return Err(CliError::Config(format!("[training] preset = {v}: expected rober or pollu")));
                }
                self.training.preset = p;
            }
            ("training", "n_collocation") => self.training.n_collocation = parse_opt(s, key, v)?,
            ("training", "t_min") => self.training.t_min = parse_opt(s, key, v)?,
            ("training", "t_max") => self.training.t_max = parse_opt(s, key, v)?,
            ("training", "sampling") => self.training.sampling = parse_opt(s, key, v)?,
            ("training", "batch_size") => self.training.batch_size = parse_opt(s, key, v)?,
            ("training", "learning_rate") => self.training.learning_rate = parse_opt(s, key, v)?,
            ("training", "max_updates") => self.training.max_updates = parse_opt(s, key, v)?,
            ("training", "weights") => self.training.weights = parse_opt(s, key, v)?,
            ("training", "seed") => self.training.seed = parse_value(s, key, v)?,
            ("training", "transform") => self.training.transform = parse_opt(s, key, v)?,
            ("training", "y_ref_scale") => self.training.y_ref_scale = opt_list(s, key, v)?,
            ("training", "record_every") => self.training.record_every = parse_opt(s, key, v)?,
            ("training", "plateau_window") => self.training.plateau_window = parse_opt(s, key, v)?,
            ("evaluate", "checkpoint") => self.evaluate.checkpoint = parse_opt(s, key, v)?,
            ("evaluate", "reference") => self.evaluate.reference = parse_opt(s, key, v)?,
            ("evaluate", "species") => self.evaluate.species = opt_list(s, key, v)?,
            ("evaluate", "qss") => self.evaluate.qss = parse_bool(s, key, v)?,
            ("evaluate", "t_min") => self.evaluate.t_min = parse_opt(s, key, v)?,
            ("evaluate", "t_max") => self.evaluate.t_max = parse_opt(s, key, v)?,
            ("evaluate", "points") => self.evaluate.points = parse_value(s, key, v)?,
            ("evaluate", "grid") => self.evaluate.grid = parse_value(s, key, v)?,
            ("sweep", "architectures") => self.sweep.architectures = list_of(s, key, v)?,
            ("sweep", "seeds") => self.sweep.seeds = parse_value(s, key, v)?,
            ("plot", "inputs") => self.plot.inputs = list_of(s, key, v)?,
            ("plot", "logx") => self.plot.logx = parse_bool(s, key, v)?,
            ("plot", "logy") => self.plot.logy = parse_bool(s, key, v)?,
            ("plot", "title") => self.plot.title = v.trim().to_string(),
            ("plot", "file") => self.plot.file = v.trim().to_string(),
            ("output", "directory") => self.output.directory = PathBuf::from(v.trim()),
            ("output", "svg") => self.output.svg = parse_bool(s, key, v)?,
            _ => return Err(CliError::Config(format!("unknown setting [{section}] {key}"))),
        }
        Ok(())
    }

    /// Every setting as an INI document; parsing it back gives `self`.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        ini.with_section(Some("mechanism")).set("source", &self.mechanism);
        let s = &self.solver;
        ini.with_section(Some("solver"))
            .set("method", s.method.to_string())
            .set("rtol", s.rtol.to_string())
            .set("atol", s.atol.to_string())
            .set("grid", s.grid.to_string())
            .set("points", s.points.to_string())
            .set("t_first", s.t_first.to_string())
            .set("t_end", opt_to_string(&s.t_end))
            .set("reduced", s.reduced.to_string())
            .set("reduced_start", opt_to_string(&s.reduced_start))
            .set("compare_end", s.compare_end.to_string());
        let q = &self.qssa;
        ini.with_section(Some("qssa"))
            .set("threshold", q.threshold.to_string())
            .set("closure", q.closure.to_string())
            .set("species", q.species.as_deref().map(join).unwrap_or_default());
        ini.with_section(Some("network")).set("widths", join(&self.widths));
        let t = &self.training;
        ini.with_section(Some("training"))
            .set("mode", t.mode.to_string())
            .set("preset", &t.preset)
            .set("n_collocation", opt_to_string(&t.n_collocation))
            .set("t_min", opt_to_string(&t.t_min))
            .set("t_max", opt_to_string(&t.t_max))
            .set("sampling", opt_to_string(&t.sampling))
            .set("batch_size", opt_to_string(&t.batch_size))
            .set("learning_rate", opt_to_string(&t.learning_rate))
            .set("max_updates", opt_to_string(&t.max_updates))
            .set("weights", opt_to_string(&t.weights))
            .set("seed", t.seed.to_string())
            .set("transform", opt_to_string(&t.transform))
            .set("y_ref_scale", t.y_ref_scale.as_deref().map(join).unwrap_or_default())
            .set("record_every", opt_to_string(&t.record_every))
            .set("plateau_window", opt_to_string(&t.plateau_window));
        let e = &self.evaluate;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        ini.with_section(Some("evaluate"))
            .set("checkpoint", path(&e.checkpoint))
            .set("reference", path(&e.reference))
            .set("species", e.species.as_deref().map(join).unwrap_or_default())
            .set("qss", e.qss.to_string())
            .set("t_min", opt_to_string(&e.t_min))
            .set("t_max", opt_to_string(&e.t_max))
            .set("points", e.points.to_string())
            .set("grid", e.grid.to_string());
        ini.with_section(Some("sweep"))
            .set("architectures", join(&self.sweep.architectures))
            .set("seeds", self.sweep.seeds.to_string());
        let p = &self.plot;
        let inputs: Vec<String> = p.inputs.iter().map(|p| p.display().to_string()).collect();
        ini.with_section(Some("plot"))
            .set("inputs", inputs.join(","))
            .set("logx", p.logx.to_string())
            .set("logy", p.logy.to_string())
            .set("title", &p.title)
            .set("file", &p.file);
        ini.with_section(Some("output"))
            .set("directory", self.output.directory.display().to_string())
            .set("svg", self.output.svg.to_string());
        ini
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.to_ini().write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("INI output is UTF-8")
    }

    /// The library training configuration: preset defaults overlaid with
    /// every explicit key. Weights are resolved separately because they
    /// may need a reference solution.
    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        let mut c = if t.preset == "pollu" {
            TrainingConfig::pollu()
        } else {
            TrainingConfig::rober()
        };
        c.rng_seed = t.seed;
        if let Some(v) = t.n_collocation {
            c.n_collocation = v;
        }
        if let Some(v) = t.t_min {
            c.t_min = v;
        }
        if let Some(v) = t.t_max {
            c.t_max = v;
        }
        if let Some(v) = t.sampling {
            c.sampling = v;
        }
        if let Some(v) = t.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = t.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = t.max_updates {
            c.max_updates = v;
        }
        if let Some(v) = t.transform {
            c.output_transform = v;
        }
        if let Some(v) = &t.y_ref_scale {
            c.y_ref_scale = Some(v.clone());
        }
        if let Some(v) = t.record_every {
            c.record_every = v;
        }
        if let Some(v) = t.plateau_window {
            c.plateau_window = (v > 0).then_some(v);
        }
        c
    }
}
