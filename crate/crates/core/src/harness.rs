//! Experiment driver: two-grid and multilevel studies, adaptive cavity
//! runs, Newton iteration for Navier-Stokes and report output.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{energy_errors, energy_norm, field_l2_error, total_error, AssemblyOptions, DofMap, Solution};
use crate::error::{Error, Result};
use crate::formulation::{manufactured_solution, BackgroundFlow, FormDescriptor, ProblemKind, ProblemParams, ProblemSpec};
use crate::geometry::Point;
use crate::krylov::{pcg, PcgOptions, SolveReport};
use crate::mesh::{build_hierarchy, greedy_select, MeshTopology};
use crate::multigrid::{transfer_solution, CoarseSolver, Level, SigmaMode, SmootherOptions, VCycle};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemTag {
    Poisson,
    Stokes,
    /// Navier-Stokes with the Kovasznay solution.
    Kovasznay,
    /// Lid-driven cavity; Stokes unless a Reynolds number is given.
    Cavity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwoGridMode {
    H,
    P,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuessPolicy {
    Zero,
    Previous,
    /// Solve from the previous solution, and again from zero for comparison.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_ascii_lowercase()))
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

macro_rules! enum_from_str {
    ($($t:ty => $key:literal),*) => {$(
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                parse_enum($key, s)
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&enum_name(self))
            }
        }
    )*};
}

enum_from_str!(ProblemTag => "problem", TwoGridMode => "two_grid", GuessPolicy => "guess", ReportFormat => "format");

impl FromStr for SigmaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum("sigma_mode", s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemTag,
    pub dim: usize,
    pub k: usize,
    /// Test enrichment; defaults to the dimension.
    pub delta_k: Option<usize>,
    /// Fine mesh cells per axis (two-grid, multilevel).
    pub width: usize,
    /// Root mesh cells per axis for multilevel and adaptive runs.
    pub coarse_width: usize,
    pub two_grid: TwoGridMode,
    pub k_coarse: usize,
    pub skip_intermediate_p: bool,
    pub overlap_h: usize,
    pub overlap_p: usize,
    pub sigma_mode: SigmaMode,
    pub tol: f64,
    pub adaptive: bool,
    pub refs: usize,
    pub fraction: f64,
    pub re: Option<f64>,
    pub newton_eps0: f64,
    pub newton_floor: f64,
    pub newton_max_steps: usize,
    /// Newton steps taken on the linear mesh to build the background flow of
    /// non-adaptive Navier-Stokes runs.
    pub background_steps: usize,
    pub guess: GuessPolicy,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: ProblemTag::Poisson,
            dim: 2,
            k: 1,
            delta_k: None,
            width: 4,
            coarse_width: 2,
            two_grid: TwoGridMode::None,
            k_coarse: 1,
            skip_intermediate_p: true,
            overlap_h: 1,
            overlap_p: 0,
            sigma_mode: SigmaMode::Aggressive,
            tol: 1e-10,
            adaptive: false,
            refs: 8,
            fraction: 0.2,
            re: None,
            newton_eps0: 1e-4,
            newton_floor: 1e-8,
            newton_max_steps: 30,
            background_steps: 3,
            guess: GuessPolicy::Both,
            out: None,
            format: ReportFormat::Json,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for {key}"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

impl ExperimentConfig {
    /// Sets one option; keys accept `-` or `_` as separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "problem" => self.problem = value.parse()?,
            "dim" => self.dim = parse_num(k, value)?,
            "k" => self.k = parse_num(k, value)?,
            "delta_k" => self.delta_k = parse_opt(k, value)?,
            "width" => self.width = parse_num(k, value)?,
            "coarse_width" => self.coarse_width = parse_num(k, value)?,
            "two_grid" => self.two_grid = value.parse()?,
            "k_coarse" => self.k_coarse = parse_num(k, value)?,
            "skip_intermediate_p" => self.skip_intermediate_p = parse_bool(k, value)?,
            "overlap_h" => self.overlap_h = parse_num(k, value)?,
            "overlap_p" => self.overlap_p = parse_num(k, value)?,
            "sigma_mode" => self.sigma_mode = value.parse()?,
            "tol" => self.tol = parse_num(k, value)?,
            "adaptive" => self.adaptive = parse_bool(k, value)?,
            "refs" => self.refs = parse_num(k, value)?,
            "fraction" => self.fraction = parse_num(k, value)?,
            "re" => self.re = parse_opt(k, value)?,
            "newton_eps0" => self.newton_eps0 = parse_num(k, value)?,
            "newton_floor" => self.newton_floor = parse_num(k, value)?,
            "newton_max_steps" => self.newton_max_steps = parse_num(k, value)?,
            "background_steps" => self.background_steps = parse_num(k, value)?,
            "guess" => self.guess = value.parse()?,
            "out" => self.out = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "format" => self.format = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_kv_text(&text)
    }

    /// Canonical `key = value` text with every option.
    pub fn to_kv_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let lines = [
            ("problem", self.problem.to_string()),
            ("dim", self.dim.to_string()),
            ("k", self.k.to_string()),
            ("delta_k", opt(self.delta_k.map(|d| d.to_string()))),
            ("width", self.width.to_string()),
            ("coarse_width", self.coarse_width.to_string()),
            ("two_grid", self.two_grid.to_string()),
            ("k_coarse", self.k_coarse.to_string()),
            ("skip_intermediate_p", self.skip_intermediate_p.to_string()),
            ("overlap_h", self.overlap_h.to_string()),
            ("overlap_p", self.overlap_p.to_string()),
            ("sigma_mode", enum_name(&self.sigma_mode)),
            ("tol", format!("{:e}", self.tol)),
            ("adaptive", self.adaptive.to_string()),
            ("refs", self.refs.to_string()),
            ("fraction", self.fraction.to_string()),
            ("re", opt(self.re.map(|r| r.to_string()))),
            ("newton_eps0", format!("{:e}", self.newton_eps0)),
            ("newton_floor", format!("{:e}", self.newton_floor)),
            ("newton_max_steps", self.newton_max_steps.to_string()),
            ("background_steps", self.background_steps.to_string()),
            ("guess", self.guess.to_string()),
            ("out", self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("format", self.format.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash_hex(&self) -> String {
        let mut h = DefaultHasher::new();
        self.to_kv_text().hash(&mut h);
        format!("{:016x}", h.finish())
    }

    pub fn delta_k(&self) -> usize {
        self.delta_k.unwrap_or(self.dim)
    }

    pub fn is_navier_stokes(&self) -> bool {
        match self.problem {
            ProblemTag::Kovasznay => true,
            ProblemTag::Cavity => self.re.is_some(),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dim {} not supported", self.dim));
        }
        if self.problem != ProblemTag::Poisson && self.dim != 2 {
            return bad(format!("{} is two-dimensional", self.problem));
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if !(self.width >= 2 && self.width.is_power_of_two()) {
            return bad(format!("width {} is not a power of 2 >= 2", self.width));
        }
        if !(self.coarse_width >= 1 && self.coarse_width.is_power_of_two()) {
            return bad(format!("coarse width {} is not a power of 2", self.coarse_width));
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction {} outside (0, 1]", self.fraction));
        }
        if self.k_coarse > self.k {
            return bad(format!("k_coarse {} exceeds k {}", self.k_coarse, self.k));
        }
        if let Some(re) = self.re {
            if !(re > 0.0) {
                return bad("re must be positive".into());
            }
            if matches!(self.problem, ProblemTag::Poisson | ProblemTag::Stokes) {
                return bad(format!("re is not used by {}", self.problem));
            }
        }
        if self.adaptive && self.problem != ProblemTag::Cavity {
            return bad("adaptive runs use the cavity problem".into());
        }
        if self.adaptive && self.two_grid != TwoGridMode::None {
            return bad("adaptive runs use full hierarchies (two_grid = none)".into());
        }
        if !(self.newton_eps0 > 0.0 && self.newton_floor > 0.0) {
            return bad("Newton thresholds must be positive".into());
        }
        Ok(())
    }

    fn smoother(&self) -> SmootherOptions {
        SmootherOptions {
            overlap_h: self.overlap_h,
            overlap_p: self.overlap_p,
            sigma_mode: self.sigma_mode,
        }
    }

    fn pcg_options(&self) -> PcgOptions {
        PcgOptions {
            tol: self.tol,
            max_iter: None,
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let kind = match self.problem {
            ProblemTag::Poisson => ProblemKind::Poisson,
            ProblemTag::Stokes => ProblemKind::Stokes,
            ProblemTag::Kovasznay => ProblemKind::Kovasznay,
            ProblemTag::Cavity => ProblemKind::Cavity,
        };
        manufactured_solution(
            kind,
            ProblemParams {
                dim: self.dim,
                re: self.re,
                ..Default::default()
            },
        )
    }
}

/// One line of a report; which optional columns are filled depends on the
/// kind of experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub k: usize,
    pub width: Option<usize>,
    pub refinement: Option<usize>,
    pub h_max: f64,
    pub h_min: f64,
    pub elements: usize,
    pub energy_error: Option<f64>,
    pub iterations: usize,
    pub zero_guess_iterations: Option<usize>,
    pub per_step_iterations: Option<f64>,
    pub nonlinear_steps: Option<usize>,
    pub k_coarse: usize,
    pub coarse_width: Option<usize>,
    pub h_levels: usize,
    pub k_levels: usize,
    pub unknowns: usize,
    pub converged: bool,
}

/// CSV column names, in `ReportRow` field order.
pub const CSV_COLUMNS: [&str; 17] = [
    "k",
    "width",
    "refinement",
    "h_max",
    "h_min",
    "elements",
    "energy_error",
    "iterations",
    "zero_guess_iterations",
    "per_step_iterations",
    "nonlinear_steps",
    "k_coarse",
    "coarse_width",
    "h_levels",
    "k_levels",
    "unknowns",
    "converged",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub crate_version: String,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub schema_version: u32,
    /// `two_grid`, `multilevel` or `adaptive`.
    pub experiment: String,
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

impl TableReport {
    pub fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        TableReport {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            metadata: ReportMetadata {
                config_hash: config.hash_hex(),
                crate_version: env!("CARGO_PKG_VERSION").into(),
                config: config.clone(),
            },
            rows: Vec::new(),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// CSV text: one `#` metadata line, the header, then one line per row.
    pub fn to_csv(&self) -> Result<String> {
        let mut buf = format!(
            "# schema_version={} experiment={} config_hash={} crate_version={}\n",
            self.schema_version, self.experiment, self.metadata.config_hash, self.metadata.crate_version
        )
        .into_bytes();
        {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
            w.write_record(CSV_COLUMNS)?;
            for row in &self.rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Rows of CSV text written by [`TableReport::to_csv`].
pub fn parse_csv_rows(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}

/// Writes the report to `path`, or to stdout when `path` is `None`.
pub fn emit_report(report: &TableReport, format: ReportFormat, path: Option<&Path>) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv()?,
    };
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn boundary(spec: &ProblemSpec) -> impl Fn(usize, &Point) -> f64 + '_ {
    move |c, x| spec.boundary_value(c, x)
}

fn uniform_mesh(spec: &ProblemSpec, width: usize, order: usize) -> Result<MeshTopology> {
    MeshTopology::uniform(spec.dim(), spec.domain, [width, width], order)
}

/// Solves the finest level's system with the V-cycle built on `levels`.
fn mg_solve(levels: &[Level], cfg: &ExperimentConfig, x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)> {
    let fine = levels.last().ok_or(Error::Empty("levels"))?;
    let vc = VCycle::new(levels, cfg.smoother())?;
    pcg(&fine.system.matrix, &fine.system.rhs, &vc, x0, cfg.pcg_options())
}

fn levels_for(
    meshes: Vec<MeshTopology>,
    spec: &ProblemSpec,
    form: &FormDescriptor,
    delta_k: usize,
) -> Result<Vec<Level>> {
    let opts = AssemblyOptions::new(delta_k);
    meshes
        .into_iter()
        .map(|m| Level::new(m, form.clone(), boundary(spec), spec.pin, &opts))
        .collect()
}

fn row_for(mesh: &MeshTopology, k: usize, unknowns: usize, rep: &SolveReport) -> ReportRow {
    let (h_max, h_min) = mesh.h_range();
    ReportRow {
        k,
        width: None,
        refinement: None,
        h_max,
        h_min,
        elements: mesh.num_active(),
        energy_error: None,
        iterations: rep.iterations,
        zero_guess_iterations: None,
        per_step_iterations: None,
        nonlinear_steps: None,
        k_coarse: k,
        coarse_width: None,
        h_levels: 0,
        k_levels: 0,
        unknowns,
        converged: rep.converged,
    }
}

/// Form for the configured problem; Navier-Stokes runs linearize about a
/// flow from a few direct Newton steps on a linear mesh of the same
/// geometry as `fine`.
fn study_form(cfg: &ExperimentConfig, spec: &ProblemSpec, fine: &MeshTopology) -> Result<FormDescriptor> {
    if !spec.is_nonlinear() {
        return Ok(spec.form.clone());
    }
    let mut linear = fine.clone();
    linear.set_all_orders(1);
    let opts = NewtonOptions {
        eps: 0.0,
        max_steps: cfg.background_steps,
        solver: NewtonSolver::Direct,
    };
    let out = newton_solve(cfg, spec, &linear, None, &opts)?;
    spec.form_for(Some(Arc::new(background_of(&linear, spec, &out.solution))))
}

/// Two-level solve: coarse is the once-coarsened mesh (h) or the same mesh
/// at half the order (p).
pub fn run_two_grid(cfg: &ExperimentConfig) -> Result<TableReport> {
    cfg.validate()?;
    let spec = cfg.problem_spec()?;
    let k = cfg.k;
    let (coarse, fine) = match cfg.two_grid {
        TwoGridMode::P => {
            let fine = uniform_mesh(&spec, cfg.width, k)?;
            let mut coarse = fine.clone();
            coarse.set_all_orders(k / 2);
            (coarse, fine)
        }
        TwoGridMode::H => {
            if cfg.width < 2 {
                return Err(Error::Config(format!("h two-grid: a width {} mesh has nothing to coarsen", cfg.width)));
            }
            let coarse = uniform_mesh(&spec, cfg.width / 2, k)?;
            let fine = coarse.refine_uniformly(1)?;
            (coarse.embed_in(&fine)?, fine)
        }
        TwoGridMode::None => return Err(Error::Config("two_grid must be h or p".into())),
    };
    let form = study_form(cfg, &spec, &fine)?;
    let k_coarse = coarse.min_active_order();
    let levels = levels_for(vec![coarse, fine], &spec, &form, cfg.delta_k())?;
    let (_, rep) = mg_solve(&levels, cfg, None)?;
    let fine = &levels[1];
    let mut row = row_for(&fine.mesh, k, fine.system.n(), &rep);
    row.width = Some(cfg.width);
    row.k_coarse = k_coarse;
    row.coarse_width = Some(if cfg.two_grid == TwoGridMode::H { cfg.width / 2 } else { cfg.width });
    match cfg.two_grid {
        TwoGridMode::H => row.h_levels = 1,
        _ => row.k_levels = 1,
    }
    let mut report = TableReport::new("two_grid", cfg);
    report.rows.push(row);
    Ok(report)
}

/// Uniform fine mesh of `width` cells per axis obtained by refining a
/// `coarse_width` root mesh, solved with the full hierarchy.
pub fn run_multilevel(cfg: &ExperimentConfig) -> Result<TableReport> {
    cfg.validate()?;
    if cfg.width < cfg.coarse_width || cfg.width % cfg.coarse_width != 0 {
        return Err(Error::Config(format!(
            "width {} is not a refinement of coarse width {}",
            cfg.width, cfg.coarse_width
        )));
    }
    let spec = cfg.problem_spec()?;
    let times = (cfg.width / cfg.coarse_width).trailing_zeros() as usize;
    let fine = uniform_mesh(&spec, cfg.coarse_width, cfg.k)?.refine_uniformly(times)?;
    let form = study_form(cfg, &spec, &fine)?;
    let hier = build_hierarchy(&fine, cfg.k_coarse, cfg.skip_intermediate_p)?;
    let (h_levels, k_levels) = (hier.h_levels(), hier.p_levels());
    let levels = levels_for(hier.levels, &spec, &form, cfg.delta_k())?;
    let (_, rep) = mg_solve(&levels, cfg, None)?;
    let top = levels.last().expect("nonempty");
    let mut row = row_for(&top.mesh, cfg.k, top.system.n(), &rep);
    row.width = Some(cfg.width);
    row.coarse_width = Some(cfg.coarse_width);
    row.k_coarse = cfg.k_coarse;
    row.h_levels = h_levels;
    row.k_levels = k_levels;
    let mut report = TableReport::new("multilevel", cfg);
    report.rows.push(row);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NewtonSolver {
    /// Sparse factorization of each linearized system.
    Direct,
    /// MG-preconditioned CG over the hierarchy of the mesh.
    Multigrid,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Stop once the L2 norm of the field increment drops below this.
    pub eps: f64,
    pub max_steps: usize,
    pub solver: NewtonSolver,
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub solution: Solution,
    pub dofmap: DofMap,
    pub steps: usize,
    pub total_iterations: usize,
    /// L2 norms of the field increments, one per step.
    pub increments: Vec<f64>,
    /// Per-cell energy errors of the final iterate.
    pub cell_errors: Vec<(usize, f64)>,
    pub energy_error: f64,
    pub energy_norm: f64,
    /// Increment below `eps` and every linear solve converged.
    pub converged: bool,
    pub unknowns: usize,
}

impl NewtonOutcome {
    pub fn relative_error(&self) -> f64 {
        if self.energy_norm > 0.0 {
            self.energy_error / self.energy_norm
        } else {
            self.energy_error
        }
    }
}

fn background_of(mesh: &MeshTopology, spec: &ProblemSpec, u: &Solution) -> BackgroundFlow {
    BackgroundFlow {
        mesh: mesh.clone(),
        fields: u.fields.clone(),
        n_field_comps: spec.form.n_field_comps(),
    }
}

/// Newton iteration in increment form: each step solves the system
/// linearized about the current iterate `u` for `du`, with load `l - B u`
/// and boundary data `g - u` on Dirichlet traces, then sets `u += du`.
pub fn newton_solve(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    mesh: &MeshTopology,
    initial: Option<Solution>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    if !spec.is_nonlinear() {
        return Err(Error::Config("Newton iteration needs a Navier-Stokes problem".into()));
    }
    let dm = DofMap::new(mesh, &spec.form, boundary(spec), spec.pin)?;
    let mut u = initial.unwrap_or_else(|| Solution::zeros(mesh, &dm));
    if u.traces.len() != dm.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: dm.n_dofs(),
            got: u.traces.len(),
        });
    }
    let comps: Vec<usize> = (0..spec.form.n_field_comps()).collect();
    let hierarchy = match opts.solver {
        NewtonSolver::Multigrid => Some(build_hierarchy(mesh, cfg.k_coarse.min(mesh.min_active_order()), cfg.skip_intermediate_p)?),
        NewtonSolver::Direct => None,
    };
    let max_steps = opts.max_steps.max(1);
    let mut increments = Vec::new();
    let mut total_iterations = 0;
    let mut solves_ok = true;
    loop {
        let form = spec.form_for(Some(Arc::new(background_of(mesh, spec, &u))))?;
        let mut dm_inc = dm.clone();
        for (g, fi) in dm.free_index.iter().enumerate() {
            if fi.is_none() {
                dm_inc.fixed_values[g] = dm.fixed_values[g] - u.traces[g];
            }
        }
        let fine_opts = AssemblyOptions {
            delta_k: cfg.delta_k(),
            condensed: true,
            shift: Some(&u),
            retain_local: false,
        };
        let fine = Level::from_dofmap(mesh.clone(), form.clone(), dm_inc, &fine_opts)?;
        let (fine, x) = match &hierarchy {
            None => {
                let solver = CoarseSolver::new(&fine.system.matrix)?;
                let mut x = vec![0.0; fine.system.n()];
                solver.apply(&fine.system.rhs, &mut x);
                total_iterations += 1;
                (fine, x)
            }
            Some(h) => {
                let coarse_opts = AssemblyOptions::new(cfg.delta_k());
                let mut levels = h.levels[..h.levels.len() - 1]
                    .iter()
                    .map(|m| Level::new(m.clone(), form.clone(), boundary(spec), spec.pin, &coarse_opts))
                    .collect::<Result<Vec<_>>>()?;
                levels.push(fine);
                let (x, rep) = mg_solve(&levels, cfg, None)?;
                total_iterations += rep.iterations;
                solves_ok &= rep.converged;
                (levels.pop().expect("fine level"), x)
            }
        };
        let du = fine.system.solution(&fine.dofmap, &x)?;
        let step = field_l2_error(mesh, &dm, &du, &comps, |_, _| 0.0)?;
        increments.push(step);
        let prev = u.clone();
        u.axpy(1.0, &du);
        let done = step < opts.eps;
        if done || increments.len() == max_steps {
            let cell_errors = energy_errors(mesh, &form, &fine.dofmap, &fine.system, &du, Some(&prev))?;
            let energy_error = total_error(&cell_errors);
            let energy_norm = energy_norm(mesh, &form, &fine.dofmap, &fine.system, &u)?;
            return Ok(NewtonOutcome {
                solution: u,
                unknowns: fine.system.n(),
                dofmap: dm,
                steps: increments.len(),
                total_iterations,
                increments,
                cell_errors,
                energy_error,
                energy_norm,
                converged: done && solves_ok,
            });
        }
    }
}

fn newton_threshold(cfg: &ExperimentConfig, previous_rel: Option<f64>) -> f64 {
    match previous_rel {
        None => cfg.newton_eps0,
        Some(e) => (0.1 * e).min(cfg.newton_eps0).max(cfg.newton_floor),
    }
}

fn refine_greedy(mesh: &MeshTopology, errors: &[(usize, f64)], fraction: f64) -> Result<MeshTopology> {
    let etas: Vec<f64> = errors.iter().map(|e| e.1).collect();
    let ids: Vec<usize> = greedy_select(&etas, fraction)?.into_iter().map(|i| errors[i].0).collect();
    mesh.refine_cells(&ids)
}

/// Adaptive cavity flow: Stokes with MG-CG solves, or Navier-Stokes with
/// Newton when a Reynolds number is set.
pub fn run_adaptive(cfg: &ExperimentConfig) -> Result<TableReport> {
    if cfg.is_navier_stokes() {
        run_adaptive_navier_stokes(cfg)
    } else {
        run_adaptive_stokes(cfg)
    }
}

/// Solve, estimate, refine the greedily selected cells, repeat. The first
/// mesh is `coarse_width` cells per axis at order `k`.
pub fn run_adaptive_stokes(cfg: &ExperimentConfig) -> Result<TableReport> {
    cfg.validate()?;
    if cfg.problem != ProblemTag::Cavity || cfg.is_navier_stokes() {
        return Err(Error::Config("adaptive Stokes runs use the Stokes cavity".into()));
    }
    let spec = cfg.problem_spec()?;
    let mut mesh = uniform_mesh(&spec, cfg.coarse_width, cfg.k)?;
    let mut prev: Option<(Level, Solution)> = None;
    let mut report = TableReport::new("adaptive", cfg);
    for r in 0..=cfg.refs {
        let hier = build_hierarchy(&mesh, cfg.k_coarse, cfg.skip_intermediate_p)?;
        let (h_levels, k_levels) = (hier.h_levels(), hier.p_levels());
        let mut levels = levels_for(hier.levels, &spec, &spec.form, cfg.delta_k())?;
        let fine = levels.last().expect("nonempty");
        let guess = match (&prev, cfg.guess) {
            (Some((pl, ps)), GuessPolicy::Previous | GuessPolicy::Both) => {
                let coarse = pl.mesh.embed_in(&fine.mesh)?;
                let t = transfer_solution(&coarse, &pl.form, &pl.dofmap, ps, &fine.mesh, &fine.dofmap)?;
                Some(fine.dofmap.restrict_free(&t.traces))
            }
            _ => None,
        };
        let vc = VCycle::new(&levels, cfg.smoother())?;
        let a = &fine.system.matrix;
        let b = &fine.system.rhs;
        let (x, rep) = pcg(a, b, &vc, guess.as_deref(), cfg.pcg_options())?;
        let zero = match cfg.guess {
            GuessPolicy::Both => Some(pcg(a, b, &vc, None, cfg.pcg_options())?.1),
            _ => None,
        };
        let sol = fine.system.solution(&fine.dofmap, &x)?;
        let errors = energy_errors(&fine.mesh, &fine.form, &fine.dofmap, &fine.system, &sol, None)?;
        let mut row = row_for(&fine.mesh, cfg.k, fine.system.n(), &rep);
        row.refinement = Some(r);
        row.energy_error = Some(total_error(&errors));
        row.zero_guess_iterations = zero.as_ref().map(|z| z.iterations);
        row.converged &= zero.as_ref().map_or(true, |z| z.converged);
        row.k_coarse = cfg.k_coarse;
        row.coarse_width = Some(cfg.coarse_width);
        row.h_levels = h_levels;
        row.k_levels = k_levels;
        report.rows.push(row);
        if r < cfg.refs {
            mesh = refine_greedy(&mesh, &errors, cfg.fraction)?;
        }
        prev = Some((levels.pop().expect("nonempty"), sol));
    }
    Ok(report)
}

/// Adaptive Navier-Stokes cavity: Newton on each mesh with a threshold that
/// tightens with the relative energy error of the previous mesh.
pub fn run_adaptive_navier_stokes(cfg: &ExperimentConfig) -> Result<TableReport> {
    cfg.validate()?;
    if cfg.problem != ProblemTag::Cavity || !cfg.is_navier_stokes() {
        return Err(Error::Config("adaptive Navier-Stokes runs use the cavity with a Reynolds number".into()));
    }
    let spec = cfg.problem_spec()?;
    let mut mesh = uniform_mesh(&spec, cfg.coarse_width, cfg.k)?;
    let mut prev: Option<(MeshTopology, NewtonOutcome)> = None;
    let mut report = TableReport::new("adaptive", cfg);
    for r in 0..=cfg.refs {
        let eps = newton_threshold(cfg, prev.as_ref().map(|p| p.1.relative_error()));
        let initial = match (&prev, cfg.guess) {
            (Some((pm, po)), GuessPolicy::Previous | GuessPolicy::Both) => {
                let dm = DofMap::new(&mesh, &spec.form, boundary(&spec), spec.pin)?;
                Some(transfer_solution(&pm.embed_in(&mesh)?, &spec.form, &po.dofmap, &po.solution, &mesh, &dm)?)
            }
            _ => None,
        };
        let opts = NewtonOptions {
            eps,
            max_steps: cfg.newton_max_steps,
            solver: NewtonSolver::Multigrid,
        };
        let out = newton_solve(cfg, &spec, &mesh, initial, &opts)?;
        let hier = build_hierarchy(&mesh, cfg.k_coarse, cfg.skip_intermediate_p)?;
        let (h_max, h_min) = mesh.h_range();
        report.rows.push(ReportRow {
            k: cfg.k,
            width: None,
            refinement: Some(r),
            h_max,
            h_min,
            elements: mesh.num_active(),
            energy_error: Some(out.relative_error()),
            iterations: out.total_iterations,
            zero_guess_iterations: None,
            per_step_iterations: Some(out.total_iterations as f64 / out.steps as f64),
            nonlinear_steps: Some(out.steps),
            k_coarse: cfg.k_coarse,
            coarse_width: Some(cfg.coarse_width),
            h_levels: hier.h_levels(),
            k_levels: hier.p_levels(),
            unknowns: out.unknowns,
            converged: out.converged,
        });
        let next = if r < cfg.refs {
            Some(refine_greedy(&mesh, &out.cell_errors, cfg.fraction)?)
        } else {
            None
        };
        prev = Some((mesh.clone(), out));
        if let Some(m) = next {
            mesh = m;
        }
    }
    Ok(report)
}

/// Runs the experiment selected by the configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<TableReport> {
    cfg.validate()?;
    if cfg.adaptive {
        run_adaptive(cfg)
    } else if cfg.two_grid != TwoGridMode::None {
        run_two_grid(cfg)
    } else {
        run_multilevel(cfg)
    }
}
