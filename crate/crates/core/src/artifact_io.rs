//! Run configuration, SOT1 field files and CSV outputs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};

use crate::discrete_ot::Epsilon;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::metric::{Alpha, ColormapName, MapSpec, ScalarField, TabulatedMap, COLORMAP_FD_STEP};
use crate::problems::{load_preset, MarginalSpec, PresetId, ProblemSpec};
use crate::solver::{Algorithm, ConvergenceReport, SolverConfig, StepSize};

pub const FIELD_MAGIC: &[u8; 4] = b"SOT1";
pub const FIELD_VERSION: u32 = 1;
pub const LOG_HEADER: &str = "iter,cost_total,cost_primary,cost_secondary,h_value,div_residual_max,rel_change";

// ---------------------------------------------------------------- fields

pub fn encode_field(a: ArrayViewD<'_, f64>) -> Result<Vec<u8>> {
    if a.ndim() == 0 || a.ndim() > u8::MAX as usize {
        return Err(Error::Format(format!("field rank must be in 1..=255, got {}", a.ndim())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("field contains non-finite values".into()));
    }
    let mut out = Vec::with_capacity(9 + 4 * a.ndim() + 8 * a.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.push(a.ndim() as u8);
    for &d in a.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in a.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<ArrayD<f64>> {
    let bad = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 9 || &bytes[..4] != FIELD_MAGIC {
        return Err(bad("missing SOT1 magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported field version {version}")));
    }
    let rank = bytes[8] as usize;
    if rank == 0 {
        return Err(bad("field rank must be positive"));
    }
    let header = 9 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated field header"));
    }
    let dims: Vec<usize> = bytes[9..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| bad("field too large"))?;
    let payload = &bytes[header..];
    if payload.len() != len * 8 {
        return Err(Error::Format(format!("payload has {} bytes, dims {dims:?} need {}", payload.len(), len * 8)));
    }
    let data: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_field(path: impl AsRef<Path>, a: ArrayViewD<'_, f64>) -> Result<()> {
    let bytes = encode_field(a)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_field(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Writes each time slice of a `(M, N, K)` field as `density_tKKK.csv`
/// (rows over `x`, columns over `y`, 17 significant digits).
pub fn export_density_csv(dir: impl AsRef<Path>, rho: ArrayViewD<'_, f64>) -> Result<Vec<PathBuf>> {
    if rho.ndim() != 3 {
        return Err(Error::Format(format!("density export needs a rank-3 field, got rank {}", rho.ndim())));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (k, slab) in rho.axis_iter(Axis(2)).enumerate() {
        let mut s = String::new();
        for row in slab.axis_iter(Axis(0)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        let p = dir.join(format!("density_t{k:03}.csv"));
        fs::write(&p, s)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reads one exported slice back into a 2D array.
pub fn read_density_csv(path: impl AsRef<Path>) -> Result<ndarray::Array2<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{}: ragged rows", path.display())));
    }
    let nrows = rows.len();
    ndarray::Array2::from_shape_vec((nrows, ncols), rows.concat()).map_err(|e| Error::Format(e.to_string()))
}

// ---------------------------------------------------------------- logs

pub fn format_convergence_log(report: &ConvergenceReport) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in &report.rows {
        let h = r.h_value.map_or(String::new(), |h| format!("{h:?}"));
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{},{:?},{:?}",
            r.iter, r.cost_total, r.cost_primary, r.cost_secondary, h, r.div_residual_max, r.rel_change
        );
    }
    s
}

pub fn write_convergence_log(path: impl AsRef<Path>, report: &ConvergenceReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_convergence_log(report).as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------- config

/// Where the map comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSource {
    Builtin(MapSpec),
    /// A rank-3 SOT1 table `(nx, ny, codomain_dim)` sampled on the unit square.
    TabulatedFile { path: PathBuf, fd_step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write intermediate density snapshots every this many iterations (0: none).
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("run"), snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<PresetId>,
    pub spatial_dim: usize,
    pub shape: [usize; 3],
    pub initial: MarginalSpec,
    pub terminal: MarginalSpec,
    pub map: MapSource,
    pub alpha: Alpha,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            spatial_dim: 2,
            shape: [32, 32, 16],
            initial: MarginalSpec::gaussian(0.3, 0.3, 0.1),
            terminal: MarginalSpec::gaussian(0.7, 0.7, 0.1),
            map: MapSource::Builtin(MapSpec::Identity),
            alpha: Alpha::new(1.0, 0.0).expect("valid weights"),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_preset(id: PresetId) -> Self {
        let p = load_preset(id);
        let g = p.problem.grid;
        Self {
            preset: Some(id),
            spatial_dim: g.spatial_dim(),
            shape: [g.m(), g.n(), g.q()],
            initial: p.problem.initial,
            terminal: p.problem.terminal,
            map: MapSource::Builtin(p.problem.map),
            alpha: p.problem.alpha,
            solver: p.solver,
            output: OutputConfig::default(),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let [m, n, q] = self.shape;
        GridSpec::new(self.spatial_dim, m, n, q)
    }

    /// Resolves files and builds the problem description.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let map = match &self.map {
            MapSource::Builtin(m) => m.clone(),
            MapSource::TabulatedFile { path, fd_step } => {
                let a = read_field(path)?;
                if a.ndim() != 3 {
                    return Err(Error::Format(format!("{}: map table must have rank 3", path.display())));
                }
                let (nx, ny, c) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let values = a.iter().copied().collect();
                MapSpec::Tabulated { table: TabulatedMap::new(nx, ny, c, values)?, fd_step: *fd_step }
            }
        };
        Ok(ProblemSpec {
            grid: self.grid()?,
            initial: self.initial.clone(),
            terminal: self.terminal.clone(),
            map,
            alpha: self.alpha,
        })
    }

    /// Cross-field checks that do not need file access.
    pub fn validate(&self) -> Result<()> {
        let g = self.grid()?;
        if let MapSource::Builtin(m) = &self.map {
            m.validate(g.spatial_dim())?;
        }
        for m in [&self.initial, &self.terminal] {
            if let MarginalSpec::TruncatedGaussian { x0, y0, sigma } = *m {
                if !(sigma > 0.0 && sigma.is_finite() && x0.is_finite() && y0.is_finite()) {
                    return Err(Error::Config("gaussian marginal needs finite center and positive sigma".into()));
                }
            }
        }
        if let MapSource::TabulatedFile { fd_step, .. } = self.map {
            if !(fd_step > 0.0) {
                return Err(Error::Config("problem.map.fd_step must be positive".into()));
            }
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Num(f64),
    /// A token that is an exact unsigned integer.
    Int(u64),
    Bool(bool),
    List(Vec<f64>),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Str(_) => "string",
            Value::Num(_) | Value::Int(_) => "number",
            Value::Bool(_) => "boolean",
            Value::List(_) => "list",
        }
    }
}

fn parse_value(raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err("missing value".into());
    }
    if let Some(inner) = raw.strip_prefix('"') {
        let s = inner.strip_suffix('"').ok_or("unterminated string")?;
        if s.contains('"') {
            return Err("embedded quote in string".into());
        }
        return Ok(Value::Str(s.to_string()));
    }
    if let Some(inner) = raw.strip_prefix('[') {
        let body = inner.strip_suffix(']').ok_or("unterminated list")?;
        if body.trim().is_empty() {
            return Ok(Value::List(vec![]));
        }
        let items = body
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("list entry `{}` is not a number", t.trim())))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        return Ok(Value::List(items));
    }
    match raw {
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    if let Ok(i) = raw.parse::<u64>() {
        return Ok(Value::Int(i));
    }
    if let Ok(x) = raw.parse::<f64>() {
        return Ok(Value::Num(x));
    }
    if raw.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' || c == '/') {
        return Ok(Value::Str(raw.to_string()));
    }
    Err(format!("cannot parse value `{raw}`"))
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

struct Entry {
    line: usize,
    key: String,
    value: Value,
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: "expected `key = value`".into() })?;
        let key = k.trim().to_string();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Parse { line, msg: format!("invalid key `{key}`") });
        }
        if let Some(prev) = seen.insert(key.clone(), line) {
            return Err(Error::Parse { line, msg: format!("duplicate key `{key}` (first set on line {prev})") });
        }
        let value = parse_value(v).map_err(|msg| Error::Parse { line, msg: format!("{key}: {msg}") })?;
        out.push(Entry { line, key, value });
    }
    Ok(out)
}

fn want_num(e: &Entry) -> std::result::Result<f64, String> {
    match e.value {
        Value::Num(x) if x.is_finite() => Ok(x),
        Value::Int(i) => Ok(i as f64),
        Value::Num(_) => Err(format!("{} must be finite", e.key)),
        ref v => Err(format!("{} expects a number, got a {}", e.key, v.kind())),
    }
}

fn want_u64(e: &Entry) -> std::result::Result<u64, String> {
    match e.value {
        Value::Int(i) => Ok(i),
        Value::Num(x) if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 => Ok(x as u64),
        Value::Num(x) => Err(format!("{} expects a nonnegative integer, got {x}", e.key)),
        ref v => Err(format!("{} expects a nonnegative integer, got a {}", e.key, v.kind())),
    }
}

fn want_uint(e: &Entry) -> std::result::Result<usize, String> {
    let x = want_u64(e)?;
    if x > u32::MAX as u64 {
        return Err(format!("{} is too large: {x}", e.key));
    }
    Ok(x as usize)
}

fn want_str(e: &Entry) -> std::result::Result<&str, String> {
    match &e.value {
        Value::Str(s) => Ok(s),
        v => Err(format!("{} expects a string, got a {}", e.key, v.kind())),
    }
}

fn want_bool(e: &Entry) -> std::result::Result<bool, String> {
    match e.value {
        Value::Bool(b) => Ok(b),
        ref v => Err(format!("{} expects a boolean, got a {}", e.key, v.kind())),
    }
}

fn want_list(e: &Entry, len: usize) -> std::result::Result<Vec<f64>, String> {
    match &e.value {
        Value::List(l) if l.len() == len && l.iter().all(|x| x.is_finite()) => Ok(l.clone()),
        Value::List(l) => Err(format!("{} expects {len} finite numbers, got {}", e.key, l.len())),
        v => Err(format!("{} expects a list, got a {}", e.key, v.kind())),
    }
}

fn want_step(e: &Entry) -> std::result::Result<StepSize, String> {
    match &e.value {
        Value::Str(s) if s == "auto" => Ok(StepSize::Auto),
        _ => {
            let x = want_num(e)?;
            if x <= 0.0 {
                return Err(format!("{} must be positive or \"auto\"", e.key));
            }
            Ok(StepSize::Value(x))
        }
    }
}

fn set_marginal(m: &mut MarginalSpec, field: &str, e: &Entry) -> std::result::Result<(), String> {
    match field {
        "kind" => {
            *m = match want_str(e)? {
                "truncated_gaussian" => match m {
                    MarginalSpec::TruncatedGaussian { .. } => m.clone(),
                    MarginalSpec::FromFile(_) => MarginalSpec::gaussian(0.5, 0.5, 0.1),
                },
                "from_file" => match m {
                    MarginalSpec::FromFile(_) => m.clone(),
                    MarginalSpec::TruncatedGaussian { .. } => MarginalSpec::FromFile(PathBuf::new()),
                },
                other => return Err(format!("unknown marginal kind `{other}`")),
            };
        }
        "center" | "sigma" => {
            let MarginalSpec::TruncatedGaussian { x0, y0, sigma } = m else {
                return Err(format!("{} only applies to truncated_gaussian marginals", e.key));
            };
            if field == "center" {
                let c = want_list(e, 2)?;
                (*x0, *y0) = (c[0], c[1]);
            } else {
                *sigma = want_num(e)?;
                if *sigma <= 0.0 {
                    return Err(format!("{} must be positive", e.key));
                }
            }
        }
        "path" => {
            let MarginalSpec::FromFile(p) = m else {
                return Err(format!("{} only applies to from_file marginals", e.key));
            };
            *p = PathBuf::from(want_str(e)?);
        }
        _ => return Err(format!("unknown key `{}`", e.key)),
    }
    Ok(())
}

fn map_kind(name: &str) -> Option<MapSpec> {
    Some(match name {
        "identity" => MapSpec::Identity,
        "quadratic" => MapSpec::Quadratic,
        "sigmoid" => MapSpec::Sigmoid,
        "surface_gaussian_bump" => MapSpec::SurfaceGaussianBump { sigma: 0.15 },
        "surface_sine" => MapSpec::SurfaceSine,
        "surface_cos_radial" => MapSpec::SurfaceCosRadial,
        "colormap" => MapSpec::colormap(ColormapName::Magma, ScalarField::GaussianBump),
        _ => return None,
    })
}

fn map_kind_name(m: &MapSource) -> &'static str {
    match m {
        MapSource::TabulatedFile { .. } => "tabulated",
        MapSource::Builtin(spec) => match spec {
            MapSpec::Identity => "identity",
            MapSpec::Quadratic => "quadratic",
            MapSpec::Sigmoid => "sigmoid",
            MapSpec::SurfaceGaussianBump { .. } => "surface_gaussian_bump",
            MapSpec::SurfaceSine => "surface_sine",
            MapSpec::SurfaceCosRadial => "surface_cos_radial",
            MapSpec::Colormap { .. } => "colormap",
            MapSpec::Tabulated { .. } => "tabulated",
        },
    }
}

fn set_map(m: &mut MapSource, field: &str, e: &Entry) -> std::result::Result<(), String> {
    match field {
        "kind" => {
            let name = want_str(e)?;
            if name == map_kind_name(m) {
                return Ok(());
            }
            *m = if name == "tabulated" {
                MapSource::TabulatedFile { path: PathBuf::new(), fd_step: COLORMAP_FD_STEP }
            } else {
                MapSource::Builtin(map_kind(name).ok_or_else(|| format!("unknown map kind `{name}`"))?)
            };
        }
        "sigma" => match m {
            MapSource::Builtin(MapSpec::SurfaceGaussianBump { sigma }) => {
                *sigma = want_num(e)?;
                if *sigma <= 0.0 {
                    return Err(format!("{} must be positive", e.key));
                }
            }
            _ => return Err(format!("{} only applies to surface_gaussian_bump", e.key)),
        },
        "colormap" | "scalar_field" => {
            let MapSource::Builtin(MapSpec::Colormap { name, field: f, .. }) = m else {
                return Err(format!("{} only applies to colormap maps", e.key));
            };
            let s = want_str(e)?;
            if field == "colormap" {
                *name = ColormapName::parse(s).ok_or_else(|| format!("unknown colormap `{s}`"))?;
            } else {
                *f = ScalarField::parse(s).ok_or_else(|| format!("unknown scalar field `{s}`"))?;
            }
        }
        "fd_step" => {
            let x = want_num(e)?;
            if x <= 0.0 {
                return Err(format!("{} must be positive", e.key));
            }
            match m {
                MapSource::Builtin(MapSpec::Colormap { fd_step, .. }) | MapSource::TabulatedFile { fd_step, .. } => {
                    *fd_step = x
                }
                _ => return Err(format!("{} only applies to colormap or tabulated maps", e.key)),
            }
        }
        "path" => {
            let MapSource::TabulatedFile { path, .. } = m else {
                return Err(format!("{} only applies to tabulated maps", e.key));
            };
            *path = PathBuf::from(want_str(e)?);
        }
        _ => return Err(format!("unknown key `{}`", e.key)),
    }
    Ok(())
}

fn apply(cfg: &mut RunConfig, e: &Entry) -> std::result::Result<(), String> {
    let s = &mut cfg.solver;
    match e.key.as_str() {
        "preset" => {}
        "grid.spatial_dim" => {
            cfg.spatial_dim = want_uint(e)?;
            if !(1..=2).contains(&cfg.spatial_dim) {
                return Err("grid.spatial_dim must be 1 or 2".into());
            }
        }
        "grid.shape" => {
            let l = want_list(e, 3)?;
            if l.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                return Err("grid.shape entries must be positive integers".into());
            }
            cfg.shape = [l[0] as usize, l[1] as usize, l[2] as usize];
        }
        "problem.alpha" => {
            let l = want_list(e, 2)?;
            cfg.alpha = Alpha::new(l[0], l[1]).map_err(|err| err.to_string())?;
        }
        "solver.algorithm" => {
            let name = want_str(e)?;
            s.algorithm = Algorithm::parse(name).ok_or_else(|| format!("unknown algorithm `{name}`"))?;
        }
        "solver.tau" => s.tau = want_step(e)?,
        "solver.sigma" => s.sigma = want_step(e)?,
        "solver.theta" => s.theta = want_num(e)?,
        "solver.max_iters" => s.max_iters = want_uint(e)?,
        "solver.stop_tol" => s.stop_tol = want_num(e)?,
        "solver.stop_window" => s.stop_window = want_uint(e)?,
        "solver.log_every" => s.log_every = want_uint(e)?,
        "solver.seed" => s.seed = want_u64(e)?,
        "solver.lipschitz" => {
            s.lipschitz = match &e.value {
                Value::Str(a) if a == "auto" => None,
                _ => Some(want_num(e)?),
            }
        }
        "solver.sinkhorn.epsilon" => s.sinkhorn.epsilon = Epsilon::Absolute(want_num(e)?),
        "solver.sinkhorn.epsilon_scale" => s.sinkhorn.epsilon = Epsilon::RelativeToMaxCost(want_num(e)?),
        "solver.sinkhorn.max_iters" => s.sinkhorn.max_iters = want_uint(e)?,
        "solver.sinkhorn.tol" => s.sinkhorn.tol = want_num(e)?,
        "solver.sinkhorn.epsilon_scaling" => s.sinkhorn.epsilon_scaling = want_bool(e)?,
        "solver.sinkhorn.overrelaxation" => s.sinkhorn.overrelaxation = want_num(e)?,
        "solver.sinkhorn.warm_iters" => {
            s.sinkhorn_warm_iters = match &e.value {
                Value::Str(a) if a == "none" => None,
                _ => Some(want_uint(e)?),
            }
        }
        "output.dir" => cfg.output.dir = PathBuf::from(want_str(e)?),
        "output.snapshot_stride" => cfg.output.snapshot_stride = want_uint(e)?,
        k => {
            if let Some(f) = k.strip_prefix("problem.initial.") {
                return set_marginal(&mut cfg.initial, f, e);
            }
            if let Some(f) = k.strip_prefix("problem.terminal.") {
                return set_marginal(&mut cfg.terminal, f, e);
            }
            if let Some(f) = k.strip_prefix("problem.map.") {
                return set_map(&mut cfg.map, f, e);
            }
            return Err(format!("unknown key `{k}`"));
        }
    }
    Ok(())
}

/// Parses `dotted.key = value` text. A `preset` key is expanded first, then
/// the remaining keys override it in file order.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let entries = tokenize(text)?;
    let mut cfg = match entries.iter().find(|e| e.key == "preset") {
        Some(e) => {
            let name = want_str(e).map_err(|msg| Error::Parse { line: e.line, msg })?;
            let id = PresetId::parse(name).map_err(|err| Error::Parse { line: e.line, msg: err.to_string() })?;
            RunConfig::from_preset(id)
        }
        None => RunConfig::default(),
    };
    for e in &entries {
        apply(&mut cfg, e).map_err(|msg| Error::Parse { line: e.line, msg })?;
    }
    if let Err(err) = cfg.validate() {
        let line = entries.last().map_or(1, |e| e.line);
        return Err(Error::Parse { line, msg: err.to_string() });
    }
    Ok(cfg)
}

fn fmt_step(s: StepSize) -> String {
    match s {
        StepSize::Auto => "\"auto\"".into(),
        StepSize::Value(v) => format!("{v:?}"),
    }
}

fn fmt_marginal(out: &mut String, which: &str, m: &MarginalSpec) {
    match m {
        MarginalSpec::TruncatedGaussian { x0, y0, sigma } => {
            let _ = writeln!(out, "problem.{which}.kind = \"truncated_gaussian\"");
            let _ = writeln!(out, "problem.{which}.center = [{x0:?}, {y0:?}]");
            let _ = writeln!(out, "problem.{which}.sigma = {sigma:?}");
        }
        MarginalSpec::FromFile(p) => {
            let _ = writeln!(out, "problem.{which}.kind = \"from_file\"");
            let _ = writeln!(out, "problem.{which}.path = \"{}\"", p.display());
        }
    }
}

/// Canonical dump: every key, fixed order, shortest round-trip floats.
pub fn dump_config(cfg: &RunConfig) -> String {
    let mut o = String::new();
    if let Some(p) = cfg.preset {
        let _ = writeln!(o, "preset = \"{p}\"");
    }
    let _ = writeln!(o, "grid.spatial_dim = {}", cfg.spatial_dim);
    let _ = writeln!(o, "grid.shape = [{}, {}, {}]", cfg.shape[0], cfg.shape[1], cfg.shape[2]);
    fmt_marginal(&mut o, "initial", &cfg.initial);
    fmt_marginal(&mut o, "terminal", &cfg.terminal);
    let _ = writeln!(o, "problem.map.kind = \"{}\"", map_kind_name(&cfg.map));
    match &cfg.map {
        MapSource::Builtin(MapSpec::SurfaceGaussianBump { sigma }) => {
            let _ = writeln!(o, "problem.map.sigma = {sigma:?}");
        }
        MapSource::Builtin(MapSpec::Colormap { name, field, fd_step }) => {
            let _ = writeln!(o, "problem.map.colormap = \"{}\"", name.as_str());
            let _ = writeln!(o, "problem.map.scalar_field = \"{}\"", field.as_str());
            let _ = writeln!(o, "problem.map.fd_step = {fd_step:?}");
        }
        MapSource::TabulatedFile { path, fd_step } => {
            let _ = writeln!(o, "problem.map.path = \"{}\"", path.display());
            let _ = writeln!(o, "problem.map.fd_step = {fd_step:?}");
        }
        _ => {}
    }
    let _ = writeln!(o, "problem.alpha = [{:?}, {:?}]", cfg.alpha.primary, cfg.alpha.secondary);
    let s = &cfg.solver;
    let _ = writeln!(o, "solver.algorithm = \"{}\"", s.algorithm.as_str());
    let _ = writeln!(o, "solver.tau = {}", fmt_step(s.tau));
    let _ = writeln!(o, "solver.sigma = {}", fmt_step(s.sigma));
    let _ = writeln!(o, "solver.theta = {:?}", s.theta);
    let _ = writeln!(o, "solver.max_iters = {}", s.max_iters);
    let _ = writeln!(o, "solver.stop_tol = {:?}", s.stop_tol);
    let _ = writeln!(o, "solver.stop_window = {}", s.stop_window);
    let _ = writeln!(o, "solver.log_every = {}", s.log_every);
    let _ = writeln!(o, "solver.seed = {}", s.seed);
    match s.lipschitz {
        Some(l) => writeln!(o, "solver.lipschitz = {l:?}"),
        None => writeln!(o, "solver.lipschitz = \"auto\""),
    }
    .ok();
    match s.sinkhorn.epsilon {
        Epsilon::Absolute(e) => writeln!(o, "solver.sinkhorn.epsilon = {e:?}"),
        Epsilon::RelativeToMaxCost(e) => writeln!(o, "solver.sinkhorn.epsilon_scale = {e:?}"),
    }
    .ok();
    let _ = writeln!(o, "solver.sinkhorn.max_iters = {}", s.sinkhorn.max_iters);
    let _ = writeln!(o, "solver.sinkhorn.tol = {:?}", s.sinkhorn.tol);
    let _ = writeln!(o, "solver.sinkhorn.epsilon_scaling = {}", s.sinkhorn.epsilon_scaling);
    let _ = writeln!(o, "solver.sinkhorn.overrelaxation = {:?}", s.sinkhorn.overrelaxation);
    match s.sinkhorn_warm_iters {
        Some(w) => writeln!(o, "solver.sinkhorn.warm_iters = {w}"),
        None => writeln!(o, "solver.sinkhorn.warm_iters = \"none\""),
    }
    .ok();
    let _ = writeln!(o, "output.dir = \"{}\"", cfg.output.dir.display());
    let _ = writeln!(o, "output.snapshot_stride = {}", cfg.output.snapshot_stride);
    o
}
