//! Command-line front end.
//!
//! Exit codes: 0 success or converged run, 1 error, 2 run stopped at the
//! iteration cap without converging (artifacts are still written), 64 usage
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis, IxDyn};

use crate::artifact_io::{
    dump_config, export_density_csv, parse_config, read_field, write_convergence_log, write_field, RunConfig,
    LOG_HEADER,
};
use crate::error::{Error, Result};
use crate::metric::Alpha;
use crate::problems::PresetId;
use crate::solver::{Algorithm, ReportRow, RunStatus, Solver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITERS: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "syncot",
    version,
    about = "Synchronized dynamical optimal transport solver",
    after_help = "Exit codes: 0 success, 1 error, 2 iteration cap reached without convergence, 64 usage error.\n\
                  Settings are resolved as command-line flags > config file > preset defaults."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the solver and write its artifacts.
    Solve(SolveArgs),
    /// List presets or print one as a canonical config.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
    /// Parse and check a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convert stored run outputs for plotting.
    Export(ExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum PresetsAction {
    List,
    Show { id: String },
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["config", "preset"]))]
pub struct SolveArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory (defaults to `output.dir` of the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// chambolle_pock, condat_vu, pdfp or yan.
    #[arg(long, value_parser = parse_algorithm)]
    pub alg: Option<Algorithm>,
    /// Grid shape `MxNxQ` (N = 1 for one spatial dimension).
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<[usize; 3]>,
    /// Weights `A1,A2` on the simplex.
    #[arg(long, value_parser = parse_alpha)]
    pub alpha: Option<Alpha>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Ignored in sequential builds.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Density,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Sot1,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory written by `solve`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// Destination directory (default: `<run>/export`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    Algorithm::parse(s).ok_or_else(|| format!("unknown algorithm `{s}`"))
}

fn parse_grid(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected MxNxQ, got `{s}`"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a grid size"))?;
    }
    Ok(out)
}

fn parse_alpha(s: &str) -> std::result::Result<Alpha, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected A1,A2, got `{s}`"));
    }
    let a: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    Alpha::new(a[0], a[1]).map_err(|e| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(&a, out),
        Command::Presets { action } => cmd_presets(&action, out),
        Command::Validate { config } => cmd_validate(&config, out),
        Command::Export(a) => cmd_export(&a, out).map(|()| EXIT_OK),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn cmd_presets(action: &PresetsAction, out: &mut dyn Write) -> Result<i32> {
    match action {
        PresetsAction::List => {
            for id in PresetId::ALL {
                writeln!(out, "{id}")?;
            }
        }
        PresetsAction::Show { id } => {
            let id = PresetId::parse(id)?;
            write!(out, "{}", dump_config(&RunConfig::from_preset(id)))?;
        }
    }
    Ok(EXIT_OK)
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(path)?;
    cfg.validate()?;
    writeln!(out, "{}: ok", path.display())?;
    Ok(EXIT_OK)
}

/// Resolves the effective configuration of a `solve` invocation.
pub fn resolve_solve_config(a: &SolveArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), None) => load_config(p)?,
        (None, Some(id)) => RunConfig::from_preset(PresetId::parse(id)?),
        _ => return Err(Error::Config("exactly one of --config and --preset is required".into())),
    };
    if let Some(alg) = a.alg {
        cfg.solver.algorithm = alg;
    }
    if let Some(shape) = a.grid {
        cfg.shape = shape;
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    if let Some(n) = a.max_iters {
        cfg.solver.max_iters = n;
    }
    if let Some(t) = a.tol {
        cfg.solver.stop_tol = t;
    }
    if let Some(s) = a.seed {
        cfg.solver.seed = s;
    }
    if let Some(dir) = &a.out {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    cfg.solver.validate()?;
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    {
        // A second build in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<i32> {
    configure_threads(a.threads)?;
    let cfg = resolve_solve_config(a)?;
    let problem = cfg.problem_spec()?.build()?;
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), dump_config(&cfg))?;

    let stride = cfg.output.snapshot_stride;
    let snap_dir = dir.join("snapshots");
    if stride > 0 {
        fs::create_dir_all(&snap_dir)?;
    }
    let mut snap_err: Option<Error> = None;
    let mut observer = |row: &ReportRow, u: &crate::grid::StaggeredField| {
        if stride > 0 && row.iter.is_multiple_of(stride) && snap_err.is_none() {
            let p = snap_dir.join(format!("rho_iter{:06}.sot1", row.iter));
            if let Err(e) = write_field(p, u.rho.view().into_dyn()) {
                snap_err = Some(e);
            }
        }
    };
    let solver = Solver::new(&problem, cfg.solver.clone())?;
    let (u, report) = solver.run(Some(&mut observer));
    if let Some(e) = snap_err {
        return Err(e);
    }

    write_convergence_log(dir.join("convergence.csv"), &report)?;
    write_field(dir.join("rho_final.sot1"), u.rho.view().into_dyn())?;
    write_field(dir.join("m_final.sot1"), u.m.view().into_dyn())?;
    if let Some(n) = &u.n {
        write_field(dir.join("n_final.sot1"), n.view().into_dyn())?;
    }
    let c = &problem.coupling;
    let pts = Array2::from_shape_vec((c.n_secondary(), c.codomain_dim()), c.points().to_vec())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    write_field(dir.join("secondary_points.sot1"), pts.view().into_dyn())?;

    if let Some(last) = report.rows.last() {
        writeln!(out, "iterations {} cost_total {:.8e} status {}", report.iterations, last.cost_total, status_name(&report.status))?;
    }
    match report.status {
        RunStatus::Converged => Ok(EXIT_OK),
        RunStatus::MaxIters => Ok(EXIT_MAX_ITERS),
        RunStatus::Error(msg) => Err(Error::Numerical(msg)),
    }
}

fn status_name(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::MaxIters => "max_iters",
        RunStatus::Error(_) => "error",
    }
}

/// Reads a convergence log into a `(rows, columns)` table. The `h_value`
/// column is dropped when it is empty, as it is for Monge runs.
pub fn read_convergence_table(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(Error::Format(format!("{}:{}: expected 7 columns", path.display(), i + 2)));
        }
        let row = cells
            .iter()
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse::<f64>().map(Some) })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 2)))?;
        rows.push(row);
    }
    let drop_h = rows.iter().all(|r| r[4].is_none());
    let ncols = if drop_h { 6 } else { 7 };
    let mut flat = Vec::with_capacity(rows.len() * ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            if drop_h && j == 4 {
                continue;
            }
            flat.push(v.ok_or_else(|| Error::Format(format!("{}:{}: missing value", path.display(), i + 2)))?);
        }
    }
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::Format(e.to_string()))
}

fn cmd_export(a: &ExportArgs, out: &mut dyn Write) -> Result<()> {
    let dest = a.out.clone().unwrap_or_else(|| a.run.join("export"));
    let written: Vec<PathBuf> = match a.what {
        ExportWhat::Density => {
            let rho = read_field(a.run.join("rho_final.sot1"))?;
            match a.format {
                ExportFormat::Csv => export_density_csv(&dest, rho.view())?,
                ExportFormat::Sot1 => {
                    if rho.ndim() != 3 {
                        return Err(Error::Format("density field must have rank 3".into()));
                    }
                    fs::create_dir_all(&dest)?;
                    let mut paths = Vec::new();
                    for (k, slab) in rho.axis_iter(Axis(2)).enumerate() {
                        let p = dest.join(format!("density_t{k:03}.sot1"));
                        write_field(&p, slab.into_dimensionality::<IxDyn>().expect("dynamic view"))?;
                        paths.push(p);
                    }
                    paths
                }
            }
        }
        ExportWhat::Log => {
            let src = a.run.join("convergence.csv");
            fs::create_dir_all(&dest)?;
            match a.format {
                ExportFormat::Csv => {
                    let text = fs::read(&src).map_err(|e| Error::Input(format!("{}: {e}", src.display())))?;
                    let p = dest.join("convergence.csv");
                    fs::write(&p, text)?;
                    vec![p]
                }
                ExportFormat::Sot1 => {
                    let table = read_convergence_table(&src)?;
                    let p = dest.join("convergence.sot1");
                    write_field(&p, table.view().into_dyn())?;
                    vec![p]
                }
            }
        }
    };
    for p in written {
        writeln!(out, "{}", p.display())?;
    }
    Ok(())
}
