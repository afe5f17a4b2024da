//! Secondary-space maps, their Jacobians, and the per-cell metric
//! `A = a1 I + a2 J^T J` that turns the synchronized Monge problem into a
//! single-space transport problem with an anisotropic kinetic energy.

use std::sync::OnceLock;

use ndarray::Array3;

use crate::colormap_data::{CIVIDIS, MAGMA};
use crate::error::{config, Error, Result};
use crate::grid::{CenteredField, GridSpec};

/// Tolerance on `a1 + a2 = 1`.
pub const ALPHA_SUM_TOL: f64 = 1e-12;

/// Weights `(a1, a2)` on the primary and secondary kinetic energies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha {
    pub primary: f64,
    pub secondary: f64,
}

impl Alpha {
    pub fn new(primary: f64, secondary: f64) -> Result<Self> {
        if !(primary.is_finite() && secondary.is_finite()) || primary < 0.0 || secondary < 0.0 {
            return config(format!("alpha weights must be nonnegative, got [{primary}, {secondary}]"));
        }
        if (primary + secondary - 1.0).abs() > ALPHA_SUM_TOL {
            return config(format!(
                "alpha must lie on the simplex (a1 + a2 = 1), got [{primary}, {secondary}]"
            ));
        }
        Ok(Self { primary, secondary })
    }
}

/// Matplotlib colormaps embedded as 256-entry lookup tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColormapName {
    Magma,
    Cividis,
}

impl ColormapName {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Magma => "magma",
            Self::Cividis => "cividis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "magma" => Some(Self::Magma),
            "cividis" => Some(Self::Cividis),
            _ => None,
        }
    }

    fn table(&self) -> &'static [[f64; 3]; 256] {
        match self {
            Self::Magma => &MAGMA,
            Self::Cividis => &CIVIDIS,
        }
    }

    /// RGB at `v` in `[0, 1]` (clamped), linearly interpolated between entries.
    pub fn rgb(&self, v: f64) -> [f64; 3] {
        let t = self.table();
        let pos = v.clamp(0.0, 1.0) * 255.0;
        let i = (pos.floor() as usize).min(254);
        let w = pos - i as f64;
        let (a, b) = (t[i], t[i + 1]);
        [
            a[0] + w * (b[0] - a[0]),
            a[1] + w * (b[1] - a[1]),
            a[2] + w * (b[2] - a[2]),
        ]
    }
}

/// Scalar fields painted through a colormap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarField {
    /// `exp(-((x-0.5)^2 + (y-0.5)^2) / 0.15^2)`
    GaussianBump,
    /// `sin^10(6x) + cos(10 + 36xy) cos(6x)`
    Waves,
}

impl ScalarField {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GaussianBump => "gaussian_bump",
            Self::Waves => "waves",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian_bump" => Some(Self::GaussianBump),
            "waves" => Some(Self::Waves),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::GaussianBump => (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.0225).exp(),
            Self::Waves => (6.0 * x).sin().powi(10) + (10.0 + 36.0 * x * y).cos() * (6.0 * x).cos(),
        }
    }

    /// Range used to normalize the field before colormapping: the extrema
    /// over a 1025 x 1025 node sampling of the unit square.
    pub fn range(&self) -> (f64, f64) {
        static BUMP: OnceLock<(f64, f64)> = OnceLock::new();
        static WAVES: OnceLock<(f64, f64)> = OnceLock::new();
        let cell = match self {
            Self::GaussianBump => &BUMP,
            Self::Waves => &WAVES,
        };
        *cell.get_or_init(|| {
            let k = 1024;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..=k {
                for j in 0..=k {
                    let v = self.eval(i as f64 / k as f64, j as f64 / k as f64);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            (lo, hi)
        })
    }
}

/// A map sampled on the nodes `i / (nx - 1)` (and `j / (ny - 1)`) of the unit
/// square, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedMap {
    pub nx: usize,
    /// 1 for maps of one spatial variable.
    pub ny: usize,
    pub codomain_dim: usize,
    /// Row-major `(nx, ny, codomain_dim)`.
    pub values: Vec<f64>,
}

impl TabulatedMap {
    pub fn new(nx: usize, ny: usize, codomain_dim: usize, values: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny == 0 || codomain_dim == 0 {
            return config("tabulated map needs at least two nodes per axis and a codomain");
        }
        if values.len() != nx * ny * codomain_dim {
            return config(format!(
                "tabulated map payload has {} values, expected {}",
                values.len(),
                nx * ny * codomain_dim
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return config("tabulated map values must be finite");
        }
        Ok(Self { nx, ny, codomain_dim, values })
    }

    fn node(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.ny + j) * self.codomain_dim;
        &self.values[o..o + self.codomain_dim]
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        const SLACK: f64 = 1e-12;
        let locate = |t: f64, n: usize| -> Result<(usize, f64)> {
            if !(-SLACK..=1.0 + SLACK).contains(&t) {
                return Err(Error::Domain(format!("tabulated map queried at {t}, outside [0, 1]")));
            }
            if n == 1 {
                return Ok((0, 0.0));
            }
            let pos = t.clamp(0.0, 1.0) * (n - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            Ok((i, pos - i as f64))
        };
        let (i, wx) = locate(x[0], self.nx)?;
        let (j, wy) = if self.ny > 1 { locate(x[1], self.ny)? } else { (0, 0.0) };
        let j1 = if self.ny > 1 { j + 1 } else { j };
        let (a, b, c, d) = (self.node(i, j), self.node(i + 1, j), self.node(i, j1), self.node(i + 1, j1));
        Ok((0..self.codomain_dim)
            .map(|r| {
                (1.0 - wx) * (1.0 - wy) * a[r] + wx * (1.0 - wy) * b[r] + (1.0 - wx) * wy * c[r] + wx * wy * d[r]
            })
            .collect())
    }
}

/// The map `T` from the primary space into a secondary space.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    Identity,
    /// `x -> x^2` componentwise.
    Quadratic,
    /// `x -> 1 / (1 + exp(-10 (x - 0.5)))` componentwise.
    Sigmoid,
    /// `(x, y) -> (x, y, exp(-((x-0.5)^2 + (y-0.5)^2) / (2 sigma^2)))`.
    SurfaceGaussianBump { sigma: f64 },
    /// `(x, y) -> (x, y, sin(2 pi x) sin(2 pi y))`.
    SurfaceSine,
    /// `(x, y) -> (x, y, -0.5 cos(5 sqrt(x^5 + y^5)))`.
    SurfaceCosRadial,
    /// RGB of a colormap applied to a normalized scalar field.
    Colormap { name: ColormapName, field: ScalarField, fd_step: f64 },
    Tabulated { table: TabulatedMap, fd_step: f64 },
}

/// Finite-difference step used for the colormap Jacobians.
pub const COLORMAP_FD_STEP: f64 = 1.0 / 512.0;

impl MapSpec {
    pub fn colormap(name: ColormapName, field: ScalarField) -> Self {
        Self::Colormap { name, field, fd_step: COLORMAP_FD_STEP }
    }

    /// Dimension of the secondary space for a primary space of `spatial_dim`.
    pub fn codomain_dim(&self, spatial_dim: usize) -> usize {
        match self {
            Self::Identity | Self::Quadratic | Self::Sigmoid => spatial_dim,
            Self::SurfaceGaussianBump { .. } | Self::SurfaceSine | Self::SurfaceCosRadial => 3,
            Self::Colormap { .. } => 3,
            Self::Tabulated { table, .. } => table.codomain_dim,
        }
    }

    /// Checks parameters and compatibility with a primary space dimension.
    pub fn validate(&self, spatial_dim: usize) -> Result<()> {
        match self {
            Self::SurfaceGaussianBump { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                config(format!("bump width must be positive, got {sigma}"))
            }
            Self::SurfaceGaussianBump { .. } | Self::SurfaceSine | Self::SurfaceCosRadial | Self::Colormap { .. }
                if spatial_dim != 2 =>
            {
                config("surface and colormap maps need a two-dimensional primary space")
            }
            Self::Colormap { fd_step, .. } | Self::Tabulated { fd_step, .. } if !(*fd_step > 0.0) => {
                config("finite-difference step must be positive")
            }
            Self::Tabulated { table, .. } if (table.ny > 1) != (spatial_dim == 2) => {
                config("tabulated map dimension does not match the primary space")
            }
            _ => Ok(()),
        }
    }

    fn fd_step(&self) -> Option<f64> {
        match self {
            Self::Colormap { fd_step, .. } | Self::Tabulated { fd_step, .. } => Some(*fd_step),
            _ => None,
        }
    }
}

/// Evaluates `T(x)`.
pub fn eval_map(spec: &MapSpec, x: &[f64]) -> Result<Vec<f64>> {
    let sigmoid = |t: f64| 1.0 / (1.0 + (-10.0 * (t - 0.5)).exp());
    Ok(match spec {
        MapSpec::Identity => x.to_vec(),
        MapSpec::Quadratic => x.iter().map(|t| t * t).collect(),
        MapSpec::Sigmoid => x.iter().map(|&t| sigmoid(t)).collect(),
        MapSpec::SurfaceGaussianBump { sigma } => {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            vec![x[0], x[1], (-r2 / (2.0 * sigma * sigma)).exp()]
        }
        MapSpec::SurfaceSine => {
            let tau = std::f64::consts::TAU;
            vec![x[0], x[1], (tau * x[0]).sin() * (tau * x[1]).sin()]
        }
        MapSpec::SurfaceCosRadial => {
            let s = (x[0].powi(5) + x[1].powi(5)).sqrt();
            vec![x[0], x[1], -0.5 * (5.0 * s).cos()]
        }
        MapSpec::Colormap { name, field, .. } => {
            let (lo, hi) = field.range();
            let v = (field.eval(x[0], x[1]) - lo) / (hi - lo);
            name.rgb(v).to_vec()
        }
        MapSpec::Tabulated { table, .. } => table.eval(x)?,
    })
}

/// Dense row-major Jacobian, `rows = codomain_dim`, `cols = spatial_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `J^T J`, symmetrized.
    pub fn gram(&self) -> Vec<f64> {
        let d = self.cols;
        let mut g = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                g[a * d + b] = (0..self.rows).map(|r| self.get(r, a) * self.get(r, b)).sum();
            }
        }
        for a in 0..d {
            for b in 0..a {
                let s = 0.5 * (g[a * d + b] + g[b * d + a]);
                g[a * d + b] = s;
                g[b * d + a] = s;
            }
        }
        g
    }
}

/// Jacobian of `T` at `x`: analytic for the builtin maps, finite differences
/// for colormap and tabulated maps.
pub fn eval_jacobian(spec: &MapSpec, x: &[f64]) -> Result<Jacobian> {
    let d = x.len();
    let mut j = Jacobian::zeros(spec.codomain_dim(d), d);
    match spec {
        MapSpec::Identity => (0..d).for_each(|a| j.set(a, a, 1.0)),
        MapSpec::Quadratic => (0..d).for_each(|a| j.set(a, a, 2.0 * x[a])),
        MapSpec::Sigmoid => (0..d).for_each(|a| {
            let s = 1.0 / (1.0 + (-10.0 * (x[a] - 0.5)).exp());
            j.set(a, a, 10.0 * s * (1.0 - s));
        }),
        MapSpec::SurfaceGaussianBump { sigma } => {
            let s2 = sigma * sigma;
            let z = (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / (2.0 * s2)).exp();
            j.set(0, 0, 1.0);
            j.set(1, 1, 1.0);
            j.set(2, 0, -(x[0] - 0.5) / s2 * z);
            j.set(2, 1, -(x[1] - 0.5) / s2 * z);
        }
        MapSpec::SurfaceSine => {
            let tau = std::f64::consts::TAU;
            j.set(0, 0, 1.0);
            j.set(1, 1, 1.0);
            j.set(2, 0, tau * (tau * x[0]).cos() * (tau * x[1]).sin());
            j.set(2, 1, tau * (tau * x[0]).sin() * (tau * x[1]).cos());
        }
        MapSpec::SurfaceCosRadial => {
            j.set(0, 0, 1.0);
            j.set(1, 1, 1.0);
            let s = (x[0].powi(5) + x[1].powi(5)).sqrt();
            if s > 0.0 {
                // d/dx [-0.5 cos(5 s)] = 2.5 sin(5 s) ds/dx, ds/dx = 5 x^4 / (2 s)
                let outer = 2.5 * (5.0 * s).sin();
                j.set(2, 0, outer * 5.0 * x[0].powi(4) / (2.0 * s));
                j.set(2, 1, outer * 5.0 * x[1].powi(4) / (2.0 * s));
            }
        }
        MapSpec::Colormap { .. } | MapSpec::Tabulated { .. } => {
            return fd_jacobian(spec, x, spec.fd_step().unwrap_or(COLORMAP_FD_STEP));
        }
    }
    Ok(j)
}

/// Central-difference Jacobian with step `h`, one-sided where a central
/// stencil would leave the unit cube.
pub fn fd_jacobian(spec: &MapSpec, x: &[f64], h: f64) -> Result<Jacobian> {
    let d = x.len();
    let mut j = Jacobian::zeros(spec.codomain_dim(d), d);
    let mut probe = x.to_vec();
    for a in 0..d {
        let (lo, hi) = ((x[a] - h).max(0.0), (x[a] + h).min(1.0));
        probe[a] = hi;
        let f_hi = eval_map(spec, &probe)?;
        probe[a] = lo;
        let f_lo = eval_map(spec, &probe)?;
        probe[a] = x[a];
        let width = hi - lo;
        for r in 0..j.rows {
            j.set(r, a, (f_hi[r] - f_lo[r]) / width);
        }
    }
    Ok(j)
}

/// Symmetric 2x2 matrix with a cached eigendecomposition.
///
/// One-dimensional metrics embed as `diag(a, 1)`; the second momentum
/// component is identically zero there, so the filler entry never matters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spd2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
    /// Eigenvalues, `eig[0] >= eig[1] > 0`.
    pub eig: [f64; 2],
    /// Unit eigenvector of `eig[0]`; the second is its rotation by 90 degrees.
    pub vec: [f64; 2],
}

impl Spd2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        if !(xx.is_finite() && xy.is_finite() && yy.is_finite()) {
            return config("metric entries must be finite");
        }
        let mean = 0.5 * (xx + yy);
        let r = (0.25 * (xx - yy).powi(2) + xy * xy).sqrt();
        let l1 = mean + r;
        let det = xx * yy - xy * xy;
        if !(l1 > 0.0 && det > 0.0) {
            return config(format!("matrix [[{xx}, {xy}], [{xy}, {yy}]] is not positive definite"));
        }
        let l2 = det / l1;
        let vec = if xy != 0.0 {
            let (a, b) = (l1 - yy, xy);
            let n = a.hypot(b);
            [a / n, b / n]
        } else if xx >= yy {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        Ok(Self { xx, xy, yy, eig: [l1, l2], vec })
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0).expect("identity is SPD")
    }

    /// `m^T A m`.
    pub fn quad(&self, m: [f64; 2]) -> f64 {
        self.xx * m[0] * m[0] + 2.0 * self.xy * m[0] * m[1] + self.yy * m[1] * m[1]
    }

    /// Coordinates of `m` in the eigenbasis.
    pub fn to_eigen(&self, m: [f64; 2]) -> [f64; 2] {
        let [c, s] = self.vec;
        [c * m[0] + s * m[1], -s * m[0] + c * m[1]]
    }

    pub fn from_eigen(&self, w: [f64; 2]) -> [f64; 2] {
        let [c, s] = self.vec;
        [c * w[0] - s * w[1], s * w[0] + c * w[1]]
    }
}

/// Per-cell metric `A = a1 I + a2 J^T J`, constant in time.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    grid: GridSpec,
    alpha: Alpha,
    /// Row-major over spatial cells `(i, j)`.
    a: Vec<Spd2>,
    /// `J^T J` per spatial cell, packed `(xx, xy, yy)`.
    gram: Vec<[f64; 3]>,
}

impl MetricField {
    /// `A = a1 I` everywhere: the Euclidean kinetic energy weighted by `a1`.
    pub fn isotropic(g: &GridSpec, alpha: Alpha) -> Result<Self> {
        if alpha.primary <= 0.0 {
            return config("alpha primary weight must be positive (A must be positive definite)");
        }
        let cells = g.m() * g.n();
        let a = Spd2::new(alpha.primary, 0.0, if g.spatial_dim() == 1 { 1.0 } else { alpha.primary })?;
        Ok(Self { grid: *g, alpha, a: vec![a; cells], gram: vec![[0.0; 3]; cells] })
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Metric of cell `(i, j, k)`; independent of `k`.
    pub fn at(&self, i: usize, j: usize, _k: usize) -> &Spd2 {
        &self.a[i * self.grid.n() + j]
    }

    /// Metric of spatial cell with flat index `i * N + j`.
    pub(crate) fn spatial(&self, flat: usize) -> &Spd2 {
        &self.a[flat]
    }

    pub(crate) fn gram(&self, flat: usize) -> [f64; 3] {
        self.gram[flat]
    }
}

/// Samples `A = a1 I + a2 J^T J` at every cell center.
pub fn build_metric_field(spec: &MapSpec, alpha: Alpha, g: &GridSpec) -> Result<MetricField> {
    if alpha.primary <= 0.0 {
        return config("alpha primary weight must be positive (A must be positive definite)");
    }
    spec.validate(g.spatial_dim())?;
    let d = g.spatial_dim();
    let mut a = Vec::with_capacity(g.m() * g.n());
    let mut gram = Vec::with_capacity(g.m() * g.n());
    for i in 0..g.m() {
        for j in 0..g.n() {
            let c = g.cell_center(i, j);
            let jac = eval_jacobian(spec, &c[..d])?;
            let gm = jac.gram();
            let packed = if d == 1 { [gm[0], 0.0, 0.0] } else { [gm[0], gm[1], gm[3]] };
            let xx = alpha.primary + alpha.secondary * packed[0];
            let (xy, yy) = if d == 1 {
                (0.0, 1.0)
            } else {
                (alpha.secondary * packed[1], alpha.primary + alpha.secondary * packed[2])
            };
            a.push(Spd2::new(xx, xy, yy)?);
            gram.push(packed);
        }
    }
    Ok(MetricField { grid: *g, alpha, a, gram })
}

/// Kinetic energy of a centered field and its primary/secondary split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticCost {
    pub total: f64,
    /// `a1 |m|^2 / rho` part.
    pub primary: f64,
    /// `a2 |J m|^2 / rho` part.
    pub secondary: f64,
    /// Some cell had `rho <= 0` with nonzero momentum (or `rho < 0`); all
    /// three values are then `+inf`.
    pub infeasible: bool,
}

fn cell_momentum(v: &CenteredField, idx: usize) -> [f64; 2] {
    let m = v.m.as_slice().expect("standard layout")[idx];
    let n = v.n.as_ref().map_or(0.0, |n| n.as_slice().expect("standard layout")[idx]);
    [m, n]
}

fn kinetic_impl(v: &CenteredField, a: &MetricField, g: &GridSpec, floor: Option<f64>) -> KineticCost {
    let q = g.q();
    let rho = v.rho.as_slice().expect("standard layout");
    let (mut primary, mut secondary, mut total) = (0.0, 0.0, 0.0);
    let a1 = a.alpha().primary;
    let a2 = a.alpha().secondary;
    for (idx, &r) in rho.iter().enumerate() {
        let m = cell_momentum(v, idx);
        let flat = idx / q;
        if let Some(f) = floor {
            if r <= f {
                continue;
            }
        } else if r <= 0.0 {
            if m == [0.0, 0.0] && r == 0.0 {
                continue;
            }
            return KineticCost {
                total: f64::INFINITY,
                primary: f64::INFINITY,
                secondary: f64::INFINITY,
                infeasible: true,
            };
        }
        let gm = a.gram(flat);
        let m2 = m[0] * m[0] + m[1] * m[1];
        let jm2 = gm[0] * m[0] * m[0] + 2.0 * gm[1] * m[0] * m[1] + gm[2] * m[1] * m[1];
        primary += a1 * m2 / r;
        secondary += a2 * jm2 / r;
        total += a.spatial(flat).quad(m) / r;
    }
    let vol = g.cell_volume();
    KineticCost { total: total * vol, primary: primary * vol, secondary: secondary * vol, infeasible: false }
}

/// `dx dy dt * sum J(m, n, rho; A)` with `J = m^T A m / rho`.
pub fn kinetic_cost(v: &CenteredField, a: &MetricField, g: &GridSpec) -> KineticCost {
    kinetic_impl(v, a, g, None)
}

/// Same as [`kinetic_cost`] but skipping cells with `rho <= floor`.
///
/// Used for monitoring primal-dual iterates, whose interpolated densities
/// carry round-off sized negative values in empty regions.
pub fn kinetic_cost_floored(v: &CenteredField, a: &MetricField, g: &GridSpec, floor: f64) -> KineticCost {
    kinetic_impl(v, a, g, Some(floor))
}

/// Cell-center values of one density slice as a dense array (helper for tests and IO).
pub fn sample_on_centers(g: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Array3<f64> {
    Array3::from_shape_fn((g.m(), g.n(), 1), |(i, j, _)| {
        let c = g.cell_center(i, j);
        f(c[0], c[1])
    })
}
