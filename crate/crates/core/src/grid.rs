//! Space-time staggered grid: geometry, fields, and the linear operators
//! (midpoint interpolation, divergence, boundary selection) the solvers are
//! built from.
//!
//! Arrays are row-major with index order `(x, y, t)`. A face array carries
//! one extra entry along its normal axis: `m[i, j, k]` lives on the x-face
//! `i - 1/2`, `rho[i, j, k]` on the time face `k - 1/2`. One-dimensional
//! problems use `N = 1` and carry no `n` component.

use ndarray::{s, Array2, Array3, ArrayView3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};
use crate::par;

/// Uniform discretization of `[0,1]^d x [0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    spatial_dim: usize,
    m: usize,
    n: usize,
    q: usize,
    dx: f64,
    dy: f64,
    dt: f64,
}

impl GridSpec {
    pub fn new(spatial_dim: usize, m: usize, n: usize, q: usize) -> Result<Self> {
        match spatial_dim {
            1 => {
                if n != 1 {
                    return config(format!("one-dimensional grid needs N = 1, got {n}"));
                }
            }
            2 => {
                if n < 2 {
                    return config(format!("grid needs N >= 2, got {n}"));
                }
            }
            d => return config(format!("spatial dimension must be 1 or 2, got {d}")),
        }
        if m < 2 {
            return config(format!("grid needs M >= 2, got {m}"));
        }
        if q < 2 {
            return config(format!("grid needs Q >= 2, got {q}"));
        }
        Ok(Self {
            spatial_dim,
            m,
            n,
            q,
            dx: 1.0 / m as f64,
            dy: 1.0 / n as f64,
            dt: 1.0 / q as f64,
        })
    }

    pub fn new_2d(m: usize, n: usize, q: usize) -> Result<Self> {
        Self::new(2, m, n, q)
    }

    pub fn new_1d(m: usize, q: usize) -> Result<Self> {
        Self::new(1, m, 1, q)
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Spatial cell area (length in 1D).
    pub fn cell_area(&self) -> f64 {
        if self.spatial_dim == 1 {
            self.dx
        } else {
            self.dx * self.dy
        }
    }

    /// Space-time cell volume.
    pub fn cell_volume(&self) -> f64 {
        self.cell_area() * self.dt
    }

    pub fn centered_shape(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.q)
    }

    pub fn num_cells(&self) -> usize {
        self.m * self.n * self.q
    }

    /// Center of spatial cell `(i, j)`; the y coordinate is 0.5 in 1D.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let x = (i as f64 + 0.5) * self.dx;
        let y = if self.spatial_dim == 1 {
            0.5
        } else {
            (j as f64 + 0.5) * self.dy
        };
        [x, y]
    }

    /// Time of face `k - 1/2`.
    pub fn face_time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

fn check_shape(name: &str, a: &Array3<f64>, want: (usize, usize, usize)) -> Result<()> {
    if a.dim() != want {
        return config(format!("{name} has shape {:?}, expected {want:?}", a.dim()));
    }
    Ok(())
}

/// Vector-space operations shared by staggered and centered fields.
///
/// Reductions run sequentially in storage order so they are reproducible.
pub trait FieldAlgebra: Clone {
    fn parts(&self) -> Vec<&Array3<f64>>;
    fn parts_mut(&mut self) -> Vec<&mut Array3<f64>>;

    fn dot(&self, other: &Self) -> f64 {
        self.parts()
            .iter()
            .zip(other.parts())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn max_abs(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    fn is_finite(&self) -> bool {
        self.parts().iter().all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * x`.
    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.parts_mut().into_iter().zip(x.parts()) {
            par::zip_update(a.view_mut(), b.view(), |u, v| u + alpha * v);
        }
    }

    fn scale(&mut self, alpha: f64) {
        for a in self.parts_mut() {
            a.mapv_inplace(|x| x * alpha);
        }
    }

    /// Euclidean distance `||self - other||`.
    fn distance(&self, other: &Self) -> f64 {
        self.parts()
            .iter()
            .zip(other.parts())
            .map(|(a, b)| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Primal unknown `(m, n, rho)` on the faces of the space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    /// x-momentum on x-faces, shape `(M+1, N, Q)`.
    pub m: Array3<f64>,
    /// y-momentum on y-faces, shape `(M, N+1, Q)`; `None` in 1D.
    pub n: Option<Array3<f64>>,
    /// Density on time faces, shape `(M, N, Q+1)`.
    pub rho: Array3<f64>,
}

impl StaggeredField {
    pub fn zeros(g: &GridSpec) -> Self {
        let (m, n, q) = g.centered_shape();
        Self {
            m: Array3::zeros((m + 1, n, q)),
            n: (g.spatial_dim() == 2).then(|| Array3::zeros((m, n + 1, q))),
            rho: Array3::zeros((m, n, q + 1)),
        }
    }

    pub fn check(&self, g: &GridSpec) -> Result<()> {
        let (m, n, q) = g.centered_shape();
        check_shape("staggered m", &self.m, (m + 1, n, q))?;
        match (&self.n, g.spatial_dim()) {
            (Some(a), 2) => check_shape("staggered n", a, (m, n + 1, q))?,
            (None, 1) => {}
            _ => return config("staggered n component does not match spatial dimension"),
        }
        check_shape("staggered rho", &self.rho, (m, n, q + 1))
    }
}

impl FieldAlgebra for StaggeredField {
    fn parts(&self) -> Vec<&Array3<f64>> {
        let mut v = vec![&self.m];
        v.extend(self.n.as_ref());
        v.push(&self.rho);
        v
    }
    fn parts_mut(&mut self) -> Vec<&mut Array3<f64>> {
        let mut v = vec![&mut self.m];
        v.extend(self.n.as_mut());
        v.push(&mut self.rho);
        v
    }
}

/// `(m, n, rho)` collocated at cell centers, each of shape `(M, N, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredField {
    pub m: Array3<f64>,
    pub n: Option<Array3<f64>>,
    pub rho: Array3<f64>,
}

impl CenteredField {
    pub fn zeros(g: &GridSpec) -> Self {
        let shape = g.centered_shape();
        Self {
            m: Array3::zeros(shape),
            n: (g.spatial_dim() == 2).then(|| Array3::zeros(shape)),
            rho: Array3::zeros(shape),
        }
    }

    pub fn check(&self, g: &GridSpec) -> Result<()> {
        let shape = g.centered_shape();
        check_shape("centered m", &self.m, shape)?;
        match (&self.n, g.spatial_dim()) {
            (Some(a), 2) => check_shape("centered n", a, shape)?,
            (None, 1) => {}
            _ => return config("centered n component does not match spatial dimension"),
        }
        check_shape("centered rho", &self.rho, shape)
    }
}

impl FieldAlgebra for CenteredField {
    fn parts(&self) -> Vec<&Array3<f64>> {
        let mut v = vec![&self.m];
        v.extend(self.n.as_ref());
        v.push(&self.rho);
        v
    }
    fn parts_mut(&mut self) -> Vec<&mut Array3<f64>> {
        let mut v = vec![&mut self.m];
        v.extend(self.n.as_mut());
        v.push(&mut self.rho);
        v
    }
}

/// The six boundary slabs of a staggered field.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    /// `m` on the faces `x = 0` and `x = 1`, shape `(N, Q)`.
    pub flux_x0: Array2<f64>,
    pub flux_x1: Array2<f64>,
    /// `n` on the faces `y = 0` and `y = 1`, shape `(M, Q)`; `None` in 1D.
    pub flux_y0: Option<Array2<f64>>,
    pub flux_y1: Option<Array2<f64>>,
    /// Initial and terminal densities, shape `(M, N)`.
    pub rho_initial: Array2<f64>,
    pub rho_terminal: Array2<f64>,
}

/// Relative tolerance on the balance of initial and terminal mass.
pub const MASS_BALANCE_TOL: f64 = 1e-12;

impl BoundaryData {
    /// Zero-flux boundary data transporting `initial` to `terminal`.
    pub fn zero_flux(g: &GridSpec, initial: Array2<f64>, terminal: Array2<f64>) -> Result<Self> {
        let (m, n, q) = g.centered_shape();
        let two_d = g.spatial_dim() == 2;
        let b = Self {
            flux_x0: Array2::zeros((n, q)),
            flux_x1: Array2::zeros((n, q)),
            flux_y0: two_d.then(|| Array2::zeros((m, q))),
            flux_y1: two_d.then(|| Array2::zeros((m, q))),
            rho_initial: initial,
            rho_terminal: terminal,
        };
        b.validate(g)?;
        Ok(b)
    }

    /// Checks shapes, zero flux, nonnegative densities, and mass balance.
    pub fn validate(&self, g: &GridSpec) -> Result<()> {
        let (m, n, q) = g.centered_shape();
        let shape2 = |name: &str, a: &Array2<f64>, want: (usize, usize)| -> Result<()> {
            if a.dim() != want {
                return config(format!("{name} has shape {:?}, expected {want:?}", a.dim()));
            }
            Ok(())
        };
        shape2("flux_x0", &self.flux_x0, (n, q))?;
        shape2("flux_x1", &self.flux_x1, (n, q))?;
        match (&self.flux_y0, &self.flux_y1, g.spatial_dim()) {
            (Some(a), Some(b), 2) => {
                shape2("flux_y0", a, (m, q))?;
                shape2("flux_y1", b, (m, q))?;
            }
            (None, None, 1) => {}
            _ => return config("y boundary flux does not match spatial dimension"),
        }
        shape2("rho_initial", &self.rho_initial, (m, n))?;
        shape2("rho_terminal", &self.rho_terminal, (m, n))?;

        let flux_zero = [Some(&self.flux_x0), Some(&self.flux_x1), self.flux_y0.as_ref(), self.flux_y1.as_ref()]
            .into_iter()
            .flatten()
            .all(|a| a.iter().all(|&x| x == 0.0));
        if !flux_zero {
            return config("boundary flux must vanish (zero-flux condition)");
        }
        for (name, a) in [("initial", &self.rho_initial), ("terminal", &self.rho_terminal)] {
            if a.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return config(format!("{name} density must be finite and nonnegative"));
            }
        }
        let (mu, nu) = (self.rho_initial.sum(), self.rho_terminal.sum());
        if (mu - nu).abs() > MASS_BALANCE_TOL * mu.max(nu) {
            return config(format!(
                "initial and terminal masses differ: {mu:e} vs {nu:e} (balanced transport required)"
            ));
        }
        if mu <= 0.0 {
            return config("marginals must carry positive mass");
        }
        Ok(())
    }
}

/// Midpoint interpolation from faces to cell centers.
pub fn interpolate(u: &StaggeredField, g: &GridSpec) -> Result<CenteredField> {
    u.check(g)?;
    let mut out = CenteredField::zeros(g);
    interpolate_into(u, &mut out);
    Ok(out)
}

/// Shape-unchecked [`interpolate`] writing into `out`.
pub(crate) fn interpolate_into(u: &StaggeredField, out: &mut CenteredField) {
    let avg = |a: f64, b: f64| 0.5 * (a + b);
    par::zip_map2(
        out.m.view_mut(),
        u.m.slice(s![..-1, .., ..]),
        u.m.slice(s![1.., .., ..]),
        avg,
    );
    if let (Some(o), Some(n)) = (out.n.as_mut(), u.n.as_ref()) {
        par::zip_map2(o.view_mut(), n.slice(s![.., ..-1, ..]), n.slice(s![.., 1.., ..]), avg);
    }
    par::zip_map2(
        out.rho.view_mut(),
        u.rho.slice(s![.., .., ..-1]),
        u.rho.slice(s![.., .., 1..]),
        avg,
    );
}

/// Transpose of [`interpolate`]: each face collects half of every adjacent
/// centered value; boundary faces have a single neighbour.
pub fn interpolate_adjoint(v: &CenteredField, g: &GridSpec) -> Result<StaggeredField> {
    v.check(g)?;
    let mut out = StaggeredField::zeros(g);
    interpolate_adjoint_into(v, &mut out);
    Ok(out)
}

fn adjoint_axis(out: &mut Array3<f64>, v: ArrayView3<f64>, axis: usize) {
    let len = out.len_of(Axis(axis));
    out.fill(0.0);
    {
        let mut lo = out.slice_axis_mut(Axis(axis), (..len - 1).into());
        par::zip_update(lo.view_mut(), v, |o, x| o + 0.5 * x);
    }
    let mut hi = out.slice_axis_mut(Axis(axis), (1..).into());
    par::zip_update(hi.view_mut(), v, |o, x| o + 0.5 * x);
}

pub(crate) fn interpolate_adjoint_into(v: &CenteredField, out: &mut StaggeredField) {
    adjoint_axis(&mut out.m, v.m.view(), 0);
    if let (Some(o), Some(n)) = (out.n.as_mut(), v.n.as_ref()) {
        adjoint_axis(o, n.view(), 1);
    }
    adjoint_axis(&mut out.rho, v.rho.view(), 2);
}

/// Space-time divergence at cell centers.
pub fn divergence(u: &StaggeredField, g: &GridSpec) -> Result<Array3<f64>> {
    u.check(g)?;
    let mut out = Array3::zeros(g.centered_shape());
    divergence_into(u, g, &mut out);
    Ok(out)
}

pub(crate) fn divergence_into(u: &StaggeredField, g: &GridSpec, out: &mut Array3<f64>) {
    let (idx, idy, idt) = (1.0 / g.dx(), 1.0 / g.dy(), 1.0 / g.dt());
    par::zip_map2(
        out.view_mut(),
        u.m.slice(s![1.., .., ..]),
        u.m.slice(s![..-1, .., ..]),
        move |hi, lo| (hi - lo) * idx,
    );
    if let Some(n) = u.n.as_ref() {
        let z = Zip::from(out.view_mut())
            .and(n.slice(s![.., 1.., ..]))
            .and(n.slice(s![.., ..-1, ..]));
        z.for_each(|o, &hi, &lo| *o += (hi - lo) * idy);
    }
    let z = Zip::from(out.view_mut())
        .and(u.rho.slice(s![.., .., 1..]))
        .and(u.rho.slice(s![.., .., ..-1]));
    z.for_each(|o, &hi, &lo| *o += (hi - lo) * idt);
}

/// Selects the boundary slabs of `u`.
pub fn extract_boundary(u: &StaggeredField) -> BoundaryData {
    let mlen = u.m.len_of(Axis(0));
    let qlen = u.rho.len_of(Axis(2));
    BoundaryData {
        flux_x0: u.m.index_axis(Axis(0), 0).to_owned(),
        flux_x1: u.m.index_axis(Axis(0), mlen - 1).to_owned(),
        flux_y0: u.n.as_ref().map(|n| n.index_axis(Axis(1), 0).to_owned()),
        flux_y1: u
            .n
            .as_ref()
            .map(|n| n.index_axis(Axis(1), n.len_of(Axis(1)) - 1).to_owned()),
        rho_initial: u.rho.index_axis(Axis(2), 0).to_owned(),
        rho_terminal: u.rho.index_axis(Axis(2), qlen - 1).to_owned(),
    }
}

/// Overwrites the boundary slabs of `u` with `b0`; interior faces are untouched.
pub fn impose_boundary(u: &StaggeredField, b0: &BoundaryData, g: &GridSpec) -> Result<StaggeredField> {
    u.check(g)?;
    b0.validate(g)?;
    let mut out = u.clone();
    impose_boundary_mut(&mut out, b0);
    Ok(out)
}

pub(crate) fn impose_boundary_mut(u: &mut StaggeredField, b0: &BoundaryData) {
    let mlen = u.m.len_of(Axis(0));
    u.m.index_axis_mut(Axis(0), 0).assign(&b0.flux_x0);
    u.m.index_axis_mut(Axis(0), mlen - 1).assign(&b0.flux_x1);
    if let (Some(n), Some(y0), Some(y1)) = (u.n.as_mut(), &b0.flux_y0, &b0.flux_y1) {
        let nlen = n.len_of(Axis(1));
        n.index_axis_mut(Axis(1), 0).assign(y0);
        n.index_axis_mut(Axis(1), nlen - 1).assign(y1);
    }
    let qlen = u.rho.len_of(Axis(2));
    u.rho.index_axis_mut(Axis(2), 0).assign(&b0.rho_initial);
    u.rho.index_axis_mut(Axis(2), qlen - 1).assign(&b0.rho_terminal);
}

/// Power-iteration estimate of the operator norm of [`interpolate`].
///
/// Returns `sqrt` of the Rayleigh quotient of `I* I` after `iters` steps from
/// a seeded random start. The quotient is nondecreasing in `iters`.
pub fn estimate_operator_norm(g: &GridSpec, iters: usize, seed: u64) -> Result<f64> {
    if iters < 10 {
        return config(format!("operator norm estimate needs at least 10 iterations, got {iters}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = StaggeredField::zeros(g);
    for a in v.parts_mut() {
        a.mapv_inplace(|_| rng.random::<f64>() - 0.5);
    }
    let nv = v.norm();
    v.scale(1.0 / nv);

    let mut c = CenteredField::zeros(g);
    let mut w = StaggeredField::zeros(g);
    let mut rayleigh = 0.0;
    for _ in 0..iters {
        interpolate_into(&v, &mut c);
        rayleigh = c.dot(&c);
        interpolate_adjoint_into(&c, &mut w);
        let nw = w.norm();
        if nw == 0.0 {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        std::mem::swap(&mut v, &mut w);
        v.scale(1.0 / nw);
    }
    interpolate_into(&v, &mut c);
    Ok(rayleigh.max(c.dot(&c)).sqrt())
}
