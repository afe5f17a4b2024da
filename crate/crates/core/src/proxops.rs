//! Proximal map of the kinetic cost and projection onto the continuity
//! constraint.

use std::sync::Arc;

use ndarray::{Array3, Axis};
use rustdct::{DctPlanner, TransformType2And3};

use crate::error::{config, Error, Result};
use crate::grid::{divergence_into, impose_boundary_mut, BoundaryData, CenteredField, GridSpec, StaggeredField};
use crate::metric::{MetricField, Spd2};
use crate::par;

/// Step and root-finding controls for the prox of `J(m, rho) = m^T A m / rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    pub tau: f64,
    /// Absolute tolerance on the scalar root residual.
    pub fp_tol: f64,
    pub fp_max_iters: usize,
}

impl ProxParams {
    pub fn new(tau: f64) -> Self {
        Self { tau, fp_tol: 1e-11, fp_max_iters: 200 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return config(format!("prox step must be positive, got {}", self.tau));
        }
        if !(self.fp_tol > 0.0) {
            return config("prox root tolerance must be positive");
        }
        if self.fp_max_iters < 10 {
            return config("prox root iteration cap must be at least 10");
        }
        Ok(())
    }
}

/// `phi(r) = rho + tau sum_i l_i w_i^2 / (2 tau l_i + r)^2` and `phi'(r)`.
fn phi(r: f64, rho: f64, tau: f64, eig: [f64; 2], w: [f64; 2]) -> (f64, f64) {
    let mut val = rho;
    let mut der = 0.0;
    for i in 0..2 {
        let d = 2.0 * tau * eig[i] + r;
        let t = tau * eig[i] * w[i] * w[i] / (d * d);
        val += t;
        der -= 2.0 * t / d;
    }
    (val, der)
}

/// Minimizer of `J(m', rho'; A) + |(m, rho) - (m', rho')|^2 / (2 tau)`.
///
/// The optimal density is the root of the increasing, concave
/// `psi(r) = r - phi(r)`. Newton's method started at `max(rho, 0)` approaches
/// it monotonically from the left; bisection on `[0, phi(0)]` takes over if
/// Newton has not met the tolerance within the iteration cap.
pub fn prox_j_cell(m: [f64; 2], rho: f64, a: &Spd2, p: &ProxParams) -> Result<([f64; 2], f64)> {
    let tau = p.tau;
    let w = a.to_eigen(m);
    let eig = a.eig;
    let phi0 = rho + (w[0] * w[0] / eig[0] + w[1] * w[1] / eig[1]) / (4.0 * tau);
    if phi0 <= 0.0 {
        return Ok(([0.0, 0.0], 0.0));
    }
    let psi = |r: f64| {
        let (v, d) = phi(r, rho, tau, eig, w);
        (r - v, 1.0 - d)
    };

    let mut r = rho.max(0.0);
    let mut done = false;
    for _ in 0..p.fp_max_iters {
        let (f, df) = psi(r);
        if f.abs() <= p.fp_tol {
            done = true;
            break;
        }
        let next = r - f / df;
        if !(next > r) {
            // Round-off floor: the tangent no longer moves the iterate.
            done = true;
            break;
        }
        r = next.min(phi0);
    }
    if !done {
        let (mut lo, mut hi) = (r, phi0);
        for _ in 0..p.fp_max_iters {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (f, _) = psi(mid);
            if f.abs() <= p.fp_tol {
                lo = mid;
                hi = mid;
                break;
            }
            if f < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if hi - lo > 1e-12 * hi.max(1.0) {
            return Err(Error::Numerical(format!(
                "prox root not bracketed after {} iterations (rho = {rho}, m = {m:?})",
                p.fp_max_iters
            )));
        }
        r = 0.5 * (lo + hi);
    }
    if !(r > 0.0) || !r.is_finite() {
        return Ok(([0.0, 0.0], 0.0));
    }
    let ws = [r * w[0] / (2.0 * tau * eig[0] + r), r * w[1] / (2.0 * tau * eig[1] + r)];
    Ok((a.from_eigen(ws), r))
}

/// Applies `f(m, rho, A)` at every centered cell, in place.
fn cellwise<F>(v: &mut CenteredField, a: &MetricField, f: F) -> Result<()>
where
    F: Fn([f64; 2], f64, &Spd2) -> Result<([f64; 2], f64)> + Sync + Send,
{
    let g = *a.grid();
    v.check(&g)?;
    let q = g.q();
    let mut buf = vec![[0.0f64; 3]; g.num_cells()];
    {
        let ms = v.m.as_slice().expect("standard layout");
        let ns = v.n.as_ref().map(|n| n.as_slice().expect("standard layout"));
        let rs = v.rho.as_slice().expect("standard layout");
        par::try_for_each_chunk(&mut buf, q, |c, chunk| {
            let spd = a.spatial(c);
            for (k, out) in chunk.iter_mut().enumerate() {
                let idx = c * q + k;
                let m = [ms[idx], ns.map_or(0.0, |n| n[idx])];
                let (mm, r) = f(m, rs[idx], spd)?;
                *out = [mm[0], mm[1], r];
            }
            Ok::<(), Error>(())
        })?;
    }
    let ms = v.m.as_slice_mut().expect("standard layout");
    for (dst, src) in ms.iter_mut().zip(&buf) {
        *dst = src[0];
    }
    if let Some(n) = v.n.as_mut() {
        for (dst, src) in n.as_slice_mut().expect("standard layout").iter_mut().zip(&buf) {
            *dst = src[1];
        }
    }
    for (dst, src) in v.rho.as_slice_mut().expect("standard layout").iter_mut().zip(&buf) {
        *dst = src[2];
    }
    Ok(())
}

/// Cellwise [`prox_j_cell`] with each cell's metric.
pub fn prox_j(v: &CenteredField, a: &MetricField, p: &ProxParams) -> Result<CenteredField> {
    p.validate()?;
    let mut out = v.clone();
    cellwise(&mut out, a, |m, r, spd| prox_j_cell(m, r, spd, p))?;
    Ok(out)
}

/// `prox_{tau J*}(v) = v - tau prox_{J / tau}(v / tau)`, in place.
pub(crate) fn prox_j_conj_mut(v: &mut CenteredField, a: &MetricField, tau: f64) -> Result<()> {
    let p = ProxParams::new(1.0 / tau);
    p.validate()?;
    cellwise(v, a, |m, r, spd| {
        let (pm, pr) = prox_j_cell([m[0] / tau, m[1] / tau], r / tau, spd, &p)?;
        Ok(([m[0] - tau * pm[0], m[1] - tau * pm[1]], r - tau * pr))
    })
}

/// Prox of the convex conjugate of `J`, by the Moreau identity.
pub fn prox_j_conj(v: &CenteredField, a: &MetricField, tau: f64) -> Result<CenteredField> {
    let mut out = v.clone();
    prox_j_conj_mut(&mut out, a, tau)?;
    Ok(out)
}

/// Cosine-transform diagonalization of the Neumann Laplacian on the centered grid.
pub struct PoissonWorkspace {
    grid: GridSpec,
    eigenvalues: Array3<f64>,
    plans: [Arc<dyn TransformType2And3<f64>>; 3],
}

impl std::fmt::Debug for PoissonWorkspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonWorkspace").field("grid", &self.grid).finish_non_exhaustive()
    }
}

fn neumann_eigen(k: usize, len: usize, h: f64) -> f64 {
    (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / len as f64).cos()) / (h * h)
}

impl PoissonWorkspace {
    pub fn new(g: &GridSpec) -> Self {
        let (m, n, q) = g.centered_shape();
        let eigenvalues = Array3::from_shape_fn((m, n, q), |(i, j, k)| {
            neumann_eigen(i, m, g.dx()) + neumann_eigen(j, n, g.dy()) + neumann_eigen(k, q, g.dt())
        });
        let mut planner = DctPlanner::new();
        let plans = [planner.plan_dct2(m), planner.plan_dct2(n), planner.plan_dct2(q)];
        Self { grid: *g, eigenvalues, plans }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `lambda_{ijk}` of the operator `-(Dxx + Dyy + Dtt)`.
    pub fn eigenvalues(&self) -> &Array3<f64> {
        &self.eigenvalues
    }

    fn transform(&self, x: &mut Array3<f64>, inverse: bool) {
        for axis in 0..3 {
            let len = x.len_of(Axis(axis));
            if len == 1 {
                continue;
            }
            let plan = &self.plans[axis];
            let scale = 2.0 / len as f64;
            par::for_each_lane(x.view_mut(), axis, |mut lane| {
                let mut buf: Vec<f64> = lane.iter().copied().collect();
                let mut scratch = vec![0.0; plan.get_scratch_len()];
                if inverse {
                    plan.process_dct3_with_scratch(&mut buf, &mut scratch);
                    buf.iter_mut().for_each(|v| *v *= scale);
                } else {
                    plan.process_dct2_with_scratch(&mut buf, &mut scratch);
                }
                lane.iter_mut().zip(&buf).for_each(|(d, s)| *d = *s);
            });
        }
    }
}

/// Mean-zero solution `s` of `-(Dxx + Dyy + Dtt) s = rhs - mean(rhs)` with
/// homogeneous Neumann conditions.
pub fn neumann_poisson_solve(rhs: &Array3<f64>, w: &PoissonWorkspace) -> Result<Array3<f64>> {
    if rhs.dim() != w.grid.centered_shape() {
        return config(format!(
            "poisson rhs has shape {:?}, expected {:?}",
            rhs.dim(),
            w.grid.centered_shape()
        ));
    }
    let mut s = rhs.as_standard_layout().into_owned();
    neumann_poisson_solve_mut(&mut s, w);
    Ok(s)
}

pub(crate) fn neumann_poisson_solve_mut(s: &mut Array3<f64>, w: &PoissonWorkspace) {
    w.transform(s, false);
    par::zip_update(s.view_mut(), w.eigenvalues.view(), |c, l| if l > 0.0 { c / l } else { 0.0 });
    s[(0, 0, 0)] = 0.0;
    w.transform(s, true);
}

/// Orthogonal projection onto divergence-free fields with boundary data `b0`.
pub fn project_constraints(
    u: &StaggeredField,
    b0: &BoundaryData,
    w: &PoissonWorkspace,
    g: &GridSpec,
) -> Result<StaggeredField> {
    if g != w.grid() {
        return config("poisson workspace was built for a different grid");
    }
    u.check(g)?;
    b0.validate(g)?;
    let mut out = u.clone();
    let mut scratch = Array3::zeros(g.centered_shape());
    project_constraints_mut(&mut out, b0, w, &mut scratch);
    Ok(out)
}

/// Unchecked in-place projection; `scratch` has the centered shape.
pub(crate) fn project_constraints_mut(
    u: &mut StaggeredField,
    b0: &BoundaryData,
    w: &PoissonWorkspace,
    scratch: &mut Array3<f64>,
) {
    let g = w.grid;
    impose_boundary_mut(u, b0);
    divergence_into(u, &g, scratch);
    neumann_poisson_solve_mut(scratch, w);
    let s = &*scratch;
    let (m, n, q) = g.centered_shape();

    let idx = 1.0 / g.dx();
    for i in 1..m {
        let mut face = u.m.index_axis_mut(Axis(0), i);
        let hi = s.index_axis(Axis(0), i);
        let lo = s.index_axis(Axis(0), i - 1);
        ndarray::Zip::from(&mut face).and(&hi).and(&lo).for_each(|f, &a, &b| *f += (a - b) * idx);
    }
    if let Some(nf) = u.n.as_mut() {
        let idy = 1.0 / g.dy();
        for j in 1..n {
            let mut face = nf.index_axis_mut(Axis(1), j);
            let hi = s.index_axis(Axis(1), j);
            let lo = s.index_axis(Axis(1), j - 1);
            ndarray::Zip::from(&mut face).and(&hi).and(&lo).for_each(|f, &a, &b| *f += (a - b) * idy);
        }
    }
    let idt = 1.0 / g.dt();
    for k in 1..q {
        let mut face = u.rho.index_axis_mut(Axis(2), k);
        let hi = s.index_axis(Axis(2), k);
        let lo = s.index_axis(Axis(2), k - 1);
        ndarray::Zip::from(&mut face).and(&hi).and(&lo).for_each(|f, &a, &b| *f += (a - b) * idt);
    }
}
