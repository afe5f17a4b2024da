//! Primal-dual drivers: Chambolle-Pock for the Monge form, and Condat-Vu,
//! PDFP and Yan for the Kantorovich form with its smooth transport term.

use std::collections::VecDeque;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrete_ot::{SinkhornParams, TransportPenalty};
use crate::error::{config, Error, Result};
use crate::grid::{
    divergence_into, interpolate_adjoint_into, interpolate_into, BoundaryData, CenteredField, FieldAlgebra,
    GridSpec, StaggeredField,
};
use crate::metric::{build_metric_field, kinetic_cost_floored, Alpha, MetricField};
use crate::problems::Problem;
use crate::proxops::{project_constraints_mut, prox_j_conj_mut, PoissonWorkspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ChambollePock,
    CondatVu,
    Pdfp,
    Yan,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::ChambollePock, Self::CondatVu, Self::Pdfp, Self::Yan];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ChambollePock => "chambolle_pock",
            Self::CondatVu => "condat_vu",
            Self::Pdfp => "pdfp",
            Self::Yan => "yan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Whether the algorithm solves the Kantorovich (three-term) form.
    pub fn is_three_term(&self) -> bool {
        !matches!(self, Self::ChambollePock)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Dual step (`tau` for Chambolle-Pock, `delta` for the three-term methods).
    pub tau: StepSize,
    /// Primal step (`sigma`, resp. `gamma`).
    pub sigma: StepSize,
    pub theta: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub stop_window: usize,
    pub log_every: usize,
    pub seed: u64,
    /// Lipschitz constant of the gradient of the transport term; estimated when `None`.
    pub lipschitz: Option<f64>,
    pub sinkhorn: SinkhornParams,
    /// Sinkhorn iteration cap once warm potentials exist; `None` solves every
    /// inner problem to tolerance.
    pub sinkhorn_warm_iters: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::ChambollePock,
            tau: StepSize::Auto,
            sigma: StepSize::Auto,
            theta: 1.0,
            max_iters: 20_000,
            stop_tol: 1e-6,
            stop_window: 50,
            log_every: 10,
            seed: 0,
            lipschitz: None,
            sinkhorn: SinkhornParams::default(),
            sinkhorn_warm_iters: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("tau", self.tau), ("sigma", self.sigma)] {
            if let StepSize::Value(v) = s {
                if !(v.is_finite() && v > 0.0) {
                    return config(format!("solver.{name} must be positive or auto, got {v}"));
                }
            }
        }
        if !(self.theta.is_finite() && self.theta > 0.5) {
            return config(format!("solver.theta must exceed 1/2, got {}", self.theta));
        }
        if self.max_iters == 0 || self.log_every == 0 || self.stop_window < 2 {
            return config("max_iters and log_every must be positive and stop_window at least 2");
        }
        if !(self.stop_tol > 0.0) {
            return config("solver.stop_tol must be positive");
        }
        if let Some(l) = self.lipschitz {
            if !(l.is_finite() && l >= 0.0) {
                return config("solver.lipschitz must be finite and nonnegative");
            }
        }
        if self.sinkhorn_warm_iters == Some(0) {
            return config("solver.sinkhorn.warm_iters must be positive");
        }
        self.sinkhorn.validate()
    }
}

/// Primal, extrapolated primal, dual, and the cached transport gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub u_s: StaggeredField,
    pub u_s_bar: StaggeredField,
    pub u_c: CenteredField,
    pub grad_prev: Option<StaggeredField>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub iter: usize,
    pub cost_total: f64,
    pub cost_primary: f64,
    pub cost_secondary: f64,
    /// Unweighted `H` (three-term runs only).
    pub h_value: Option<f64>,
    pub div_residual_max: f64,
    pub rel_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub status: RunStatus,
    pub iterations: usize,
    pub tau: f64,
    pub sigma: f64,
    /// Lipschitz constant used for the step sizes (0 for two-term runs).
    pub lipschitz: f64,
}

/// Exact norm of the interpolation operator: each component averages
/// neighbouring faces along one axis, and a `L x (L+1)` averaging matrix has
/// largest singular value `sqrt((1 + cos(pi / (L+1))) / 2)`.
pub fn interpolation_norm(g: &GridSpec) -> f64 {
    let s = |l: usize| ((1.0 + (std::f64::consts::PI / (l as f64 + 1.0)).cos()) / 2.0).sqrt();
    let mut n = s(g.m()).max(s(g.q()));
    if g.spatial_dim() == 2 {
        n = n.max(s(g.n()));
    }
    n
}

/// Step sizes `(tau, sigma)`: dual then primal.
///
/// Two-term: `tau = sigma = 0.99 / |I|`. Three-term: the primal step
/// `gamma = min(0.99 / |I|, c / L)` with `c = 1.96` (Yan, PDFP: `gamma L / 2 < 0.98`)
/// or `c = 0.98` (Condat-Vu, which spends half its budget on the smooth term),
/// and the dual step fills the remaining budget to `0.9801`.
pub fn auto_step_sizes(_g: &GridSpec, algorithm: Algorithm, norm_est: f64, beta_inv_est: f64) -> Result<(f64, f64)> {
    if !(norm_est.is_finite() && norm_est > 0.0) {
        return config(format!("operator norm estimate must be positive, got {norm_est}"));
    }
    if !(beta_inv_est.is_finite() && beta_inv_est >= 0.0) {
        return config(format!("lipschitz estimate must be nonnegative, got {beta_inv_est}"));
    }
    const BUDGET: f64 = 0.9801;
    let base = 0.99 / norm_est;
    match algorithm {
        Algorithm::ChambollePock => Ok((base, base)),
        Algorithm::Yan | Algorithm::Pdfp => {
            let gamma = if beta_inv_est > 0.0 { base.min(1.96 / beta_inv_est) } else { base };
            Ok((BUDGET / (gamma * norm_est * norm_est), gamma))
        }
        Algorithm::CondatVu => {
            let gamma = if beta_inv_est > 0.0 { base.min(0.98 / beta_inv_est) } else { base };
            let delta = (BUDGET - gamma * beta_inv_est / 2.0) / (gamma * norm_est * norm_est);
            Ok((delta, gamma))
        }
    }
}

/// Stopping rule on a cost series and the latest relative primal update.
///
/// Fires when the trailing `window` costs vary by less than `tol` relative to
/// the last one and the last update is below `tol`.
pub fn stopping_check_series(costs: &[f64], last_rel_change: f64, window: usize, tol: f64) -> bool {
    if window < 2 || costs.len() < window {
        return false;
    }
    let tail = &costs[costs.len() - window..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    let last = tail[window - 1];
    let spread = if hi == lo { 0.0 } else { (hi - lo) / last.abs() };
    spread < tol && last_rel_change < tol
}

/// [`stopping_check_series`] applied to the rows of a report.
pub fn stopping_check(report: &ConvergenceReport, window: usize, tol: f64) -> bool {
    let costs: Vec<f64> = report.rows.iter().map(|r| r.cost_total).collect();
    let last = report.rows.last().map_or(f64::INFINITY, |r| r.rel_change);
    stopping_check_series(&costs, last, window, tol)
}

/// Face densities interpolated linearly in time, zero momenta.
pub fn initial_guess(g: &GridSpec, b0: &BoundaryData) -> StaggeredField {
    let mut u = StaggeredField::zeros(g);
    for k in 0..=g.q() {
        let t = g.face_time(k);
        let mut slab = u.rho.index_axis_mut(Axis(2), k);
        ndarray::Zip::from(&mut slab)
            .and(&b0.rho_initial)
            .and(&b0.rho_terminal)
            .for_each(|r, &a, &b| *r = (1.0 - t) * a + t * b);
    }
    u
}

/// Observer hook called with every logged iterate.
pub type Observer<'a> = dyn FnMut(&ReportRow, &StaggeredField) + 'a;

/// Step-wise primal-dual solver.
pub struct Solver {
    grid: GridSpec,
    boundary: BoundaryData,
    metric: MetricField,
    poisson: PoissonWorkspace,
    alpha: Alpha,
    penalty: Option<TransportPenalty>,
    cfg: SolverConfig,
    tau: f64,
    sigma: f64,
    lipschitz: f64,
    state: IterateState,
    last_h: Option<f64>,
    iter: usize,
    scratch_c: CenteredField,
    scratch_s: StaggeredField,
    scratch_p: Array3<f64>,
}

/// Face densities as `(M*N, Q+1)` slices, with negative values clipped and
/// each slice rescaled to its unclipped mass so consecutive slices stay
/// balanced.
fn rho_slices(u: &StaggeredField, g: &GridSpec) -> Array2<f64> {
    let (m, n) = (g.m(), g.n());
    let mut s = u
        .rho
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((m * n, g.q() + 1))
        .expect("face densities are (M, N, Q+1)");
    for mut col in s.axis_iter_mut(Axis(1)) {
        let raw: f64 = col.sum();
        col.mapv_inplace(|r| r.max(0.0));
        let clipped: f64 = col.sum();
        if clipped > 0.0 && raw > 0.0 && clipped != raw {
            col.mapv_inplace(|r| r * (raw / clipped));
        }
    }
    s
}

/// Multiplier on the probed Lipschitz constant of `grad h`. The probes only
/// see small perturbations around the initial guess.
const LIPSCHITZ_SAFETY: f64 = 10.0;

impl Solver {
    pub fn new(problem: &Problem, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let g = problem.grid;
        problem.boundary.validate(&g)?;
        let alpha = problem.alpha;
        let three = cfg.algorithm.is_three_term();
        let metric = if three {
            MetricField::isotropic(&g, alpha)?
        } else {
            build_metric_field(&problem.map, alpha, &g)?
        };
        let penalty = if three && alpha.secondary > 0.0 {
            Some(
                TransportPenalty::new(problem.coupling.clone(), cfg.sinkhorn, &g)?
                    .with_warm_iters(cfg.sinkhorn_warm_iters),
            )
        } else {
            None
        };
        let poisson = PoissonWorkspace::new(&g);
        let mut scratch_p = Array3::zeros(g.centered_shape());
        let mut u = initial_guess(&g, &problem.boundary);
        project_constraints_mut(&mut u, &problem.boundary, &poisson, &mut scratch_p);

        let mut solver = Self {
            grid: g,
            boundary: problem.boundary.clone(),
            metric,
            poisson,
            alpha,
            penalty,
            cfg,
            tau: 0.0,
            sigma: 0.0,
            lipschitz: 0.0,
            state: IterateState {
                u_s_bar: u.clone(),
                u_s: u,
                u_c: CenteredField::zeros(&g),
                grad_prev: None,
            },
            last_h: None,
            iter: 0,
            scratch_c: CenteredField::zeros(&g),
            scratch_s: StaggeredField::zeros(&g),
            scratch_p,
        };
        if solver.penalty.is_some() {
            let x0 = solver.state.u_s.clone();
            let (grad, h) = solver.transport_gradient(&x0)?;
            solver.state.grad_prev = Some(grad);
            solver.last_h = Some(h);
            solver.lipschitz = match solver.cfg.lipschitz {
                Some(l) => l,
                None => LIPSCHITZ_SAFETY * solver.estimate_lipschitz()?,
            };
        }
        let norm = interpolation_norm(&g);
        let (auto_tau, auto_sigma) = auto_step_sizes(&g, solver.cfg.algorithm, norm, solver.lipschitz)?;
        solver.tau = match solver.cfg.tau {
            StepSize::Auto => auto_tau,
            StepSize::Value(v) => v,
        };
        solver.sigma = match solver.cfg.sigma {
            StepSize::Auto => auto_sigma,
            StepSize::Value(v) => v,
        };
        Ok(solver)
    }

    pub fn state(&self) -> &IterateState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn step_sizes(&self) -> (f64, f64) {
        (self.tau, self.sigma)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    /// Gradient of `h = (a2 / vol) H` as a staggered field, and `H`.
    fn transport_gradient(&mut self, u: &StaggeredField) -> Result<(StaggeredField, f64)> {
        let g = self.grid;
        let penalty = self.penalty.as_mut().expect("transport term active");
        let eval = penalty.evaluate(&rho_slices(u, &g))?;
        let scale = self.alpha.secondary / g.cell_volume();
        let mut grad = StaggeredField::zeros(&g);
        grad.rho = eval
            .grad
            .into_shape_with_order((g.m(), g.n(), g.q() + 1))
            .expect("gradient has one entry per face density")
            .mapv(|x| scale * x);
        Ok((grad, eval.value))
    }

    /// `max |grad h(x + r) - grad h(x)| / |r|` over eight seeded,
    /// mass-preserving multiplicative perturbations of the initial density.
    fn estimate_lipschitz(&mut self) -> Result<f64> {
        let x0 = self.state.u_s.clone();
        let g0 = self.state.grad_prev.clone().expect("initial gradient computed");
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(0x5eed));
        let (m, n, q) = self.grid.centered_shape();
        let cap = self.penalty.as_ref().and_then(|p| p.warm_iters());
        if let Some(p) = self.penalty.as_mut() {
            let full = cap.map(|_| p.params().max_iters);
            p.set_warm_iters(full);
        }
        let mut best: f64 = 0.0;
        for _ in 0..8 {
            let mut x = x0.clone();
            for k in 1..q {
                let mut slab = x.rho.index_axis_mut(Axis(2), k);
                let xi: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1e-2..1e-2)).collect();
                let mass: f64 = slab.iter().sum();
                let mean: f64 = slab.iter().zip(&xi).map(|(r, z)| r * z).sum::<f64>() / mass;
                slab.iter_mut().zip(&xi).for_each(|(r, z)| *r *= 1.0 + z - mean);
            }
            let dist = x.distance(&x0);
            if dist == 0.0 {
                continue;
            }
            let (gx, _) = self.transport_gradient(&x)?;
            best = best.max(gx.distance(&g0) / dist);
        }
        // Leave the warm potentials at the initial iterate.
        self.transport_gradient(&x0)?;
        if let Some(p) = self.penalty.as_mut() {
            p.set_warm_iters(cap);
        }
        Ok(best)
    }

    /// One iteration. Returns the relative primal update `|x+ - x| / |x+|`.
    pub fn step(&mut self) -> Result<f64> {
        let (tau, sigma, theta) = (self.tau, self.sigma, self.cfg.theta);
        // Dual: s+ = prox_{tau J*}(s + tau I(x_bar)).
        interpolate_into(&self.state.u_s_bar, &mut self.scratch_c);
        self.state.u_c.axpy(tau, &self.scratch_c);
        prox_j_conj_mut(&mut self.state.u_c, &self.metric, tau)?;

        // Primal: x+ = proj_C(x - sigma I*(s+) - sigma grad h(x)).
        interpolate_adjoint_into(&self.state.u_c, &mut self.scratch_s);
        let mut x_new = self.state.u_s.clone();
        x_new.axpy(-sigma, &self.scratch_s);
        if let Some(gp) = self.state.grad_prev.as_ref() {
            x_new.axpy(-sigma, gp);
        }
        project_constraints_mut(&mut x_new, &self.boundary, &self.poisson, &mut self.scratch_p);
        if !x_new.is_finite() {
            return Err(Error::Numerical(format!("non-finite iterate at iteration {}", self.iter + 1)));
        }

        let grad_new = if self.penalty.is_some() {
            let (gn, h) = self.transport_gradient(&x_new)?;
            self.last_h = Some(h);
            Some(gn)
        } else {
            None
        };

        // Extrapolation.
        let mut x_bar = x_new.clone();
        match self.cfg.algorithm {
            Algorithm::Pdfp => {
                x_bar.axpy(-sigma, &self.scratch_s);
                if let Some(gn) = grad_new.as_ref() {
                    x_bar.axpy(-sigma, gn);
                }
                project_constraints_mut(&mut x_bar, &self.boundary, &self.poisson, &mut self.scratch_p);
            }
            _ => {
                let mut diff = x_new.clone();
                diff.axpy(-1.0, &self.state.u_s);
                x_bar.axpy(theta, &diff);
                if self.cfg.algorithm == Algorithm::Yan {
                    if let (Some(gp), Some(gn)) = (self.state.grad_prev.as_ref(), grad_new.as_ref()) {
                        x_bar.axpy(sigma, gp);
                        x_bar.axpy(-sigma, gn);
                    }
                }
            }
        }

        let nx = x_new.norm();
        let rel = if nx > 0.0 { x_new.distance(&self.state.u_s) / nx } else { 0.0 };
        self.state.u_s = x_new;
        self.state.u_s_bar = x_bar;
        self.state.grad_prev = grad_new;
        self.iter += 1;
        Ok(rel)
    }

    /// Cost split of the current primal iterate, with a density floor of
    /// `1e-8 max rho` (cells below it are treated as empty).
    pub fn costs(&mut self) -> (f64, f64, f64, Option<f64>) {
        interpolate_into(&self.state.u_s, &mut self.scratch_c);
        let floor = 1e-8 * self.scratch_c.rho.iter().fold(0.0f64, |m, &r| m.max(r));
        let k = kinetic_cost_floored(&self.scratch_c, &self.metric, &self.grid, floor);
        match self.last_h {
            Some(h) if self.penalty.is_some() => {
                let sec = self.alpha.secondary * h;
                (k.primary + sec, k.primary, sec, Some(h))
            }
            _ if self.cfg.algorithm.is_three_term() => (k.primary, k.primary, 0.0, Some(0.0)),
            _ => (k.total, k.primary, k.secondary, None),
        }
    }

    fn row(&mut self, rel_change: f64) -> ReportRow {
        let (cost_total, cost_primary, cost_secondary, h_value) = self.costs();
        divergence_into(&self.state.u_s, &self.grid, &mut self.scratch_p);
        let div = self.scratch_p.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        ReportRow {
            iter: self.iter,
            cost_total,
            cost_primary,
            cost_secondary,
            h_value,
            div_residual_max: div,
            rel_change,
        }
    }

    /// Iterates until the stopping rule fires or `max_iters` is reached.
    pub fn run(mut self, observer: Option<&mut Observer<'_>>) -> (StaggeredField, ConvergenceReport) {
        let mut observer = observer;
        let mut rows = Vec::new();
        let window = self.cfg.stop_window;
        let mut costs: VecDeque<f64> = VecDeque::with_capacity(window + 1);
        let mut status = RunStatus::MaxIters;
        let mut last_rel = f64::INFINITY;
        while self.iter < self.cfg.max_iters {
            let rel = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    status = RunStatus::Error(e.to_string());
                    break;
                }
            };
            last_rel = rel;
            let (total, ..) = self.costs();
            costs.push_back(total);
            if costs.len() > window {
                costs.pop_front();
            }
            let done = stopping_check_series(costs.make_contiguous(), rel, window, self.cfg.stop_tol);
            if done || self.iter.is_multiple_of(self.cfg.log_every) || self.iter == self.cfg.max_iters {
                let r = self.row(rel);
                if let Some(o) = observer.as_mut() {
                    o(&r, &self.state.u_s);
                }
                rows.push(r);
            }
            if done {
                status = RunStatus::Converged;
                break;
            }
        }
        if matches!(status, RunStatus::Error(_)) && rows.last().map(|r| r.iter) != Some(self.iter) {
            let r = self.row(last_rel);
            rows.push(r);
        }
        let report = ConvergenceReport {
            rows,
            status,
            iterations: self.iter,
            tau: self.tau,
            sigma: self.sigma,
            lipschitz: self.lipschitz,
        };
        (self.state.u_s, report)
    }
}

fn check_report(report: ConvergenceReport) -> Result<ConvergenceReport> {
    if let RunStatus::Error(msg) = &report.status {
        return Err(Error::Numerical(msg.clone()));
    }
    Ok(report)
}

/// Chambolle-Pock on the Monge form with metric `a1 I + a2 J^T J`.
pub fn solve_monge(problem: &Problem, cfg: &SolverConfig) -> Result<(StaggeredField, ConvergenceReport)> {
    if cfg.algorithm != Algorithm::ChambollePock {
        return config(format!("the Monge form is solved by chambolle_pock, not {}", cfg.algorithm.as_str()));
    }
    let (u, r) = Solver::new(problem, cfg.clone())?.run(None);
    Ok((u, check_report(r)?))
}

/// Condat-Vu, PDFP or Yan on the Kantorovich form `a1 KE + a2 H`.
pub fn solve_three_term(problem: &Problem, cfg: &SolverConfig) -> Result<(StaggeredField, ConvergenceReport)> {
    if !cfg.algorithm.is_three_term() {
        return config("the Kantorovich form needs condat_vu, pdfp or yan");
    }
    let (u, r) = Solver::new(problem, cfg.clone())?.run(None);
    Ok((u, check_report(r)?))
}

/// Dispatches on the configured algorithm.
pub fn solve(problem: &Problem, cfg: &SolverConfig) -> Result<(StaggeredField, ConvergenceReport)> {
    if cfg.algorithm.is_three_term() {
        solve_three_term(problem, cfg)
    } else {
        solve_monge(problem, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::parse(a.as_str()), Some(a));
        }
        assert_eq!(Algorithm::parse("adam"), None);
    }

    #[test]
    fn cp_steps_for_unit_norm() {
        let g = GridSpec::new_2d(4, 4, 4).unwrap();
        let (t, s) = auto_step_sizes(&g, Algorithm::ChambollePock, 1.0, 0.0).unwrap();
        assert_eq!((t, s), (0.99, 0.99));
        assert!((t * s - 0.9801).abs() < 1e-15);
    }

    #[test]
    fn three_term_steps_reduce_to_cp_without_smooth_term() {
        let g = GridSpec::new_2d(4, 4, 4).unwrap();
        let cp = auto_step_sizes(&g, Algorithm::ChambollePock, 0.97, 0.0).unwrap();
        for a in [Algorithm::CondatVu, Algorithm::Yan, Algorithm::Pdfp] {
            let (t, s) = auto_step_sizes(&g, a, 0.97, 0.0).unwrap();
            assert!((t - cp.0).abs() < 1e-15 && (s - cp.1).abs() < 1e-15);
        }
    }

    #[test]
    fn three_term_steps_satisfy_conditions() {
        let g = GridSpec::new_2d(4, 4, 4).unwrap();
        for &l in &[0.1, 1.0, 7.5, 300.0, 1e5] {
            for &norm in &[0.5, 0.99, 1.0] {
                let (d, gm) = auto_step_sizes(&g, Algorithm::Yan, norm, l).unwrap();
                assert!(gm * d * norm * norm < 1.0 && gm * l / 2.0 < 1.0);
                let (d, gm) = auto_step_sizes(&g, Algorithm::Pdfp, norm, l).unwrap();
                assert!(gm * d * norm * norm < 1.0 && gm * l / 2.0 < 0.99);
                let (d, gm) = auto_step_sizes(&g, Algorithm::CondatVu, norm, l).unwrap();
                assert!(d > 0.0 && gm * d * norm * norm + gm * l / 2.0 <= 0.99);
            }
        }
    }

    #[test]
    fn interpolation_norm_matches_power_iteration() {
        for g in [GridSpec::new_2d(5, 7, 3).unwrap(), GridSpec::new_1d(16, 8).unwrap()] {
            let est = crate::grid::estimate_operator_norm(&g, 2000, 1).unwrap();
            let exact = interpolation_norm(&g);
            assert!(est <= exact + 1e-12 && exact - est < 1e-4, "{est} vs {exact}");
        }
    }

    #[test]
    fn stopping_rule_cases() {
        assert!(stopping_check_series(&[1.0; 50], 0.0, 50, 1e-6));
        let dec: Vec<f64> = (0..200).map(|k| 0.9f64.powf(k as f64 / 50.0)).collect();
        assert!(!stopping_check_series(&dec, 0.0, 50, 1e-6));
        assert!(!stopping_check_series(&[1.0; 49], 0.0, 50, 1e-6));
        assert!(!stopping_check_series(&[1.0; 50], 1e-3, 50, 1e-6));
    }

    #[test]
    fn stopping_rule_fires_at_predicted_iteration() {
        // c_k = 1 + r^k: the trailing spread is r^(k-w+1) (1 - r^(w-1)) / (1 + r^k).
        let (r, w, tol) = (0.8f64, 10usize, 1e-6);
        let spread = |k: usize| r.powi((k + 1 - w) as i32) * (1.0 - r.powi(w as i32 - 1)) / (1.0 + r.powi(k as i32));
        let predicted = (w - 1..).find(|&k| spread(k) < tol).unwrap();
        let costs: Vec<f64> = (0..200).map(|k| 1.0 + r.powi(k)).collect();
        let fired = (w..=costs.len()).find(|&len| stopping_check_series(&costs[..len], 0.0, w, tol)).unwrap() - 1;
        assert_eq!(fired, predicted);
    }
}
