//! Static discrete optimal transport between density slices: stabilized
//! Sinkhorn with dual potentials, an exact solver for small instances, and
//! the gradient of the Riemann-sum secondary energy `H`.

use std::sync::OnceLock;

use ndarray::{Array2, Axis};

use crate::coupling::CouplingOperator;
use crate::error::{config, Error, Result};
use crate::grid::GridSpec;
use crate::par;

/// Nonnegative weights on a finite point set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
    total_mass: f64,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Input("measure has no support points".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Input("measure weights must be finite and nonnegative".into()));
        }
        let total_mass = weights.iter().sum();
        Ok(Self { weights, total_mass })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Squared Euclidean distances between the points of one set.
#[derive(Debug)]
pub struct GroundCost {
    points: Vec<f64>,
    dim: usize,
    cost: OnceLock<Vec<f64>>,
}

impl Clone for GroundCost {
    fn clone(&self) -> Self {
        let cost = OnceLock::new();
        if let Some(c) = self.cost.get() {
            let _ = cost.set(c.clone());
        }
        Self { points: self.points.clone(), dim: self.dim, cost }
    }
}

impl GroundCost {
    /// `points` is row-major `n x dim`.
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return config("ground cost points do not match their dimension");
        }
        if points.iter().any(|x| !x.is_finite()) {
            return config("ground cost points must be finite");
        }
        Ok(Self { points, dim, cost: OnceLock::new() })
    }

    pub fn from_coupling(pi: &CouplingOperator) -> Result<Self> {
        Self::new(pi.points().to_vec(), pi.codomain_dim())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `n x n` cost matrix, built on first use.
    pub fn matrix(&self) -> &[f64] {
        self.cost.get_or_init(|| {
            let n = self.len();
            let p = &self.points;
            let d = self.dim;
            let rows = par::map_indexed(n, |i| {
                (0..n)
                    .map(|j| (0..d).map(|k| (p[i * d + k] - p[j * d + k]).powi(2)).sum::<f64>())
                    .collect::<Vec<f64>>()
            });
            rows.concat()
        })
    }

    pub fn max(&self) -> f64 {
        self.matrix().iter().fold(0.0, |m, &c| m.max(c))
    }
}

/// Dual potentials of one transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// `f` sums to zero and `g` carries the opposite shift.
    pub centered: bool,
}

/// Entropic regularization strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    /// Multiple of the largest ground cost entry.
    RelativeToMaxCost(f64),
}

impl Epsilon {
    pub fn resolve(&self, max_cost: f64) -> f64 {
        match *self {
            Self::Absolute(e) => e,
            Self::RelativeToMaxCost(s) => s * max_cost,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            Self::Absolute(e) | Self::RelativeToMaxCost(e) => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: Epsilon,
    pub max_iters: usize,
    /// L1 tolerance on the marginal violation of the normalized plan.
    pub tol: f64,
    pub epsilon_scaling: bool,
    /// Over-relaxation factor on the final stage, in `[1, 2)`; falls back to 1
    /// whenever the marginal error grows.
    pub overrelaxation: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self { epsilon: Epsilon::RelativeToMaxCost(1e-3), max_iters: 5000, tol: 1e-9, epsilon_scaling: true, overrelaxation: 1.0 }
    }
}

impl SinkhornParams {
    pub fn validate(&self) -> Result<()> {
        let e = self.epsilon.value();
        if !(e.is_finite() && e > 0.0) {
            return config(format!("sinkhorn epsilon must be positive, got {e}"));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return config("sinkhorn tolerance and iteration cap must be positive");
        }
        if !(1.0..2.0).contains(&self.overrelaxation) {
            return config(format!("sinkhorn overrelaxation must lie in [1, 2), got {}", self.overrelaxation));
        }
        Ok(())
    }
}

/// Everything one Sinkhorn solve produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSolution {
    pub potentials: PotentialPair,
    /// `<P, C>` for the implied plan `P`.
    pub transport_cost: f64,
    /// `<f, a> + <g, b>`: the regularized cost whose gradient in `a` is `f`.
    pub value: f64,
    /// Final L1 violation of the row marginal (relative to the mass).
    pub marginal_error: f64,
    pub iterations: usize,
    /// The target epsilon actually used.
    pub epsilon: f64,
}

/// Kernel entries below `exp(-TRUNCATION)` are dropped.
const TRUNCATION: f64 = 60.0;
/// Scalings are absorbed into the potentials once `|ln u|` exceeds this, so
/// a dropped entry never contributes more than `exp(-TRUNCATION + 2 * 15)`.
const SCALING_RANGE: (f64, f64) = (3.059023205018258e-7, 3.269017372472496e6);

fn in_range(x: f64) -> bool {
    x.is_finite() && (SCALING_RANGE.0..=SCALING_RANGE.1).contains(&x)
}

/// Log-sum-exp update `f_i = -eps log sum_j b_j exp((g_j - C_ij) / eps)`.
fn c_transform(out: &mut [f64], other: &[f64], weights: &[f64], cost: &[f64], eps: f64, transpose: bool) {
    let (n, m) = (out.len(), other.len());
    let logw: Vec<f64> = weights.iter().map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    let mut z = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let mut hi = f64::NEG_INFINITY;
        for j in 0..m {
            let c = if transpose { cost[j * n + i] } else { cost[i * m + j] };
            z[j] = (other[j] - c) / eps + logw[j];
            hi = hi.max(z[j]);
        }
        let s: f64 = z.iter().filter(|v| v.is_finite()).map(|v| (v - hi).exp()).sum();
        *o = -eps * (hi + s.ln());
    }
}

/// Over-relaxed scaling update `old^(1 - w) new^w`.
fn relax(old: f64, new: f64, omega: f64) -> f64 {
    if omega == 1.0 {
        new
    } else {
        old.powf(1.0 - omega) * new.powf(omega)
    }
}

/// Sinkhorn state with potentials absorbed into a truncated kernel
/// `K_ij = exp((f_i + g_j - C_ij) / eps)` stored row-compressed; the plan is
/// `P_ij = a_i b_j K_ij u_i v_j`.
struct Absorbed<'a> {
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a [f64],
    f: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    k: Vec<f64>,
    eps: f64,
    omega: f64,
}

impl<'a> Absorbed<'a> {
    fn new(a: &'a [f64], b: &'a [f64], cost: &'a [f64], f: Vec<f64>, g: Vec<f64>, eps: f64) -> Self {
        let (n, m) = (a.len(), b.len());
        Self {
            a,
            b,
            cost,
            f,
            g,
            u: vec![1.0; n],
            v: vec![1.0; m],
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            k: Vec::new(),
            eps,
            omega: 1.0,
        }
    }

    fn rebuild(&mut self) {
        let m = self.b.len();
        self.cols.clear();
        self.k.clear();
        let cut = -TRUNCATION;
        for i in 0..self.a.len() {
            let fi = self.f[i];
            if self.a[i] > 0.0 {
                let row = &self.cost[i * m..(i + 1) * m];
                for (j, (&c, &gj)) in row.iter().zip(&self.g).enumerate() {
                    let z = (fi + gj - c) / self.eps;
                    if z > cut && self.b[j] > 0.0 {
                        self.cols.push(j as u32);
                        self.k.push(z.exp());
                    }
                }
            }
            self.row_ptr[i + 1] = self.k.len();
        }
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.k[r])
    }

    fn absorb(&mut self) {
        for (f, u) in self.f.iter_mut().zip(&self.u) {
            *f += self.eps * u.ln();
        }
        for (g, v) in self.g.iter_mut().zip(&self.v) {
            *g += self.eps * v.ln();
        }
    }

    /// Exact log-domain row update; leaves `u = v = 1` and a fresh kernel.
    fn lse_rows(&mut self) {
        let mut f = vec![0.0; self.a.len()];
        c_transform(&mut f, &self.g, self.b, self.cost, self.eps, false);
        self.f = f;
        self.rebuild();
    }

    fn lse_cols(&mut self) {
        let mut g = vec![0.0; self.b.len()];
        c_transform(&mut g, &self.f, self.a, self.cost, self.eps, true);
        self.g = g;
        self.rebuild();
    }

    /// `u = 1 / K (b v)`; returns the L1 row-marginal error before the update.
    fn update_u(&mut self) -> f64 {
        let bv: Vec<f64> = self.b.iter().zip(&self.v).map(|(b, v)| b * v).collect();
        let mut err = 0.0;
        let mut ok = true;
        for i in 0..self.a.len() {
            if self.a[i] == 0.0 {
                continue;
            }
            let (cols, k) = self.row(i);
            let s: f64 = cols.iter().zip(k).map(|(&j, kij)| kij * bv[j as usize]).sum();
            err += self.a[i] * (self.u[i] * s - 1.0).abs();
            let u = relax(self.u[i], 1.0 / s, self.omega);
            self.u[i] = u;
            ok &= in_range(u);
        }
        if !ok {
            self.u.iter_mut().for_each(|u| {
                if !(u.is_finite() && *u > 0.0) {
                    *u = 1.0;
                }
            });
            self.absorb();
            self.lse_rows();
        }
        err
    }

    fn update_v(&mut self) {
        let m = self.b.len();
        let mut t = vec![0.0; m];
        for i in 0..self.a.len() {
            let au = self.a[i] * self.u[i];
            if au != 0.0 {
                let (cols, k) = self.row(i);
                for (&j, kij) in cols.iter().zip(k) {
                    t[j as usize] += kij * au;
                }
            }
        }
        let mut ok = true;
        for (j, tj) in t.iter().enumerate() {
            if self.b[j] == 0.0 {
                continue;
            }
            self.v[j] = relax(self.v[j], 1.0 / tj, self.omega);
            ok &= in_range(self.v[j]);
        }
        if !ok {
            self.v.iter_mut().for_each(|v| {
                if !(v.is_finite() && *v > 0.0) {
                    *v = 1.0;
                }
            });
            self.absorb();
            self.lse_cols();
        }
    }

    fn plan_cost(&self) -> f64 {
        let m = self.b.len();
        let mut total = 0.0;
        for i in 0..self.a.len() {
            let ai = self.a[i] * self.u[i];
            let (cols, k) = self.row(i);
            for (&j, kij) in cols.iter().zip(k) {
                let j = j as usize;
                total += ai * self.b[j] * self.v[j] * kij * self.cost[i * m + j];
            }
        }
        total
    }
}

/// Warm-start potentials and whether hitting the iteration cap is an error.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SolveMode<'w> {
    pub warm: Option<(&'w [f64], &'w [f64])>,
    pub strict: bool,
    pub cap: Option<usize>,
}

/// Core solver on normalized weights `a`, `b` (each summing to 1).
pub(crate) fn sinkhorn_normalized(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    max_cost: f64,
    p: &SinkhornParams,
    mode: SolveMode<'_>,
) -> Result<SinkhornSolution> {
    let eps = p.epsilon.resolve(max_cost);
    if !(eps > 0.0 && eps.is_finite()) {
        return config(format!("resolved sinkhorn epsilon {eps} is not positive"));
    }
    let (n, m) = (a.len(), b.len());
    let mut stages = vec![eps];
    if p.epsilon_scaling && mode.warm.is_none() {
        let mut e = max_cost / 10.0;
        let mut pre = Vec::new();
        while e > eps {
            pre.push(e);
            e *= 0.5;
        }
        pre.push(eps);
        stages = pre;
    }
    let (f, g) = match mode.warm {
        Some((f, g)) if f.len() == n && g.len() == m => (f.to_vec(), g.to_vec()),
        _ => (vec![0.0; n], vec![0.0; m]),
    };
    let mut st = Absorbed::new(a, b, cost, f, g, stages[0]);
    let cap = mode.cap.unwrap_or(p.max_iters);
    let mut iters = 0;
    let mut err = f64::INFINITY;
    let last = stages.len() - 1;
    for (s, &e) in stages.iter().enumerate() {
        st.eps = e;
        st.rebuild();
        st.omega = if s == last { p.overrelaxation } else { 1.0 };
        let mut prev = f64::INFINITY;
        let stol = if s == last { p.tol } else { p.tol.max(1e-3) };
        // The row error is measured on a plan whose columns were just made
        // exact, and the loop ends with exact columns again.
        loop {
            st.update_v();
            iters += 1;
            err = st.update_u();
            if err > 2.0 * prev {
                st.omega = 1.0;
            }
            prev = err;
            if err <= stol || iters >= cap {
                break;
            }
        }
        st.omega = 1.0;
        st.update_v();
        if s == last {
            break;
        }
        st.absorb();
    }
    if err > p.tol && mode.strict {
        return Err(Error::Convergence { iters, residual: err });
    }
    let transport_cost = st.plan_cost();
    st.absorb();
    let Absorbed { mut f, mut g, .. } = st;
    let shift = f.iter().sum::<f64>() / n as f64;
    f.iter_mut().for_each(|x| *x -= shift);
    g.iter_mut().for_each(|x| *x += shift);
    let value = f.iter().zip(a).map(|(x, w)| x * w).sum::<f64>() + g.iter().zip(b).map(|(x, w)| x * w).sum::<f64>();
    Ok(SinkhornSolution {
        potentials: PotentialPair { f, g, centered: true },
        transport_cost,
        value,
        marginal_error: err,
        iterations: iters,
        epsilon: eps,
    })
}

fn check_balance(a: &DiscreteMeasure, b: &DiscreteMeasure, rel: f64) -> Result<f64> {
    let (ma, mb) = (a.total_mass(), b.total_mass());
    if !(ma > 0.0 && mb > 0.0) {
        return Err(Error::Input("transported measures must have positive mass".into()));
    }
    if (ma - mb).abs() > rel * ma.max(mb) {
        return Err(Error::Input(format!("measure masses differ: {ma:e} vs {mb:e}")));
    }
    Ok(0.5 * (ma + mb))
}

/// Entropic transport between `a` and `b` on the points of `c`.
///
/// Both measures are rescaled to their common mean mass; the returned costs
/// are for that mass and the potentials are those of the normalized problem,
/// which are also the gradients of the returned `value` along
/// mass-preserving perturbations.
pub fn sinkhorn_log(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    c: &GroundCost,
    p: &SinkhornParams,
) -> Result<SinkhornSolution> {
    p.validate()?;
    if a.len() != c.len() || b.len() != c.len() {
        return Err(Error::Input("measure support does not match the ground cost".into()));
    }
    let mass = check_balance(a, b, 1e-8)?;
    let an: Vec<f64> = a.weights().iter().map(|w| w / a.total_mass()).collect();
    let bn: Vec<f64> = b.weights().iter().map(|w| w / b.total_mass()).collect();
    let mut sol = sinkhorn_normalized(&an, &bn, c.matrix(), c.max(), p, SolveMode { strict: true, ..Default::default() })?;
    sol.transport_cost *= mass;
    sol.value *= mass;
    Ok(sol)
}

fn centered(mut x: Vec<f64>) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    x
}

/// Regularized `W2^2` and its gradients: the separately centered potentials.
pub fn w2sq_grad(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    c: &GroundCost,
    p: &SinkhornParams,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let sol = sinkhorn_log(a, b, c, p)?;
    let PotentialPair { f, g, .. } = sol.potentials;
    Ok((sol.value, centered(f), centered(g)))
}

/// Exact optimal plan with certifying dual potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPlan {
    /// Row-major `n x n`.
    pub plan: Vec<f64>,
    pub cost: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Exact discrete optimal transport by successive shortest paths.
///
/// Intended for small instances (at most 64 points). Duals come from shortest
/// path distances in the final residual network and satisfy complementary
/// slackness with the returned plan.
pub fn exact_ot_small(a: &DiscreteMeasure, b: &DiscreteMeasure, c: &GroundCost) -> Result<ExactPlan> {
    let n = c.len();
    if n > 64 {
        return config(format!("exact transport is limited to 64 points, got {n}"));
    }
    if a.len() != n || b.len() != n {
        return Err(Error::Input("measure support does not match the ground cost".into()));
    }
    check_balance(a, b, 1e-8)?;
    let cost = c.matrix();
    let supply: Vec<f64> = a.weights().to_vec();
    let scale = a.total_mass() / b.total_mass();
    let demand: Vec<f64> = b.weights().iter().map(|w| w * scale).collect();
    exact_transport(&supply, &demand, cost)
}

/// Residual network on `source, sources 0..n, sinks 0..m, sink`.
fn exact_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<ExactPlan> {
    let (n, m) = (supply.len(), demand.len());
    let total: f64 = supply.iter().sum();
    let zero = 1e-15 * total.max(1e-300);
    let mut left_s = supply.to_vec();
    let mut left_d = demand.to_vec();
    let mut flow = vec![0.0; n * m];

    // Node ids: 0..n sources, n..n+m sinks.
    let nodes = n + m;
    let shortest = |left_s: &[f64], flow: &[f64], from_all: bool| -> (Vec<f64>, Vec<usize>) {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred = vec![usize::MAX; nodes];
        for i in 0..n {
            if from_all || left_s[i] > zero {
                dist[i] = 0.0;
            }
        }
        if from_all {
            dist[n..].fill(0.0);
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + cost[i * m + j];
                        if d < dist[n + j] - 1e-15 * d.abs().max(1.0) {
                            dist[n + j] = d;
                            pred[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[i * m + j] > zero {
                            let d = dist[n + j] - cost[i * m + j];
                            if d < dist[i] - 1e-15 * d.abs().max(1.0) {
                                dist[i] = d;
                                pred[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (dist, pred)
    };

    let mut rounds = 0;
    while left_s.iter().any(|&s| s > zero) {
        rounds += 1;
        if rounds > 100 * (n + m) * (n + m) {
            return Err(Error::Numerical("exact transport did not terminate".into()));
        }
        let (dist, pred) = shortest(&left_s, &flow, false);
        let Some(end) = (0..m)
            .filter(|&j| left_d[j] > zero && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]))
        else {
            break;
        };
        // Walk back to the starting source, collecting the bottleneck.
        let mut path = vec![n + end];
        let mut node = n + end;
        let mut amount = left_d[end];
        while pred[node] != usize::MAX {
            let p = pred[node];
            if node < n {
                // reverse arc sink p -> source node
                amount = amount.min(flow[node * m + (p - n)]);
            }
            path.push(p);
            node = p;
        }
        amount = amount.min(left_s[node]);
        left_s[node] -= amount;
        left_d[end] -= amount;
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < n {
                flow[from * m + (to - n)] += amount;
            } else {
                flow[to * m + (from - n)] -= amount;
            }
        }
    }
    flow.iter_mut().for_each(|x| {
        if *x < zero {
            *x = 0.0;
        }
    });

    let (dist, _) = shortest(&left_s, &flow, true);
    let f: Vec<f64> = dist[..n].iter().map(|d| -d).collect();
    let g: Vec<f64> = dist[n..].to_vec();
    let cost_total = flow.iter().zip(cost).map(|(p, c)| p * c).sum();
    Ok(ExactPlan { plan: flow, cost: cost_total, f, g })
}

/// Value and gradient of the Riemann-sum secondary energy
/// `H = (1/dt) sum_k W(xi_k, xi_{k+1})` with `xi_k = Pi (rho_k dx dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HEvaluation {
    pub value: f64,
    /// Shape `(M*N, Q+1)`, one column per time face.
    pub grad: Array2<f64>,
    /// Sinkhorn iterations summed over pairs.
    pub iterations: usize,
}

/// Warm-started evaluator of `H` over a fixed coupling.
#[derive(Debug, Clone)]
pub struct TransportPenalty {
    pi: CouplingOperator,
    cost: GroundCost,
    params: SinkhornParams,
    grid: GridSpec,
    /// Per-pair potentials from the previous evaluation.
    warm: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    /// Iteration cap for warm-started solves; `None` solves to tolerance.
    warm_iters: Option<usize>,
}

impl TransportPenalty {
    pub fn new(pi: CouplingOperator, params: SinkhornParams, g: &GridSpec) -> Result<Self> {
        params.validate()?;
        if pi.n_primary() != g.m() * g.n() {
            return config("coupling does not match the number of grid cells");
        }
        let cost = GroundCost::from_coupling(&pi)?;
        Ok(Self { pi, cost, params, grid: *g, warm: vec![None; g.q()], warm_iters: None })
    }

    /// Caps Sinkhorn iterations once potentials from a previous call exist;
    /// the solve then refines rather than restarts.
    pub fn with_warm_iters(mut self, iters: Option<usize>) -> Self {
        self.warm_iters = iters;
        self
    }

    pub fn set_warm_iters(&mut self, iters: Option<usize>) {
        self.warm_iters = iters;
    }

    pub fn warm_iters(&self) -> Option<usize> {
        self.warm_iters
    }

    pub fn coupling(&self) -> &CouplingOperator {
        &self.pi
    }

    pub fn ground_cost(&self) -> &GroundCost {
        &self.cost
    }

    pub fn params(&self) -> &SinkhornParams {
        &self.params
    }

    pub fn reset(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }

    /// Evaluates `H` and its gradient on time-face slices `(M*N, Q+1)`.
    pub fn evaluate(&mut self, rho_slices: &Array2<f64>) -> Result<HEvaluation> {
        let g = self.grid;
        let cells = g.m() * g.n();
        if rho_slices.dim() != (cells, g.q() + 1) {
            return config(format!(
                "density slices have shape {:?}, expected ({cells}, {})",
                rho_slices.dim(),
                g.q() + 1
            ));
        }
        let area = g.cell_area();
        let xi: Vec<Vec<f64>> = rho_slices
            .axis_iter(Axis(1))
            .map(|col| {
                let masses: Vec<f64> = col.iter().map(|r| r.max(0.0) * area).collect();
                self.pi.apply(&masses)
            })
            .collect();
        for (k, x) in xi.iter().enumerate() {
            if !(x.iter().sum::<f64>() > 0.0) {
                return Err(Error::Input(format!("density slice {k} carries no mass")));
            }
        }
        let cost = self.cost.matrix();
        let max_cost = self.cost.max();
        let params = self.params;
        let warm_iters = self.warm_iters;
        let mut results: Vec<Option<Result<SinkhornSolution>>> = (0..g.q()).map(|_| None).collect();
        let mut jobs: Vec<_> = self.warm.iter_mut().zip(results.iter_mut()).collect();
        par::for_each_indexed(&mut jobs, |k, (warm, out)| {
            let (a, b) = (&xi[k], &xi[k + 1]);
            let (ma, mb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
            if (ma - mb).abs() > 1e-6 * ma.max(mb) {
                **out = Some(Err(Error::Numerical(format!(
                    "slices {k} and {} differ in mass: {ma:e} vs {mb:e}",
                    k + 1
                ))));
                return;
            }
            let an: Vec<f64> = a.iter().map(|w| w / ma).collect();
            let bn: Vec<f64> = b.iter().map(|w| w / mb).collect();
            let mode = match warm.as_ref() {
                Some((f, gg)) => SolveMode { warm: Some((f, gg)), strict: warm_iters.is_none(), cap: warm_iters },
                None => SolveMode { strict: warm_iters.is_none(), ..Default::default() },
            };
            let res = sinkhorn_normalized(&an, &bn, cost, max_cost, &params, mode).map(|mut s| {
                let mass = 0.5 * (ma + mb);
                s.transport_cost *= mass;
                s.value *= mass;
                s
            });
            if let Ok(s) = &res {
                **warm = Some((s.potentials.f.clone(), s.potentials.g.clone()));
            }
            **out = Some(res);
        });

        let mut grad = Array2::zeros((cells, g.q() + 1));
        let mut value = 0.0;
        let mut iterations = 0;
        let w = area / g.dt();
        for (k, r) in results.into_iter().enumerate() {
            let sol = r.expect("every pair evaluated")?;
            value += sol.value / g.dt();
            iterations += sol.iterations;
            let PotentialPair { f, g: gp, .. } = sol.potentials;
            for (slot, pot) in [(k, centered(f)), (k + 1, centered(gp))] {
                let back = self.pi.apply_transpose(&pot);
                let mut col = grad.column_mut(slot);
                col.iter_mut().zip(&back).for_each(|(d, s)| *d += w * s);
            }
        }
        Ok(HEvaluation { value, grad, iterations })
    }
}

/// Cold evaluation of `H` and its gradient.
pub fn grad_h(
    rho_slices: &Array2<f64>,
    pi: &CouplingOperator,
    p: &SinkhornParams,
    g: &GridSpec,
) -> Result<HEvaluation> {
    TransportPenalty::new(pi.clone(), *p, g)?.evaluate(rho_slices)
}
