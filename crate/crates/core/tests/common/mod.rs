//! Dense and brute-force reference implementations shared by the test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syncot::grid::{divergence, BoundaryData, GridSpec, StaggeredField};
use syncot::metric::Spd2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn flatten(u: &StaggeredField) -> Vec<f64> {
    let mut v: Vec<f64> = u.m.iter().copied().collect();
    if let Some(n) = &u.n {
        v.extend(n.iter().copied());
    }
    v.extend(u.rho.iter().copied());
    v
}

pub fn unflatten(v: &[f64], g: &GridSpec) -> StaggeredField {
    let mut u = StaggeredField::zeros(g);
    let mut it = v.iter().copied();
    u.m.iter_mut().for_each(|x| *x = it.next().unwrap());
    if let Some(n) = u.n.as_mut() {
        n.iter_mut().for_each(|x| *x = it.next().unwrap());
    }
    u.rho.iter_mut().for_each(|x| *x = it.next().unwrap());
    assert!(it.next().is_none());
    u
}

pub fn random_field(g: &GridSpec, r: &mut ChaCha8Rng) -> StaggeredField {
    let mut u = StaggeredField::zeros(g);
    u.m.iter_mut().for_each(|x| *x = r.random_range(-1.0..1.0));
    if let Some(n) = u.n.as_mut() {
        n.iter_mut().for_each(|x| *x = r.random_range(-1.0..1.0));
    }
    u.rho.iter_mut().for_each(|x| *x = r.random_range(0.0..2.0));
    u
}

/// Random positive boundary densities with equal mass.
pub fn random_boundary(g: &GridSpec, r: &mut ChaCha8Rng) -> BoundaryData {
    let (m, n, _) = g.centered_shape();
    let mut a = ndarray::Array2::from_shape_fn((m, n), |_| r.random_range(0.1..1.0));
    let mut b = ndarray::Array2::from_shape_fn((m, n), |_| r.random_range(0.1..1.0));
    let area = g.cell_area();
    let sa = a.sum() * area;
    let sb = b.sum() * area;
    a.mapv_inplace(|x| x / sa);
    b.mapv_inplace(|x| x / sb);
    BoundaryData::zero_flux(g, a, b).unwrap()
}

/// Euclidean projection onto `{x : div x = 0, boundary slabs of x = b0}`
/// through the pseudo-inverse of the assembled constraint matrix.
pub fn dense_projection(u: &StaggeredField, b0: &BoundaryData, g: &GridSpec) -> StaggeredField {
    let x = flatten(u);
    let dim = x.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    // Divergence rows, assembled column by column from unit vectors.
    let ncells = g.num_cells();
    let mut d = DMatrix::<f64>::zeros(ncells, dim);
    for c in 0..dim {
        let mut e = vec![0.0; dim];
        e[c] = 1.0;
        let dv = divergence(&unflatten(&e, g), g).unwrap();
        for (r, v) in dv.iter().enumerate() {
            d[(r, c)] = *v;
        }
    }
    for r in 0..ncells {
        rows.push(d.row(r).iter().copied().collect());
        rhs.push(0.0);
    }
    // Boundary rows: select the slab entries of a target field holding b0.
    let mut target = StaggeredField::zeros(g);
    let mut mask = StaggeredField::zeros(g);
    let (m, n, q) = g.centered_shape();
    for j in 0..n {
        for k in 0..q {
            target.m[(0, j, k)] = b0.flux_x0[(j, k)];
            target.m[(m, j, k)] = b0.flux_x1[(j, k)];
            mask.m[(0, j, k)] = 1.0;
            mask.m[(m, j, k)] = 1.0;
        }
    }
    if let (Some(tn), Some(mn)) = (target.n.as_mut(), mask.n.as_mut()) {
        for i in 0..m {
            for k in 0..q {
                tn[(i, 0, k)] = b0.flux_y0.as_ref().unwrap()[(i, k)];
                tn[(i, n, k)] = b0.flux_y1.as_ref().unwrap()[(i, k)];
                mn[(i, 0, k)] = 1.0;
                mn[(i, n, k)] = 1.0;
            }
        }
    }
    for i in 0..m {
        for j in 0..n {
            target.rho[(i, j, 0)] = b0.rho_initial[(i, j)];
            target.rho[(i, j, q)] = b0.rho_terminal[(i, j)];
            mask.rho[(i, j, 0)] = 1.0;
            mask.rho[(i, j, q)] = 1.0;
        }
    }
    let (t, mk) = (flatten(&target), flatten(&mask));
    for c in 0..dim {
        if mk[c] == 1.0 {
            let mut row = vec![0.0; dim];
            row[c] = 1.0;
            rows.push(row);
            rhs.push(t[c]);
        }
    }
    let b = DMatrix::from_row_iterator(rows.len(), dim, rows.into_iter().flatten());
    let c = DVector::from_vec(rhs);
    let xv = DVector::from_vec(x);
    let resid = &b * &xv - c;
    let pinv = b.clone().pseudo_inverse(1e-12).unwrap();
    let p = xv - pinv * resid;
    unflatten(p.as_slice(), g)
}

/// Mean-zero solution of the Neumann problem `-Lap s = rhs - mean(rhs)` from
/// the assembled 7-point operator with a bordered (mean-pinning) system.
pub fn dense_neumann(rhs: &Array3<f64>, g: &GridSpec) -> Array3<f64> {
    let (m, n, q) = g.centered_shape();
    let ncells = m * n * q;
    let idx = |i: usize, j: usize, k: usize| (i * n + j) * q + k;
    let h2 = [g.dx() * g.dx(), g.dy() * g.dy(), g.dt() * g.dt()];
    let mut a = DMatrix::<f64>::zeros(ncells + 1, ncells + 1);
    for i in 0..m {
        for j in 0..n {
            for k in 0..q {
                let r = idx(i, j, k);
                let mut add = |nb: Option<usize>, h: f64| {
                    if let Some(c) = nb {
                        a[(r, r)] += 1.0 / h;
                        a[(r, c)] -= 1.0 / h;
                    }
                };
                add(i.checked_sub(1).map(|i| idx(i, j, k)), h2[0]);
                add((i + 1 < m).then(|| idx(i + 1, j, k)), h2[0]);
                add(j.checked_sub(1).map(|j| idx(i, j, k)), h2[1]);
                add((j + 1 < n).then(|| idx(i, j + 1, k)), h2[1]);
                add(k.checked_sub(1).map(|k| idx(i, j, k)), h2[2]);
                add((k + 1 < q).then(|| idx(i, j, k + 1)), h2[2]);
                a[(r, ncells)] = 1.0;
                a[(ncells, r)] = 1.0;
            }
        }
    }
    let mean = rhs.sum() / ncells as f64;
    let mut b = DVector::<f64>::zeros(ncells + 1);
    for (r, v) in rhs.iter().enumerate() {
        b[r] = v - mean;
    }
    let s = a.lu().solve(&b).unwrap();
    Array3::from_shape_fn((m, n, q), |(i, j, k)| s[idx(i, j, k)])
}

/// `J(m, rho) + |(m, rho) - (m0, rho0)|^2 / (2 tau)` with the convention
/// `J(0, 0) = 0` and `J = +inf` off the closed cone.
pub fn prox_objective(m: [f64; 2], rho: f64, a: &Spd2, m0: [f64; 2], rho0: f64, tau: f64) -> f64 {
    let dist = (m[0] - m0[0]).powi(2) + (m[1] - m0[1]).powi(2) + (rho - rho0).powi(2);
    let j = if rho > 0.0 {
        a.quad(m) / rho
    } else if rho == 0.0 && m == [0.0, 0.0] {
        0.0
    } else {
        f64::INFINITY
    };
    j + dist / (2.0 * tau)
}

/// Minimum of the prox objective by a dense scan over `rho` followed by
/// golden-section refinement; for fixed `rho > 0` the optimal momentum solves
/// `(2A / rho + I / tau) m = m0 / tau`.
pub fn prox_brute_force(m0: [f64; 2], rho0: f64, a: &Spd2, tau: f64) -> f64 {
    let (axx, axy, ayy) = (a.xx, a.xy, a.yy);
    let best_m = |r: f64| -> [f64; 2] {
        let (p, s, t) = (2.0 * axx / r + 1.0 / tau, 2.0 * axy / r, 2.0 * ayy / r + 1.0 / tau);
        let det = p * t - s * s;
        let (b0, b1) = (m0[0] / tau, m0[1] / tau);
        [(t * b0 - s * b1) / det, (p * b1 - s * b0) / det]
    };
    let f = |r: f64| prox_objective(best_m(r), r, a, m0, rho0, tau);
    let mut best = prox_objective([0.0, 0.0], 0.0, a, m0, rho0, tau);
    let hi = rho0.abs() + 10.0 * (m0[0].abs() + m0[1].abs() + 1.0) * (1.0 + tau);
    let samples = 20_000;
    let mut arg = 0;
    let mut vals = Vec::with_capacity(samples);
    for s in 0..samples {
        let r = hi * (s as f64 + 1.0) / samples as f64;
        let v = f(r);
        if v < vals.get(arg).copied().unwrap_or(f64::INFINITY) {
            arg = s;
        }
        vals.push(v);
    }
    let step = hi / samples as f64;
    let (mut lo, mut up) = ((arg as f64) * step, (arg as f64 + 2.0) * step);
    lo = lo.max(1e-300);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = up - gr * (up - lo);
        let d = lo + gr * (up - lo);
        if f(c) < f(d) {
            up = d;
        } else {
            lo = c;
        }
    }
    best = best.min(f(0.5 * (lo + up))).min(vals[arg]);
    best
}

/// Quantile function of a Gaussian truncated to `[0, 1]`.
pub fn truncated_normal_quantile(mu: f64, sigma: f64, u: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let d = Normal::new(mu, sigma).unwrap();
    let (lo, hi) = (d.cdf(0.0), d.cdf(1.0));
    d.inverse_cdf(lo + u * (hi - lo))
}

/// Monte-Carlo `W2^2` between two product measures on the unit square whose
/// coordinates are independent truncated Gaussians. For such measures the
/// optimal plan is the product of the one-dimensional quantile couplings, so
/// each axis contributes `E[(F_a^-1(U) - F_b^-1(U))^2]` with `U` uniform.
pub fn mc_w2sq_truncated(a: (f64, f64, f64), b: (f64, f64, f64), count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut total = 0.0;
    for (ma, mb) in [(a.0, b.0), (a.1, b.1)] {
        let mut acc = 0.0;
        for _ in 0..count {
            let u: f64 = r.random_range(0.0..1.0);
            let d = truncated_normal_quantile(ma, a.2, u) - truncated_normal_quantile(mb, b.2, u);
            acc += d * d;
        }
        total += acc / count as f64;
    }
    total
}
