//! Linear maps from primary cell masses to secondary point masses.

use crate::error::{config, Result};
use crate::grid::GridSpec;
use crate::metric::{eval_map, MapSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingRepr {
    /// Each primary cell sends its mass to its own image point.
    IdentityOnMappedGrid,
    /// Triplets `(row = secondary index, col = primary index, value)`.
    Sparse { rows: Vec<usize>, cols: Vec<usize>, values: Vec<f64> },
    /// Row-major `n_secondary x n_primary`.
    Dense(Vec<f64>),
}

/// `Pi` together with the coordinates of the secondary points it maps onto.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOperator {
    repr: CouplingRepr,
    n_primary: usize,
    /// Row-major `n_secondary x codomain_dim`.
    points: Vec<f64>,
    codomain_dim: usize,
}

impl CouplingOperator {
    pub fn new(repr: CouplingRepr, n_primary: usize, points: Vec<f64>, codomain_dim: usize) -> Result<Self> {
        if codomain_dim == 0 || !points.len().is_multiple_of(codomain_dim) {
            return config("secondary point array does not match the codomain dimension");
        }
        if points.iter().any(|x| !x.is_finite()) {
            return config("secondary points must be finite");
        }
        let ny = points.len() / codomain_dim;
        let mut col_sums = vec![0.0; n_primary];
        match &repr {
            CouplingRepr::IdentityOnMappedGrid => {
                if ny != n_primary {
                    return config("identity coupling needs one secondary point per primary cell");
                }
                col_sums.fill(1.0);
            }
            CouplingRepr::Sparse { rows, cols, values } => {
                if rows.len() != cols.len() || rows.len() != values.len() {
                    return config("sparse coupling triplet arrays differ in length");
                }
                for ((&r, &c), &v) in rows.iter().zip(cols).zip(values) {
                    if r >= ny || c >= n_primary {
                        return config(format!("sparse coupling entry ({r}, {c}) out of range"));
                    }
                    if !(v >= 0.0 && v.is_finite()) {
                        return config("coupling entries must be finite and nonnegative");
                    }
                    col_sums[c] += v;
                }
            }
            CouplingRepr::Dense(d) => {
                if d.len() != ny * n_primary {
                    return config("dense coupling has the wrong number of entries");
                }
                if d.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return config("coupling entries must be finite and nonnegative");
                }
                for row in d.chunks(n_primary) {
                    for (c, v) in row.iter().enumerate() {
                        col_sums[c] += v;
                    }
                }
            }
        }
        if col_sums.iter().any(|&s| s > 1.0 + 1e-12) {
            return config("coupling column sums must not exceed 1 (mass non-amplifying)");
        }
        Ok(Self { repr, n_primary, points, codomain_dim })
    }

    pub fn repr(&self) -> &CouplingRepr {
        &self.repr
    }

    pub fn n_primary(&self) -> usize {
        self.n_primary
    }

    pub fn n_secondary(&self) -> usize {
        self.points.len() / self.codomain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    /// Row-major secondary coordinates.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `Pi x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_primary, "coupling input length");
        match &self.repr {
            CouplingRepr::IdentityOnMappedGrid => x.to_vec(),
            CouplingRepr::Sparse { rows, cols, values } => {
                let mut y = vec![0.0; self.n_secondary()];
                for ((&r, &c), &v) in rows.iter().zip(cols).zip(values) {
                    y[r] += v * x[c];
                }
                y
            }
            CouplingRepr::Dense(d) => d
                .chunks(self.n_primary)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// `Pi^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_secondary(), "coupling adjoint input length");
        match &self.repr {
            CouplingRepr::IdentityOnMappedGrid => y.to_vec(),
            CouplingRepr::Sparse { rows, cols, values } => {
                let mut x = vec![0.0; self.n_primary];
                for ((&r, &c), &v) in rows.iter().zip(cols).zip(values) {
                    x[c] += v * y[r];
                }
                x
            }
            CouplingRepr::Dense(d) => {
                let mut x = vec![0.0; self.n_primary];
                for (row, &yr) in d.chunks(self.n_primary).zip(y) {
                    for (xc, v) in x.iter_mut().zip(row) {
                        *xc += v * yr;
                    }
                }
                x
            }
        }
    }
}

/// Coupling induced by a map: each cell's mass lands on the image of its center.
pub fn coupling_from_map(spec: &MapSpec, g: &GridSpec) -> Result<CouplingOperator> {
    spec.validate(g.spatial_dim())?;
    let d = g.spatial_dim();
    let dim = spec.codomain_dim(d);
    let mut points = Vec::with_capacity(g.m() * g.n() * dim);
    for i in 0..g.m() {
        for j in 0..g.n() {
            let c = g.cell_center(i, j);
            points.extend(eval_map(spec, &c[..d])?);
        }
    }
    CouplingOperator::new(CouplingRepr::IdentityOnMappedGrid, g.m() * g.n(), points, dim)
}
