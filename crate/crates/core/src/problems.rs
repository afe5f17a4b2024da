//! Marginals, couplings and the named figure presets.

use std::path::PathBuf;

use ndarray::Array2;

use crate::error::{config, Error, Result};
use crate::grid::{BoundaryData, GridSpec};
use crate::metric::{Alpha, ColormapName, MapSpec, ScalarField};
use crate::solver::{Algorithm, SolverConfig};

pub use crate::coupling::{coupling_from_map, CouplingOperator, CouplingRepr};

#[derive(Debug, Clone, PartialEq)]
pub enum MarginalSpec {
    /// Gaussian truncated to the unit square; `y0` is ignored in 1D.
    TruncatedGaussian { x0: f64, y0: f64, sigma: f64 },
    /// An `(M, N)` SOT1 array, renormalized to unit mass.
    FromFile(PathBuf),
}

impl MarginalSpec {
    pub fn gaussian(x0: f64, y0: f64, sigma: f64) -> Self {
        Self::TruncatedGaussian { x0, y0, sigma }
    }

    /// Density on the cell centers of `g`, with cell masses summing to 1.
    pub fn resolve(&self, g: &GridSpec) -> Result<Array2<f64>> {
        match self {
            Self::TruncatedGaussian { x0, y0, sigma } => truncated_gaussian(*x0, *y0, *sigma, g),
            Self::FromFile(path) => {
                let a = crate::artifact_io::read_field(path)?;
                let want = [g.m(), g.n()];
                if a.shape() != want {
                    return Err(Error::Input(format!(
                        "{}: marginal has shape {:?}, grid needs {want:?}",
                        path.display(),
                        a.shape()
                    )));
                }
                let a = a.into_dimensionality::<ndarray::Ix2>().expect("rank checked");
                normalize(a, g)
            }
        }
    }
}

fn normalize(a: Array2<f64>, g: &GridSpec) -> Result<Array2<f64>> {
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Input("marginal values must be finite and nonnegative".into()));
    }
    let mass = a.sum() * g.cell_area();
    if !(mass > 0.0) {
        return Err(Error::Input("marginal has zero mass".into()));
    }
    Ok(a / mass)
}

/// `exp(-|x - x0|^2 / (2 sigma^2))` at the cell centers, normalized so that
/// `sum rho * dx * dy = 1`.
pub fn truncated_gaussian(x0: f64, y0: f64, sigma: f64, g: &GridSpec) -> Result<Array2<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) || !x0.is_finite() || !y0.is_finite() {
        return config(format!("gaussian needs finite center and positive sigma, got ({x0}, {y0}, {sigma})"));
    }
    let one_d = g.spatial_dim() == 1;
    let a = Array2::from_shape_fn((g.m(), g.n()), |(i, j)| {
        let c = g.cell_center(i, j);
        let r2 = (c[0] - x0).powi(2) + if one_d { 0.0 } else { (c[1] - y0).powi(2) };
        (-r2 / (2.0 * sigma * sigma)).exp()
    });
    normalize(a, g)
}

/// Everything needed to build a [`Problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub grid: GridSpec,
    pub initial: MarginalSpec,
    pub terminal: MarginalSpec,
    pub map: MapSpec,
    pub alpha: Alpha,
}

/// A resolved problem: grid, boundary data, map and its coupling, weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub grid: GridSpec,
    pub boundary: BoundaryData,
    pub map: MapSpec,
    pub coupling: CouplingOperator,
    pub alpha: Alpha,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        let g = self.grid;
        self.map.validate(g.spatial_dim())?;
        let mu = self.initial.resolve(&g)?;
        let nu = self.terminal.resolve(&g)?;
        let boundary = BoundaryData::zero_flux(&g, mu, nu)?;
        let coupling = coupling_from_map(&self.map, &g)?;
        Ok(Problem { grid: g, boundary, map: self.map.clone(), coupling, alpha: self.alpha })
    }
}

impl Problem {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.build()
    }

    /// Secondary marginals `Pi mu` and `Pi nu` as point masses.
    pub fn secondary_marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let area = self.grid.cell_area();
        let flat = |a: &Array2<f64>| a.iter().map(|v| v * area).collect::<Vec<_>>();
        (
            self.coupling.apply(&flat(&self.boundary.rho_initial)),
            self.coupling.apply(&flat(&self.boundary.rho_terminal)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetId {
    Fig2OneDQuadratic,
    Fig3aBump,
    Fig3bSine,
    Fig4aBumpKantorovich,
    Fig4bCosRadial,
    Fig5aMagmaBump,
    Fig5bCividisWaves,
}

impl PresetId {
    pub const ALL: [PresetId; 7] = [
        Self::Fig2OneDQuadratic,
        Self::Fig3aBump,
        Self::Fig3bSine,
        Self::Fig4aBumpKantorovich,
        Self::Fig4bCosRadial,
        Self::Fig5aMagmaBump,
        Self::Fig5bCividisWaves,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Fig2OneDQuadratic => "fig2_1d_quadratic",
            Self::Fig3aBump => "fig3a_bump",
            Self::Fig3bSine => "fig3b_sine",
            Self::Fig4aBumpKantorovich => "fig4a_bump_kantorovich",
            Self::Fig4bCosRadial => "fig4b_cos_radial",
            Self::Fig5aMagmaBump => "fig5a_magma_bump",
            Self::Fig5bCividisWaves => "fig5b_cividis_waves",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

impl std::fmt::Display for PresetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A preset expanded into a problem description and solver defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub id: PresetId,
    pub problem: ProblemSpec,
    pub solver: SolverConfig,
}

pub fn load_preset(id: PresetId) -> Preset {
    use MarginalSpec as Ms;
    let g2 = |m, n, q| GridSpec::new_2d(m, n, q).expect("preset grid");
    let alpha = |a1: f64, a2: f64| Alpha::new(a1, a2).expect("preset weights");
    let bump = MapSpec::SurfaceGaussianBump { sigma: 0.15 };
    let (grid, initial, terminal, map, alpha, algorithm) = match id {
        PresetId::Fig2OneDQuadratic => (
            GridSpec::new_1d(64, 32).expect("preset grid"),
            Ms::gaussian(0.2, 0.5, 0.05),
            Ms::gaussian(0.8, 0.5, 0.05),
            MapSpec::Quadratic,
            alpha(0.1, 0.9),
            Algorithm::ChambollePock,
        ),
        PresetId::Fig3aBump => (
            g2(32, 32, 16),
            Ms::gaussian(0.3, 0.3, 0.1),
            Ms::gaussian(0.7, 0.7, 0.1),
            bump,
            alpha(0.95, 0.05),
            Algorithm::ChambollePock,
        ),
        PresetId::Fig3bSine => (
            g2(32, 32, 16),
            Ms::gaussian(0.3, 0.3, 0.1),
            Ms::gaussian(0.7, 0.7, 0.1),
            MapSpec::SurfaceSine,
            alpha(0.95, 0.05),
            Algorithm::ChambollePock,
        ),
        PresetId::Fig4aBumpKantorovich => (
            g2(32, 32, 16),
            Ms::gaussian(0.3, 0.3, 0.1),
            Ms::gaussian(0.7, 0.7, 0.1),
            bump,
            alpha(0.05, 0.95),
            Algorithm::Yan,
        ),
        PresetId::Fig4bCosRadial => (
            g2(32, 32, 16),
            Ms::gaussian(0.25, 0.8, 0.08),
            Ms::gaussian(0.8, 0.25, 0.08),
            MapSpec::SurfaceCosRadial,
            alpha(0.05, 0.95),
            Algorithm::Yan,
        ),
        PresetId::Fig5aMagmaBump => (
            g2(32, 32, 16),
            Ms::gaussian(0.25, 0.25, 0.08),
            Ms::gaussian(0.75, 0.75, 0.08),
            MapSpec::colormap(ColormapName::Magma, ScalarField::GaussianBump),
            alpha(0.1, 0.9),
            Algorithm::Yan,
        ),
        PresetId::Fig5bCividisWaves => (
            g2(32, 32, 16),
            Ms::gaussian(0.2, 0.5, 0.08),
            Ms::gaussian(0.8, 0.5, 0.08),
            MapSpec::colormap(ColormapName::Cividis, ScalarField::Waves),
            alpha(0.1, 0.9),
            Algorithm::Yan,
        ),
    };
    let solver = SolverConfig { algorithm, ..preset_solver_defaults() };
    Preset { id, problem: ProblemSpec { grid, initial, terminal, map, alpha }, solver }
}

/// Presets cap warm-started Sinkhorn solves; only the first evaluation runs
/// to tolerance.
fn preset_solver_defaults() -> SolverConfig {
    SolverConfig { sinkhorn_warm_iters: Some(30), ..SolverConfig::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_gaussian_is_symmetric() {
        let g = GridSpec::new_2d(9, 9, 2).unwrap();
        let a = truncated_gaussian(0.5, 0.5, 0.2, &g).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert!((a[[i, j]] - a[[j, i]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gaussian_has_unit_mass() {
        let g = GridSpec::new_2d(17, 13, 2).unwrap();
        let a = truncated_gaussian(0.3, 0.7, 0.1, &g).unwrap();
        assert!((a.sum() * g.cell_area() - 1.0).abs() < 1e-12);
        let g1 = GridSpec::new_1d(40, 2).unwrap();
        let b = truncated_gaussian(0.2, 0.0, 0.05, &g1).unwrap();
        assert!((b.sum() * g1.cell_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn peak_to_corner_ratio() {
        // Center (0.3, 0.3) on a 10x10 grid falls between cells; compare two
        // explicit cells instead of relying on the peak location.
        let g = GridSpec::new_2d(10, 10, 2).unwrap();
        let a = truncated_gaussian(0.3, 0.3, 0.1, &g).unwrap();
        let r2 = |c: [f64; 2]| (c[0] - 0.3).powi(2) + (c[1] - 0.3).powi(2);
        let (p, q) = (g.cell_center(2, 3), g.cell_center(9, 9));
        let want = ((r2(q) - r2(p)) / (2.0 * 0.01)).exp();
        let got = a[[2, 3]] / a[[9, 9]];
        assert!((got / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_preset_builds_with_balanced_secondary_marginals() {
        for id in PresetId::ALL {
            let p = load_preset(id);
            assert_eq!(PresetId::parse(id.as_str()).unwrap(), id);
            let prob = p.problem.build().unwrap();
            let (a, b) = prob.secondary_marginals();
            let (ma, mb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            assert!((ma - mb).abs() < 1e-12, "{id}: {ma} vs {mb}");
        }
        assert!(PresetId::parse("fig9").is_err());
    }

    #[test]
    fn preset_parameters() {
        let p = load_preset(PresetId::Fig2OneDQuadratic);
        assert_eq!((p.problem.grid.m(), p.problem.grid.n(), p.problem.grid.q()), (64, 1, 32));
        assert_eq!(p.problem.map, MapSpec::Quadratic);
        assert_eq!((p.problem.alpha.primary, p.problem.alpha.secondary), (0.1, 0.9));
        let p = load_preset(PresetId::Fig3aBump);
        assert_eq!(p.problem.map, MapSpec::SurfaceGaussianBump { sigma: 0.15 });
        assert_eq!(p.problem.initial, MarginalSpec::gaussian(0.3, 0.3, 0.1));
        let p = load_preset(PresetId::Fig4bCosRadial);
        assert_eq!(p.problem.terminal, MarginalSpec::gaussian(0.8, 0.25, 0.08));
        assert_eq!(p.solver.algorithm, Algorithm::Yan);
    }
}
