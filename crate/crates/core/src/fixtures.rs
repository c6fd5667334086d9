//! Analytic test metrics with closed-form curvature.

use crate::error::Result;
use crate::grid::{Axis, Grid2, ScalarField};
use crate::metric::{MetricGrid, MetricJet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    /// `du^2 + ds^2` in `R^3`.
    Flat,
    /// `dθ^2 + sin^2θ dφ^2`, compared against `c = 1`.
    Sphere,
    /// `cosh^2 u (du^2 + ds^2)`, the catenoid, minimal in `R^3`.
    Catenoid,
    /// `du^2 + ds^2` as the Clifford torus, minimal and flat in `S^3(1)`.
    CliffordTorus,
}

impl Fixture {
    pub fn c(&self) -> f64 {
        match self {
            Fixture::Flat | Fixture::Catenoid => 0.0,
            Fixture::Sphere | Fixture::CliffordTorus => 1.0,
        }
    }

    /// A grid of `n x n` samples away from coordinate singularities.
    pub fn grid(&self, n: usize) -> Result<Grid2> {
        let (u, s) = match self {
            Fixture::Sphere => ((0.6, 2.4), (0.0, 1.0)),
            Fixture::Catenoid => ((-1.0, 1.0), (-1.0, 1.0)),
            Fixture::Flat | Fixture::CliffordTorus => ((0.0, 1.0), (-1.0, 1.0)),
        };
        Ok(Grid2::new(
            Axis::uniform(u.0, u.1, n)?,
            Axis::uniform(s.0, s.1, n)?,
        ))
    }

    /// Metric coefficients with their exact first and second partials.
    pub fn jet(&self, u: f64, _s: f64) -> MetricJet {
        match self {
            Fixture::Flat | Fixture::CliffordTorus => MetricJet {
                g: [1.0, 0.0, 1.0],
                ..Default::default()
            },
            Fixture::Sphere => MetricJet {
                g: [1.0, 0.0, u.sin().powi(2)],
                du: [0.0, 0.0, (2.0 * u).sin()],
                duu: [0.0, 0.0, 2.0 * (2.0 * u).cos()],
                ..Default::default()
            },
            Fixture::Catenoid => {
                let e = u.cosh().powi(2);
                let eu = (2.0 * u).sinh();
                let euu = 2.0 * (2.0 * u).cosh();
                MetricJet {
                    g: [e, 0.0, e],
                    du: [eu, 0.0, eu],
                    duu: [euu, 0.0, euu],
                    ..Default::default()
                }
            }
        }
    }

    pub fn curvature(&self, u: f64, _s: f64) -> f64 {
        match self {
            Fixture::Flat | Fixture::CliffordTorus => 0.0,
            Fixture::Sphere => 1.0,
            Fixture::Catenoid => -u.cosh().powi(-4),
        }
    }

    pub fn metric(&self, grid: Grid2) -> Result<MetricGrid> {
        MetricGrid::from_fn(grid, self.c(), |u, s| {
            let j = self.jet(u, s);
            (j.g[0], j.g[1], j.g[2])
        })
    }

    pub fn curvature_field(&self, grid: Grid2) -> ScalarField {
        ScalarField::from_fn(grid, |u, s| self.curvature(u, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_jets_give_exact_curvature() {
        for f in [Fixture::Flat, Fixture::Sphere, Fixture::Catenoid, Fixture::CliffordTorus] {
            for u in [-0.7, 0.3, 0.9, 1.4] {
                let j = f.jet(u, 0.2);
                let k = f.curvature(u, 0.2);
                assert!((j.gauss_curvature() - k).abs() < 1e-13, "{f:?}");
                assert!((j.brioschi_curvature() - k).abs() < 1e-13, "{f:?}");
            }
        }
    }
}
