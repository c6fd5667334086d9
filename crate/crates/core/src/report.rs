//! Residual statistics and pass/fail records.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::grid::{GridMeta, ScalarField};

/// Reference spacing at which base tolerances are quoted.
pub const H_REF: f64 = 1e-2;

/// Width of the boundary layer excluded from pass/fail statistics.
pub const BOUNDARY_LAYER: usize = 2;

/// Scales a tolerance quoted at [`H_REF`] to spacing `h` at second order.
pub fn refinement_tolerance(base: f64, h: f64) -> f64 {
    base * (h / H_REF).powi(2)
}

/// Spacing of the default 201-sample grid on a unit span.
pub const H_DEFAULT: f64 = 5e-3;

/// Relaxes a tolerance quoted at spacing `h_ref` on grids coarser than it,
/// at the given order; finer grids keep the base value.
pub fn coarse_tolerance(base: f64, h: f64, h_ref: f64, order: i32) -> f64 {
    base * (h / h_ref).powi(order).max(1.0)
}

/// Rounding budget of a second-order Laplacian applied to a field that
/// already holds one: ulp-level noise grows as `h^{-4}`, with `h` the
/// smallest step. `scale` is the magnitude the noise is relative to.
pub fn nested_rounding_floor(scale: f64, h_min: f64) -> f64 {
    64.0 * f64::EPSILON * scale / h_min.powi(4)
}

/// Max/L² statistics of a residual over an interior window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max: f64,
    /// Root mean square over the evaluated points.
    pub l2: f64,
    pub argmax: Option<(usize, usize)>,
    /// Largest residual inside the excluded boundary layer.
    pub boundary_max: f64,
    pub count: usize,
}

impl ResidualStats {
    /// Statistics of `|r|` over points at least `margin` from every edge and
    /// not masked out. The margin shrinks on tiny grids so the centre point
    /// is always evaluated. Non-finite residuals count as infinite.
    pub fn of(values: &Array2<f64>, margin: usize, mask: Option<&Array2<bool>>) -> Self {
        let (nu, ns) = values.dim();
        let mu = margin.min(nu.saturating_sub(1) / 2);
        let ms = margin.min(ns.saturating_sub(1) / 2);
        let mut max = 0.0f64;
        let mut argmax = None;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut boundary_max = 0.0f64;
        for ((i, j), &v) in values.indexed_iter() {
            if let Some(m) = mask {
                if !m[[i, j]] {
                    continue;
                }
            }
            let a = if v.is_finite() { v.abs() } else { f64::INFINITY };
            let interior = i >= mu && i + mu < nu && j >= ms && j + ms < ns;
            if interior {
                if argmax.is_none() || a > max {
                    max = a;
                    argmax = Some((i, j));
                }
                sum += a * a;
                count += 1;
            } else {
                boundary_max = boundary_max.max(a);
            }
        }
        ResidualStats {
            max,
            l2: if count > 0 {
                (sum / count as f64).sqrt()
            } else {
                0.0
            },
            argmax,
            boundary_max,
            count,
        }
    }

    pub fn of_field(field: &ScalarField, margin: usize) -> Self {
        Self::of(&field.values, margin, None)
    }

    pub fn of_slice(values: &[f64], margin: usize) -> Self {
        let a = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("column shape");
        Self::of(&a, margin, None)
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub max_residual: f64,
    pub l2_residual: f64,
    /// `(u, s)` coordinates of the largest interior residual.
    pub location: Option<(f64, f64)>,
    pub boundary_max: f64,
    pub grid: Option<GridMeta>,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Report {
    pub fn from_stats(
        name: impl Into<String>,
        stats: ResidualStats,
        grid: Option<(GridMeta, &crate::grid::Grid2)>,
        tolerance: f64,
    ) -> Self {
        let location = match (stats.argmax, grid) {
            (Some((i, j)), Some((_, g))) => Some((g.u.value(i), g.s.value(j))),
            _ => None,
        };
        Report {
            name: name.into(),
            max_residual: stats.max,
            l2_residual: stats.l2,
            location,
            boundary_max: stats.boundary_max,
            grid: grid.map(|(m, _)| m),
            tolerance,
            passed: stats.max.is_finite() && stats.max <= tolerance,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Report for a field residual with the standard boundary exclusion.
    pub fn from_field(name: impl Into<String>, residual: &ScalarField, tolerance: f64) -> Self {
        let stats = ResidualStats::of_field(residual, BOUNDARY_LAYER);
        Self::from_stats(name, stats, Some((residual.grid.meta(), &residual.grid)), tolerance)
    }

    /// A scalar check with no grid.
    pub fn scalar(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        let a = if value.is_finite() { value.abs() } else { f64::INFINITY };
        Report {
            name: name.into(),
            max_residual: a,
            l2_residual: a,
            location: None,
            boundary_max: 0.0,
            grid: None,
            tolerance,
            passed: a <= tolerance,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_detail(mut self, key: impl Into<String>, v: f64) -> Self {
        self.details.insert(key.into(), v);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_layer_is_reported_separately() {
        let mut a = Array2::zeros((7, 7));
        a[[0, 3]] = 5.0;
        a[[3, 3]] = -2.0;
        let st = ResidualStats::of(&a, 2, None);
        assert_eq!(st.max, 2.0);
        assert_eq!(st.argmax, Some((3, 3)));
        assert_eq!(st.boundary_max, 5.0);
        assert_eq!(st.count, 9);
    }

    #[test]
    fn tiny_grids_keep_the_centre() {
        let a = Array2::from_elem((3, 3), 1.0);
        let st = ResidualStats::of(&a, 2, None);
        assert_eq!(st.count, 1);
        assert_eq!(st.max, 1.0);
    }

    #[test]
    fn nan_fails() {
        let r = Report::scalar("x", f64::NAN, 1.0);
        assert!(!r.passed);
    }
}
