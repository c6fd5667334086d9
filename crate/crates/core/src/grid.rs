//! Uniform rectangular `(u, s)` grids and scalar fields sampled on them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly spaced samples `start + i * step`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    pub fn uniform(start: f64, end: f64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::mismatch("axis must have at least one sample"));
        }
        if !(start.is_finite() && end.is_finite()) || end < start {
            return Err(Error::mismatch(format!(
                "invalid axis range [{start}, {end}]"
            )));
        }
        let step = if len > 1 {
            (end - start) / (len - 1) as f64
        } else {
            0.0
        };
        if len > 1 && step <= 0.0 {
            return Err(Error::mismatch("axis range must have positive length"));
        }
        Ok(Axis { start, step, len })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.value(i)).collect()
    }

    pub fn end(&self) -> f64 {
        self.value(self.len.saturating_sub(1))
    }
}

/// Grid metadata as it appears in serialized reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub nu: usize,
    pub ns: usize,
    pub hu: f64,
    pub hs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub u: Axis,
    pub s: Axis,
}

impl Grid2 {
    pub fn new(u: Axis, s: Axis) -> Self {
        Grid2 { u, s }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.len, self.s.len)
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            nu: self.u.len,
            ns: self.s.len,
            hu: self.u.step,
            hs: self.s.step,
        }
    }

    /// The coarser of the two spacings.
    pub fn h(&self) -> f64 {
        self.u.step.max(self.s.step)
    }

    pub fn require_samples(&self, needed: usize) -> Result<()> {
        let got = self.u.len.min(self.s.len);
        if got < needed {
            return Err(Error::GridTooSmall { needed, got });
        }
        Ok(())
    }

    pub fn same_as(&self, other: &Grid2) -> bool {
        self.u.len == other.u.len
            && self.s.len == other.s.len
            && (self.u.start - other.u.start).abs() <= 1e-12 * (1.0 + self.u.start.abs())
            && (self.u.step - other.u.step).abs() <= 1e-12 * (1.0 + self.u.step.abs())
            && (self.s.start - other.s.start).abs() <= 1e-12 * (1.0 + self.s.start.abs())
            && (self.s.step - other.s.step).abs() <= 1e-12 * (1.0 + self.s.step.abs())
    }

    pub fn require_same(&self, other: &Grid2) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::mismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.meta(),
                other.meta()
            )))
        }
    }
}

/// A real function sampled on a [`Grid2`]; `values[[i, j]]` sits at `(u_i, s_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2,
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::mismatch(format!(
                "field shape {:?} does not match grid {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: Grid2, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn(grid.shape(), |(i, j)| f(grid.u.value(i), grid.s.value(j)));
        ScalarField { grid, values }
    }

    /// Broadcasts per-`u` samples along `s`.
    pub fn from_u_samples(grid: Grid2, samples: &[f64]) -> Result<Self> {
        if samples.len() != grid.u.len {
            return Err(Error::mismatch(format!(
                "{} u-samples for a grid with nu = {}",
                samples.len(),
                grid.u.len
            )));
        }
        Ok(ScalarField {
            grid,
            values: Array2::from_shape_fn(grid.shape(), |(i, _)| samples[i]),
        })
    }

    pub fn constant(grid: Grid2, v: f64) -> Self {
        ScalarField {
            grid,
            values: Array2::from_elem(grid.shape(), v),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.mapv(f),
        }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.require_same(&other.grid)?;
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, &b| *a = f(*a, b));
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Values along `u` at the `s`-index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).to_vec()
    }
}
