//! The explicit `(u, s)` metric built from a curvature profile, its
//! Christoffel symbols and orthonormal frame, discrete Gaussian curvature and
//! the orthogonal and isothermal charts.

use std::io::{Read, Write};
use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid2, ScalarField};
use crate::jet::{Dual2, Jet};
use crate::profile::{eps_dom, CurvatureProfile};
use crate::report::{Report, ResidualStats, BOUNDARY_LAYER};
use crate::stencil::{self, Dir};

/// Arithmetic shared by plain values and [`Dual2`] numbers.
pub trait Scalar:
    Copy
    + From<f64>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
}

impl<T> Scalar for T where
    T: Copy
        + From<f64>
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
        + Div<Output = T>
        + Neg<Output = T>
{
}

/// First fundamental form sampled on a uniform `(u, s)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGrid {
    pub grid: Grid2,
    /// Curvature of the ambient space form.
    pub c: f64,
    pub g11: Array2<f64>,
    pub g12: Array2<f64>,
    pub g22: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct MetricJson {
    c: f64,
    u: Axis,
    s: Axis,
    g11: Vec<Vec<f64>>,
    g12: Vec<Vec<f64>>,
    g22: Vec<Vec<f64>>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(r: &[Vec<f64>], shape: (usize, usize)) -> Result<Array2<f64>> {
    let flat: Vec<f64> = r.iter().flatten().copied().collect();
    if r.len() != shape.0 || r.iter().any(|x| x.len() != shape.1) {
        return Err(Error::mismatch("metric array does not match its axes"));
    }
    Ok(Array2::from_shape_vec(shape, flat).expect("checked shape"))
}

impl MetricGrid {
    /// Checks shapes and positive definiteness.
    pub fn new(
        grid: Grid2,
        c: f64,
        g11: Array2<f64>,
        g12: Array2<f64>,
        g22: Array2<f64>,
    ) -> Result<Self> {
        for a in [&g11, &g12, &g22] {
            if a.dim() != grid.shape() {
                return Err(Error::mismatch(format!(
                    "metric component shape {:?} does not match grid {:?}",
                    a.dim(),
                    grid.shape()
                )));
            }
        }
        let m = MetricGrid {
            grid,
            c,
            g11,
            g12,
            g22,
        };
        for ((i, j), &d) in m.det().indexed_iter() {
            if !(d > 0.0 && m.g11[[i, j]] > 0.0) {
                return Err(Error::domain(format!(
                    "metric is not positive definite at ({i}, {j}): det = {d}"
                )));
            }
        }
        Ok(m)
    }

    /// Metric with components `f(u, s) = (g11, g12, g22)`.
    pub fn from_fn(grid: Grid2, c: f64, f: impl Fn(f64, f64) -> (f64, f64, f64)) -> Result<Self> {
        let (nu, ns) = grid.shape();
        let mut g = [
            Array2::zeros((nu, ns)),
            Array2::zeros((nu, ns)),
            Array2::zeros((nu, ns)),
        ];
        for i in 0..nu {
            for j in 0..ns {
                let (a, b, d) = f(grid.u.value(i), grid.s.value(j));
                g[0][[i, j]] = a;
                g[1][[i, j]] = b;
                g[2][[i, j]] = d;
            }
        }
        let [g11, g12, g22] = g;
        Self::new(grid, c, g11, g12, g22)
    }

    pub fn det(&self) -> Array2<f64> {
        &self.g11 * &self.g22 - &self.g12 * &self.g12
    }

    pub fn components(&self) -> [&Array2<f64>; 3] {
        [&self.g11, &self.g12, &self.g22]
    }

    /// The metric multiplied pointwise by a positive factor.
    pub fn scaled(&self, factor: &ScalarField) -> Result<MetricGrid> {
        self.grid.require_same(&factor.grid)?;
        let f = &factor.values;
        Self::new(
            self.grid,
            self.c,
            &self.g11 * f,
            &self.g12 * f,
            &self.g22 * f,
        )
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["u", "s", "g11", "g12", "g22"])?;
        let (nu, ns) = self.grid.shape();
        for i in 0..nu {
            for j in 0..ns {
                wr.write_record(&[
                    self.grid.u.value(i).to_string(),
                    self.grid.s.value(j).to_string(),
                    self.g11[[i, j]].to_string(),
                    self.g12[[i, j]].to_string(),
                    self.g22[[i, j]].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `u,s,g11,g12,g22` rows covering a uniform grid in any order.
    pub fn read_csv<R: Read>(r: R, c: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let want = ["u", "s", "g11", "g12", "g22"];
        if headers.len() != 5 || headers.iter().zip(want).any(|(h, w)| h.trim() != w) {
            return Err(Error::mismatch(format!(
                "expected header u,s,g11,g12,g22, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut recs = Vec::new();
        for rec in rd.deserialize::<(f64, f64, f64, f64, f64)>() {
            recs.push(rec?);
        }
        let axis_of = |vals: Vec<f64>| -> Result<Axis> {
            let mut v = vals;
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
            if v.is_empty() {
                return Err(Error::mismatch("empty metric file"));
            }
            let axis = Axis::uniform(v[0], v[v.len() - 1], v.len())?;
            let tol = 1e-9 * axis.step.max(1e-12);
            if v.iter().enumerate().any(|(i, x)| (x - axis.value(i)).abs() > tol) {
                return Err(Error::mismatch("metric grid is not uniform"));
            }
            Ok(axis)
        };
        let u = axis_of(recs.iter().map(|r| r.0).collect())?;
        let s = axis_of(recs.iter().map(|r| r.1).collect())?;
        if recs.len() != u.len * s.len {
            return Err(Error::mismatch(format!(
                "{} rows for a {}x{} grid",
                recs.len(),
                u.len,
                s.len
            )));
        }
        let index = |a: &Axis, x: f64| -> usize {
            if a.len == 1 {
                0
            } else {
                ((x - a.start) / a.step).round() as usize
            }
        };
        let grid = Grid2::new(u, s);
        let mut g = [
            Array2::from_elem(grid.shape(), f64::NAN),
            Array2::from_elem(grid.shape(), f64::NAN),
            Array2::from_elem(grid.shape(), f64::NAN),
        ];
        for (x, y, a, b, d) in recs {
            let (i, j) = (index(&u, x), index(&s, y));
            g[0][[i, j]] = a;
            g[1][[i, j]] = b;
            g[2][[i, j]] = d;
        }
        if g[0].iter().any(|v| v.is_nan()) {
            return Err(Error::mismatch("metric file has duplicate or missing grid points"));
        }
        let [g11, g12, g22] = g;
        Self::new(grid, c, g11, g12, g22)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MetricJson {
            c: self.c,
            u: self.grid.u,
            s: self.grid.s,
            g11: rows(&self.g11),
            g12: rows(&self.g12),
            g22: rows(&self.g22),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MetricJson = serde_json::from_str(s)?;
        let grid = Grid2::new(m.u, m.s);
        let shape = grid.shape();
        Self::new(
            grid,
            m.c,
            from_rows(&m.g11, shape)?,
            from_rows(&m.g12, shape)?,
            from_rows(&m.g22, shape)?,
        )
    }
}

/// Writes a field as `u,s,value` rows.
pub fn write_field_csv<W: Write>(field: &ScalarField, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["u", "s", "value"])?;
    for ((i, j), v) in field.values.indexed_iter() {
        wr.write_record(&[
            field.grid.u.value(i).to_string(),
            field.grid.s.value(j).to_string(),
            v.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Symmetric `s` axis `[-extent, extent]`.
pub fn s_axis(extent: f64, ns: usize) -> Result<Axis> {
    if !(extent > 0.0) {
        return Err(Error::mismatch(format!("s extent must be positive, got {extent}")));
    }
    Axis::uniform(-extent, extent, ns)
}

/// `a(u) = -3K'/(8(c-K))`, so that `g12 = a s`.
fn shear(c: f64, k: f64, kp: f64) -> Result<f64> {
    if !(c - k > eps_dom(c, k)) {
        return Err(Error::domain(format!(
            "c - K = {:e} inside the exclusion margin",
            c - k
        )));
    }
    Ok(-3.0 * kp / (8.0 * (c - k)))
}

/// `a`, `a'`, `a''` from the Taylor jet of the profile at sample `i`.
fn shear_jet(profile: &CurvatureProfile, i: usize) -> Result<[f64; 3]> {
    let c = profile.c();
    shear(c, profile.k()[i], profile.kprime()[i])?;
    let k: Jet<4> = profile.jet(i)?;
    let a = k.derivative() * (-3.0 / 8.0) / (c - k);
    Ok([a.derivative_at(0), a.derivative_at(1), a.derivative_at(2)])
}

/// `g11 = 1 + a^2 s^2`, `g12 = a s`, `g22 = 1` on the profile's `u` samples
/// and the given `s` axis.
pub fn build_metric(profile: &CurvatureProfile, s: Axis) -> Result<MetricGrid> {
    let grid = Grid2::new(profile.axis()?, s);
    let a: Vec<f64> = (0..profile.len())
        .map(|i| shear(profile.c(), profile.k()[i], profile.kprime()[i]))
        .collect::<Result<_>>()?;
    let (nu, ns) = grid.shape();
    let g12 = Array2::from_shape_fn((nu, ns), |(i, j)| a[i] * s.value(j));
    let g11 = g12.mapv(|x| 1.0 + x * x);
    Ok(MetricGrid {
        grid,
        c: profile.c(),
        g11,
        g12,
        g22: Array2::ones((nu, ns)),
    })
}

fn check_against_profile(metric: &MetricGrid, profile: &CurvatureProfile) -> Result<()> {
    if metric.grid.u.len != profile.len() {
        return Err(Error::mismatch(format!(
            "metric has {} u samples, profile has {}",
            metric.grid.u.len,
            profile.len()
        )));
    }
    let axis = profile.axis()?;
    if (axis.start - metric.grid.u.start).abs() > 1e-12 * (1.0 + axis.start.abs())
        || (axis.step - metric.grid.u.step).abs() > 1e-12 * (1.0 + axis.step.abs())
    {
        return Err(Error::mismatch("metric and profile u grids differ"));
    }
    Ok(())
}

/// `Γ^k_ij` at one point, indexed `[k][i][j]`.
pub type Christoffel<T> = [[[T; 2]; 2]; 2];

/// Christoffel symbols from `(g11, g12, g22)` and their `u` and `s`
/// derivatives.
pub fn christoffel_point<T: Scalar>(g: [T; 3], du: [T; 3], ds: [T; 3]) -> Christoffel<T> {
    let m = |d: &[T; 3], i: usize, j: usize| d[i + j];
    let det = g[0] * g[2] - g[1] * g[1];
    let inv = [[g[2] / det, -g[1] / det], [-g[1] / det, g[0] / det]];
    let dg = [du, ds];
    let zero = T::from(0.0);
    let mut out = [[[zero; 2]; 2]; 2];
    for (k, row) in out.iter_mut().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = zero;
                for l in 0..2 {
                    let t = m(&dg[i], j, l) + m(&dg[j], i, l) - m(&dg[l], i, j);
                    acc = acc + inv[k][l] * t;
                }
                row[i][j] = acc * T::from(0.5);
            }
        }
    }
    out
}

/// Gaussian curvature from the Christoffel symbols and their first partials:
/// `-g11 K = (Γ²₁₂)_u - (Γ²₁₁)_s + Γ¹₁₂Γ²₁₁ + Γ²₁₂Γ²₁₂ - Γ²₁₁Γ²₂₂ - Γ¹₁₁Γ²₁₂`.
pub fn gauss_formula(g11: f64, gam: &Christoffel<Dual2>) -> f64 {
    let g = |k: usize, i: usize, j: usize| gam[k - 1][i - 1][j - 1];
    let bracket = g(2, 1, 2).du - g(2, 1, 1).ds + g(1, 1, 2).v * g(2, 1, 1).v
        + g(2, 1, 2).v * g(2, 1, 2).v
        - g(2, 1, 1).v * g(2, 2, 2).v
        - g(1, 1, 1).v * g(2, 1, 2).v;
    -bracket / g11
}

/// Metric value with first and second partials at one point; arrays hold
/// `(g11, g12, g22)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricJet {
    pub g: [f64; 3],
    pub du: [f64; 3],
    pub ds: [f64; 3],
    pub duu: [f64; 3],
    pub dus: [f64; 3],
    pub dss: [f64; 3],
}

impl MetricJet {
    /// Christoffel symbols carrying their own first partials.
    pub fn christoffels(&self) -> Christoffel<Dual2> {
        let d = |p: usize| {
            (
                Dual2::new(self.g[p], self.du[p], self.ds[p]),
                Dual2::new(self.du[p], self.duu[p], self.dus[p]),
                Dual2::new(self.ds[p], self.dus[p], self.dss[p]),
            )
        };
        let (a, b, c) = (d(0), d(1), d(2));
        christoffel_point([a.0, b.0, c.0], [a.1, b.1, c.1], [a.2, b.2, c.2])
    }

    pub fn gauss_curvature(&self) -> f64 {
        gauss_formula(self.g[0], &self.christoffels())
    }

    /// Brioschi's determinant formula.
    pub fn brioschi_curvature(&self) -> f64 {
        let [e, f, g] = self.g;
        let (eu, fu, gu) = (self.du[0], self.du[1], self.du[2]);
        let (ev, fv, gv) = (self.ds[0], self.ds[1], self.ds[2]);
        let (evv, fuv, guu) = (self.dss[0], self.dus[1], self.duu[2]);
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let m1 = [
            [-0.5 * evv + fuv - 0.5 * guu, 0.5 * eu, fu - 0.5 * ev],
            [fv - 0.5 * gu, e, f],
            [0.5 * gv, f, g],
        ];
        let m2 = [
            [0.0, 0.5 * ev, 0.5 * gu],
            [0.5 * ev, e, f],
            [0.5 * gu, f, g],
        ];
        let w = e * g - f * f;
        (det3(m1) - det3(m2)) / (w * w)
    }
}

/// Metric 2-jets over a whole grid.
#[derive(Debug, Clone)]
pub struct JetField {
    pub grid: Grid2,
    pub g: [Array2<f64>; 3],
    pub du: [Array2<f64>; 3],
    pub ds: [Array2<f64>; 3],
    pub duu: [Array2<f64>; 3],
    pub dus: [Array2<f64>; 3],
    pub dss: [Array2<f64>; 3],
}

impl JetField {
    /// Partials by second-order differencing; mixed partials as `D_u D_s`.
    pub fn finite_difference(metric: &MetricGrid) -> Result<Self> {
        metric.grid.require_samples(5)?;
        let (hu, hs) = (metric.grid.u.step, metric.grid.s.step);
        let each = |f: &dyn Fn(&Array2<f64>) -> Array2<f64>| metric.components().map(f);
        Ok(JetField {
            grid: metric.grid,
            g: metric.components().map(|a| a.clone()),
            du: each(&|a| stencil::diff(a, Dir::U, hu)),
            ds: each(&|a| stencil::diff(a, Dir::S, hs)),
            duu: each(&|a| stencil::second_diff(a, Dir::U, hu)),
            dus: each(&|a| stencil::diff(&stencil::diff(a, Dir::S, hs), Dir::U, hu)),
            dss: each(&|a| stencil::second_diff(a, Dir::S, hs)),
        })
    }

    /// Exact partials of a metric built from `profile`, with `a'` and `a''`
    /// from the Taylor jet of the ODE solution.
    pub fn analytic(metric: &MetricGrid, profile: &CurvatureProfile) -> Result<Self> {
        check_against_profile(metric, profile)?;
        let grid = metric.grid;
        let (nu, ns) = grid.shape();
        let z = || Array2::zeros((nu, ns));
        let mut jf = JetField {
            grid,
            g: metric.components().map(|a| a.clone()),
            du: [z(), z(), z()],
            ds: [z(), z(), z()],
            duu: [z(), z(), z()],
            dus: [z(), z(), z()],
            dss: [z(), z(), z()],
        };
        for i in 0..nu {
            let [a, a1, a2] = shear_jet(profile, i)?;
            for j in 0..ns {
                let s = grid.s.value(j);
                jf.du[0][[i, j]] = 2.0 * a * a1 * s * s;
                jf.ds[0][[i, j]] = 2.0 * a * a * s;
                jf.duu[0][[i, j]] = 2.0 * (a1 * a1 + a * a2) * s * s;
                jf.dus[0][[i, j]] = 4.0 * a * a1 * s;
                jf.dss[0][[i, j]] = 2.0 * a * a;
                jf.du[1][[i, j]] = a1 * s;
                jf.ds[1][[i, j]] = a;
                jf.duu[1][[i, j]] = a2 * s;
                jf.dus[1][[i, j]] = a1;
            }
        }
        Ok(jf)
    }

    pub fn at(&self, i: usize, j: usize) -> MetricJet {
        let p = |a: &[Array2<f64>; 3]| [a[0][[i, j]], a[1][[i, j]], a[2][[i, j]]];
        MetricJet {
            g: p(&self.g),
            du: p(&self.du),
            ds: p(&self.ds),
            duu: p(&self.duu),
            dus: p(&self.dus),
            dss: p(&self.dss),
        }
    }

    fn map(&self, f: impl Fn(&MetricJet) -> f64) -> ScalarField {
        let values = Array2::from_shape_fn(self.grid.shape(), |(i, j)| f(&self.at(i, j)));
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    pub fn gauss_curvature(&self) -> ScalarField {
        self.map(MetricJet::gauss_curvature)
    }

    pub fn brioschi_curvature(&self) -> ScalarField {
        self.map(MetricJet::brioschi_curvature)
    }
}

/// Discrete Gaussian curvature through the Christoffel-symbol formula, with
/// all metric partials taken by finite differences.
pub fn gauss_curvature_fd(metric: &MetricGrid) -> Result<ScalarField> {
    Ok(JetField::finite_difference(metric)?.gauss_curvature())
}

/// Discrete Gaussian curvature through Brioschi's formula on the same
/// differenced partials.
pub fn brioschi_curvature_fd(metric: &MetricGrid) -> Result<ScalarField> {
    Ok(JetField::finite_difference(metric)?.brioschi_curvature())
}

/// Gaussian curvature from differenced Christoffel fields: the symbols are
/// built from first differences of the metric, then differenced again.
/// Agrees with [`gauss_curvature_fd`] to second order only.
pub fn gauss_curvature_nested(metric: &MetricGrid) -> Result<ScalarField> {
    let conn = christoffels_fd(metric)?;
    let (hu, hs) = (metric.grid.u.step, metric.grid.s.step);
    let d212_u = stencil::diff(conn.gamma(2, 1, 2), Dir::U, hu);
    let d211_s = stencil::diff(conn.gamma(2, 1, 1), Dir::S, hs);
    let values = Array2::from_shape_fn(metric.grid.shape(), |(i, j)| {
        let g = |k, a, b| conn.gamma(k, a, b)[[i, j]];
        let bracket = d212_u[[i, j]] - d211_s[[i, j]] + g(1, 1, 2) * g(2, 1, 1)
            + g(2, 1, 2) * g(2, 1, 2)
            - g(2, 1, 1) * g(2, 2, 2)
            - g(1, 1, 1) * g(2, 1, 2);
        -bracket / metric.g11[[i, j]]
    });
    ScalarField::new(metric.grid, values)
}

/// Christoffel symbols and the orthonormal frame `X1 = ∂u - (g12/σ)∂s`
/// scaled by `1/σ`, `X2 = ∂s`, with `σ = sqrt(det g)`, on a grid.
#[derive(Debug, Clone)]
pub struct ConnectionData {
    pub grid: Grid2,
    /// `Γ^k_ij` stored for `k` in {1, 2} and `ij` in {11, 12, 22}.
    gamma: [[Array2<f64>; 3]; 2],
    /// Coordinate components `(X^u, X^s)` of the frame vectors.
    pub x1: [Array2<f64>; 2],
    pub x2: [Array2<f64>; 2],
    /// `dx1[d][c]`: partial along direction `d` of component `c` of `X1`.
    pub dx1: [[Array2<f64>; 2]; 2],
    pub dx2: [[Array2<f64>; 2]; 2],
}

fn pair(i: usize, j: usize) -> usize {
    i + j - 2
}

impl ConnectionData {
    /// `Γ^k_ij` with 1-based indices; symmetric in `i`, `j`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &Array2<f64> {
        &self.gamma[k - 1][pair(i, j)]
    }

    fn from_partials(
        metric: &MetricGrid,
        du: &[Array2<f64>; 3],
        ds: &[Array2<f64>; 3],
        frame_du: &[Array2<f64>; 3],
        frame_ds: &[Array2<f64>; 3],
    ) -> Self {
        let grid = metric.grid;
        let shape = grid.shape();
        let z = || Array2::<f64>::zeros(shape);
        let mut gamma = [[z(), z(), z()], [z(), z(), z()]];
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let p = |a: &[&Array2<f64>; 3]| [a[0][[i, j]], a[1][[i, j]], a[2][[i, j]]];
                let q = |a: &[Array2<f64>; 3]| [a[0][[i, j]], a[1][[i, j]], a[2][[i, j]]];
                let gam = christoffel_point(p(&metric.components()), q(du), q(ds));
                for k in 0..2 {
                    gamma[k][0][[i, j]] = gam[k][0][0];
                    gamma[k][1][[i, j]] = gam[k][0][1];
                    gamma[k][2][[i, j]] = gam[k][1][1];
                }
            }
        }
        let (x1, dx1) = frame_x1(metric, frame_du, frame_ds);
        ConnectionData {
            grid,
            gamma,
            x1,
            x2: [z(), Array2::ones(shape)],
            dx1,
            dx2: [[z(), z()], [z(), z()]],
        }
    }

    /// `∇_X Y` in coordinates, from frame components and their partials.
    fn covariant(
        &self,
        x: &[Array2<f64>; 2],
        y: &[Array2<f64>; 2],
        dy: &[[Array2<f64>; 2]; 2],
        i: usize,
        j: usize,
    ) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let mut v = x[0][[i, j]] * dy[0][k][[i, j]] + x[1][[i, j]] * dy[1][k][[i, j]];
            for a in 0..2 {
                for b in 0..2 {
                    v += self.gamma[k][pair(a + 1, b + 1)][[i, j]] * x[a][[i, j]] * y[b][[i, j]];
                }
            }
            *o = v;
        }
        out
    }
}

/// `X1 = (1/σ)(∂u - g12 ∂s)` and its partials given partials of
/// `(g11, g12, g22)`.
fn frame_x1(
    metric: &MetricGrid,
    du: &[Array2<f64>; 3],
    ds: &[Array2<f64>; 3],
) -> ([Array2<f64>; 2], [[Array2<f64>; 2]; 2]) {
    let shape = metric.grid.shape();
    let mut x1 = [Array2::zeros(shape), Array2::zeros(shape)];
    let mut dx1 = [
        [Array2::zeros(shape), Array2::zeros(shape)],
        [Array2::zeros(shape), Array2::zeros(shape)],
    ];
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            let (e, f, g) = (metric.g11[[i, j]], metric.g12[[i, j]], metric.g22[[i, j]]);
            // σ = sqrt(det g) carried with its partials
            let det = |d: &[Array2<f64>; 3]| d[0][[i, j]] * g + e * d[2][[i, j]] - 2.0 * f * d[1][[i, j]];
            let w = e * g - f * f;
            let sigma = w.sqrt();
            x1[0][[i, j]] = 1.0 / sigma;
            x1[1][[i, j]] = -f / sigma;
            for (d, part) in [du, ds].into_iter().enumerate() {
                let dsig = det(part) / (2.0 * sigma);
                dx1[d][0][[i, j]] = -dsig / (sigma * sigma);
                dx1[d][1][[i, j]] = -part[1][[i, j]] / sigma + f * dsig / (sigma * sigma);
            }
        }
    }
    (x1, dx1)
}

/// Christoffel symbols from analytic partials of the closed-form coefficients.
pub fn christoffels_closed_form(
    metric: &MetricGrid,
    profile: &CurvatureProfile,
) -> Result<ConnectionData> {
    let jets = JetField::analytic(metric, profile)?;
    Ok(ConnectionData::from_partials(
        metric, &jets.du, &jets.ds, &jets.du, &jets.ds,
    ))
}

/// Christoffel symbols from differenced metric coefficients.
pub fn christoffels_fd(metric: &MetricGrid) -> Result<ConnectionData> {
    metric.grid.require_samples(3)?;
    let (hu, hs) = (metric.grid.u.step, metric.grid.s.step);
    let du = metric.components().map(|a| stencil::diff(a, Dir::U, hu));
    let ds = metric.components().map(|a| stencil::diff(a, Dir::S, hs));
    Ok(ConnectionData::from_partials(metric, &du, &ds, &du, &ds))
}

fn g_norm(metric: &MetricGrid, i: usize, j: usize, v: [f64; 2]) -> f64 {
    let q = metric.g11[[i, j]] * v[0] * v[0]
        + 2.0 * metric.g12[[i, j]] * v[0] * v[1]
        + metric.g22[[i, j]] * v[1] * v[1];
    q.max(0.0).sqrt()
}

/// Residual fields of the four frame-connection identities, measured in the
/// metric norm.
#[derive(Debug, Clone)]
pub struct FrameResiduals {
    /// `|∇_{X1}X1|`
    pub x1x1: ScalarField,
    /// `|∇_{X1}X2|`
    pub x1x2: ScalarField,
    /// `|∇_{X2}X2 - a X1|` with `a = -3 X1K/(8(c-K))`
    pub x2x2: ScalarField,
    /// `|∇_{X2}X1 + a X2|`
    pub x2x1: ScalarField,
}

pub fn frame_residuals(
    metric: &MetricGrid,
    profile: &CurvatureProfile,
    conn: &ConnectionData,
) -> Result<FrameResiduals> {
    check_against_profile(metric, profile)?;
    metric.grid.require_same(&conn.grid)?;
    let shape = metric.grid.shape();
    let mut out = [
        Array2::zeros(shape),
        Array2::zeros(shape),
        Array2::zeros(shape),
        Array2::zeros(shape),
    ];
    for i in 0..shape.0 {
        let a = shear(profile.c(), profile.k()[i], profile.kprime()[i])?;
        for j in 0..shape.1 {
            let x1 = [conn.x1[0][[i, j]], conn.x1[1][[i, j]]];
            let x2 = [conn.x2[0][[i, j]], conn.x2[1][[i, j]]];
            let n11 = conn.covariant(&conn.x1, &conn.x1, &conn.dx1, i, j);
            let n12 = conn.covariant(&conn.x1, &conn.x2, &conn.dx2, i, j);
            let n22 = conn.covariant(&conn.x2, &conn.x2, &conn.dx2, i, j);
            let n21 = conn.covariant(&conn.x2, &conn.x1, &conn.dx1, i, j);
            out[0][[i, j]] = g_norm(metric, i, j, n11);
            out[1][[i, j]] = g_norm(metric, i, j, n12);
            out[2][[i, j]] = g_norm(metric, i, j, [n22[0] - a * x1[0], n22[1] - a * x1[1]]);
            out[3][[i, j]] = g_norm(metric, i, j, [n21[0] + a * x2[0], n21[1] + a * x2[1]]);
        }
    }
    let [r0, r1, r2, r3] = out.map(|v| ScalarField {
        grid: metric.grid,
        values: v,
    });
    Ok(FrameResiduals {
        x1x1: r0,
        x1x2: r1,
        x2x2: r2,
        x2x1: r3,
    })
}

/// Max-norm check of `∇_{X1}X1 = ∇_{X1}X2 = 0`,
/// `∇_{X2}X2 = -(3X1K/(8(c-K)))X1` and `∇_{X2}X1 = (3X1K/(8(c-K)))X2`.
pub fn frame_connection_check(
    metric: &MetricGrid,
    profile: &CurvatureProfile,
    conn: &ConnectionData,
    tolerance: f64,
) -> Result<Report> {
    let r = frame_residuals(metric, profile, conn)?;
    let fields = [
        ("x1x1", &r.x1x1),
        ("x1x2", &r.x1x2),
        ("x2x2", &r.x2x2),
        ("x2x1", &r.x2x1),
    ];
    let combined = fields.iter().skip(1).fold(r.x1x1.values.clone(), |acc, (_, f)| {
        let mut a = acc;
        a.zip_mut_with(&f.values, |x, &y| *x = x.max(y));
        a
    });
    let stats = ResidualStats::of(&combined, BOUNDARY_LAYER, None);
    let mut rep = Report::from_stats(
        "frame_connection",
        stats,
        Some((metric.grid.meta(), &metric.grid)),
        tolerance,
    );
    for (name, f) in fields {
        rep = rep.with_detail(name, ResidualStats::of_field(f, BOUNDARY_LAYER).max);
    }
    Ok(rep)
}

/// Largest deviation of the stored frame from orthonormality.
pub fn frame_orthonormality(metric: &MetricGrid, conn: &ConnectionData) -> Result<f64> {
    metric.grid.require_same(&conn.grid)?;
    let mut worst = 0.0f64;
    for ((i, j), &e) in metric.g11.indexed_iter() {
        let (f, g) = (metric.g12[[i, j]], metric.g22[[i, j]]);
        let ip = |a: [f64; 2], b: [f64; 2]| e * a[0] * b[0] + f * (a[0] * b[1] + a[1] * b[0]) + g * a[1] * b[1];
        let x1 = [conn.x1[0][[i, j]], conn.x1[1][[i, j]]];
        let x2 = [conn.x2[0][[i, j]], conn.x2[1][[i, j]]];
        worst = worst
            .max((ip(x1, x1) - 1.0).abs())
            .max((ip(x2, x2) - 1.0).abs())
            .max(ip(x1, x2).abs());
    }
    Ok(worst)
}

/// Geodesic curvature of the level curves `s ↦ (u, s)`.
#[derive(Debug, Clone)]
pub struct LevelCurvature {
    /// `-∂g12/∂s` by differencing.
    pub differenced: ScalarField,
    /// `3K'/(8(c-K))`.
    pub closed_form: ScalarField,
}

impl LevelCurvature {
    pub fn max_gap(&self) -> f64 {
        self.differenced
            .zip_with(&self.closed_form, |a, b| a - b)
            .map(|f| f.max_abs())
            .unwrap_or(f64::INFINITY)
    }

    /// Largest variation of the differenced field along `s`.
    pub fn s_variation(&self) -> f64 {
        let v = &self.differenced.values;
        let mut worst = 0.0f64;
        for row in v.outer_iter() {
            let r0 = row[0];
            for x in row.iter() {
                worst = worst.max((x - r0).abs());
            }
        }
        worst
    }
}

pub fn level_curve_curvature(
    metric: &MetricGrid,
    profile: &CurvatureProfile,
) -> Result<LevelCurvature> {
    check_against_profile(metric, profile)?;
    if metric.grid.s.len < 2 {
        return Err(Error::GridTooSmall {
            needed: 2,
            got: metric.grid.s.len,
        });
    }
    let differenced = stencil::diff(&metric.g12, Dir::S, metric.grid.s.step).mapv(|x| -x);
    let kappa: Vec<f64> = (0..profile.len())
        .map(|i| shear(profile.c(), profile.k()[i], profile.kprime()[i]).map(|a| -a))
        .collect::<Result<_>>()?;
    Ok(LevelCurvature {
        differenced: ScalarField::new(metric.grid, differenced)?,
        closed_form: ScalarField::from_u_samples(metric.grid, &kappa)?,
    })
}

fn gap_power(profile: &CurvatureProfile, i: usize, p: f64) -> Result<f64> {
    let (c, k) = (profile.c(), profile.k()[i]);
    if !(c - k > eps_dom(c, k)) {
        return Err(Error::domain(format!("c - K inside the exclusion margin at sample {i}")));
    }
    Ok((c - k).powf(p))
}

/// The metric `du^2 + (c-K)^{-3/4} dv^2` in the chart `v = (c-K)^{3/8} s`,
/// sampled on the same `(u, v)` values as the input `(u, s)` grid.
pub fn to_orthogonal(metric: &MetricGrid, profile: &CurvatureProfile) -> Result<MetricGrid> {
    check_against_profile(metric, profile)?;
    let lam: Vec<f64> = (0..profile.len())
        .map(|i| gap_power(profile, i, -0.75))
        .collect::<Result<_>>()?;
    let shape = metric.grid.shape();
    MetricGrid::new(
        metric.grid,
        metric.c,
        Array2::ones(shape),
        Array2::zeros(shape),
        Array2::from_shape_fn(shape, |(i, _)| lam[i]),
    )
}

/// Pulls the orthogonal form back through a differenced Jacobian of
/// `(u, s) ↦ (u, (c-K)^{3/8} s)` and compares with the `(u, s)` metric.
pub fn orthogonal_pullback_check(
    metric: &MetricGrid,
    profile: &CurvatureProfile,
    tolerance: f64,
) -> Result<Report> {
    check_against_profile(metric, profile)?;
    let grid = metric.grid;
    let shape = grid.shape();
    let mut v = Array2::zeros(shape);
    let mut lam = vec![0.0; shape.0];
    for i in 0..shape.0 {
        let p = gap_power(profile, i, 0.375)?;
        lam[i] = 1.0 / (p * p);
        for j in 0..shape.1 {
            v[[i, j]] = p * grid.s.value(j);
        }
    }
    let vu = stencil::diff(&v, Dir::U, grid.u.step);
    let vs = stencil::diff(&v, Dir::S, grid.s.step);
    let resid = Array2::from_shape_fn(shape, |(i, j)| {
        let l = lam[i];
        let p11 = 1.0 + l * vu[[i, j]] * vu[[i, j]];
        let p12 = l * vu[[i, j]] * vs[[i, j]];
        let p22 = l * vs[[i, j]] * vs[[i, j]];
        (p11 - metric.g11[[i, j]])
            .abs()
            .max((p12 - metric.g12[[i, j]]).abs())
            .max((p22 - metric.g22[[i, j]]).abs())
    });
    Ok(Report::from_field(
        "orthogonal_pullback",
        &ScalarField::new(grid, resid)?,
        tolerance,
    ))
}

/// Isothermal representation `λ(ũ)(dũ^2 + dṽ^2)`.
#[derive(Debug, Clone)]
pub struct IsothermalChart {
    pub metric: MetricGrid,
    /// `ũ` at the original `u` samples.
    pub utilde_at_u: Vec<f64>,
    /// `u(ũ)` at the uniform `ũ` samples.
    pub u_of_utilde: Vec<f64>,
    /// `K(u(ũ))` at the uniform `ũ` samples.
    pub k: Vec<f64>,
    /// Richardson estimate of the quadrature error at the last sample.
    pub quadrature_error: f64,
    pub warning: Option<String>,
}

/// Monotone cubic Hermite interpolation through `(x, y)` with the supplied
/// slopes, limited where they would break monotonicity.
pub(crate) fn monotone_hermite(x: &[f64], y: &[f64], slopes: &[f64], at: f64) -> f64 {
    let n = x.len();
    if n == 1 {
        return y[0];
    }
    let i = match x.partition_point(|&v| v <= at) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let h = x[i + 1] - x[i];
    let delta = (y[i + 1] - y[i]) / h;
    let (mut m0, mut m1) = (slopes[i], slopes[i + 1]);
    if delta == 0.0 {
        m0 = 0.0;
        m1 = 0.0;
    } else {
        let (a, b) = (m0 / delta, m1 / delta);
        if a < 0.0 {
            m0 = 0.0;
        }
        if b < 0.0 {
            m1 = 0.0;
        }
        let r = a * a + b * b;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            m0 = t * a * delta;
            m1 = t * b * delta;
        }
    }
    let t = ((at - x[i]) / h).clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y[i]
        + (t3 - 2.0 * t2 + t) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * y[i + 1]
        + (t3 - t2) * h * m1
}

/// Cumulative Hermite-corrected trapezoid rule from node values and slopes,
/// taking every `stride`-th sample.
fn hermite_trapezoid(h: f64, f: &[f64], df: &[f64], stride: usize) -> Vec<f64> {
    let hh = h * stride as f64;
    let mut out = vec![0.0];
    let mut i = 0;
    while i + stride < f.len() {
        let j = i + stride;
        let last = *out.last().expect("nonempty");
        out.push(last + hh / 2.0 * (f[i] + f[j]) + hh * hh / 12.0 * (df[i] - df[j]));
        i = j;
    }
    out
}

/// Isothermal chart `ũ = ∫_{u0}^{u} (c-K)^{3/8} du`, `ṽ = v`.
///
/// The integral uses the Hermite-corrected trapezoid rule (fourth order)
/// with the exact derivative of the integrand; `u(ũ)` is recovered by
/// monotone cubic interpolation. A warning is attached when the estimated
/// quadrature error exceeds `quad_tol`.
pub fn to_isothermal(
    metric: &MetricGrid,
    profile: &CurvatureProfile,
    u0: f64,
    quad_tol: f64,
) -> Result<IsothermalChart> {
    check_against_profile(metric, profile)?;
    let axis = profile.axis()?;
    if u0 < axis.start - 1e-12 || u0 > axis.end() + 1e-12 {
        return Err(Error::domain(format!(
            "u0 = {u0} outside the profile range [{}, {}]",
            axis.start,
            axis.end()
        )));
    }
    let n = profile.len();
    let mut f = Vec::with_capacity(n);
    let mut df = Vec::with_capacity(n);
    for i in 0..n {
        let p = gap_power(profile, i, 0.375)?;
        let gap = profile.c() - profile.k()[i];
        f.push(p);
        df.push(-0.375 * p / gap * profile.kprime()[i]);
    }
    let h = axis.step;
    let cum = if n > 1 {
        hermite_trapezoid(h, &f, &df, 1)
    } else {
        vec![0.0]
    };
    // Richardson estimate against the doubled step
    let quadrature_error = if n >= 5 {
        let coarse = hermite_trapezoid(h, &f, &df, 2);
        let m = coarse.len() - 1;
        (coarse[m] - cum[2 * m]).abs() / 15.0
    } else {
        0.0
    };
    // shift the origin to u0
    let offset = monotone_hermite(profile.u(), &cum, &f, u0);
    let utilde: Vec<f64> = cum.iter().map(|x| x - offset).collect();
    let t_axis = Axis::uniform(utilde[0], utilde[n - 1], n)?;
    let inv_slopes: Vec<f64> = f.iter().map(|x| 1.0 / x).collect();
    let mut u_of = Vec::with_capacity(n);
    let mut k = Vec::with_capacity(n);
    for i in 0..n {
        let u = monotone_hermite(&utilde, profile.u(), &inv_slopes, t_axis.value(i));
        u_of.push(u);
        k.push(profile.interpolate_k(u));
    }
    let grid = Grid2::new(t_axis, metric.grid.s);
    let shape = grid.shape();
    let c = profile.c();
    let lam: Vec<f64> = k
        .iter()
        .map(|&kk| {
            if c - kk > eps_dom(c, kk) {
                Ok((c - kk).powf(-0.75))
            } else {
                Err(Error::domain("c - K inside the exclusion margin after resampling"))
            }
        })
        .collect::<Result<_>>()?;
    let g = Array2::from_shape_fn(shape, |(i, _)| lam[i]);
    let warning = (quadrature_error > quad_tol).then(|| {
        let msg = format!(
            "isothermal quadrature error estimate {quadrature_error:e} exceeds {quad_tol:e}; refine the u grid"
        );
        log::warn!("{msg}");
        msg
    });
    Ok(IsothermalChart {
        metric: MetricGrid::new(grid, c, g.clone(), Array2::zeros(shape), g)?,
        utilde_at_u: utilde,
        u_of_utilde: u_of,
        k,
        quadrature_error,
        warning,
    })
}
