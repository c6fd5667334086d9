//! Extrinsic data of the biconservative surface: mean curvature, the shape
//! operator in the tilded frame, and the Gauss, Codazzi and
//! biconservativity equations.

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Grid2, ScalarField};
use crate::metric::MetricGrid;
use crate::profile::{eps_dom, CurvatureProfile};
use crate::report::{Report, ResidualStats, BOUNDARY_LAYER};
use crate::stencil::{self, Dir};

/// `f = (2/√3)√(c-K)`.
pub fn mean_curvature(c: f64, k: f64) -> Result<f64> {
    if !(c - k > eps_dom(c, k)) {
        return Err(Error::domain(format!("c - K = {:e} inside the exclusion margin", c - k)));
    }
    Ok(2.0 / 3f64.sqrt() * (c - k).sqrt())
}

/// Inverse of [`mean_curvature`]: `K = c - 3f^2/4`.
pub fn curvature_from_mean(c: f64, f: f64) -> f64 {
    c - 0.75 * f * f
}

/// Mean curvature along a profile with its `u`-derivative
/// `f' = -K'/√(3(c-K))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCurvature {
    pub f: Vec<f64>,
    pub fprime: Vec<f64>,
}

pub fn mean_curvature_from_k(profile: &CurvatureProfile) -> Result<MeanCurvature> {
    let c = profile.c();
    let mut f = Vec::with_capacity(profile.len());
    let mut fprime = Vec::with_capacity(profile.len());
    for (&k, &kp) in profile.k().iter().zip(profile.kprime()) {
        f.push(mean_curvature(c, k)?);
        fprime.push(-kp / (3.0 * (c - k)).sqrt());
    }
    Ok(MeanCurvature { f, fprime })
}

/// The shape operator `A`, diagonal in the tilded frame `X̃1 = -X1`,
/// `X̃2 = -X2` with eigenvalues `λ1 = -f/2`, `λ2 = 3f/2`.
#[derive(Debug, Clone)]
pub struct ShapeOperatorField {
    pub f: ScalarField,
    pub lambda1: ScalarField,
    pub lambda2: ScalarField,
    /// Sign relating the tilded frame to the intrinsic one: `X̃i = frame_sign · Xi`.
    pub frame_sign: f64,
    /// Coordinate components `(X^u, X^s)` of `X̃1` and `X̃2`.
    pub e1: [Array2<f64>; 2],
    pub e2: [Array2<f64>; 2],
}

impl ShapeOperatorField {
    pub fn grid(&self) -> Grid2 {
        self.f.grid
    }

    pub fn trace(&self) -> ScalarField {
        self.lambda1.zip_with(&self.lambda2, |a, b| a + b).expect("same grid")
    }

    pub fn det(&self) -> ScalarField {
        self.lambda1.zip_with(&self.lambda2, |a, b| a * b).expect("same grid")
    }

    /// Copy with `λ2` shifted by `delta`.
    pub fn with_lambda2_shift(&self, delta: f64) -> Self {
        let mut s = self.clone();
        s.lambda2 = s.lambda2.map(|x| x + delta);
        s
    }

    /// Copy with the eigenvalues exchanged between the two frame vectors.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.lambda1, &mut s.lambda2);
        s
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["u", "s", "f", "lambda1", "lambda2"])?;
        let g = self.grid();
        for ((i, j), f) in self.f.values.indexed_iter() {
            wr.write_record(&[
                g.u.value(i).to_string(),
                g.s.value(j).to_string(),
                f.to_string(),
                self.lambda1.values[[i, j]].to_string(),
                self.lambda2.values[[i, j]].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_grid(metric: &MetricGrid, profile: &CurvatureProfile) -> Result<()> {
    if metric.grid.u.len != profile.len() {
        return Err(Error::mismatch(format!(
            "metric has {} u samples, profile has {}",
            metric.grid.u.len,
            profile.len()
        )));
    }
    Ok(())
}

pub fn build_shape_operator(
    profile: &CurvatureProfile,
    metric: &MetricGrid,
) -> Result<ShapeOperatorField> {
    check_grid(metric, profile)?;
    let mc = mean_curvature_from_k(profile)?;
    let grid = metric.grid;
    let f = ScalarField::from_u_samples(grid, &mc.f)?;
    let half = f.map(|x| 0.5 * x);
    let sign = -1.0;
    // X1 = ∂u - g12 ∂s (unit determinant), X2 = ∂s
    let e1 = [
        Array2::from_elem(grid.shape(), sign),
        metric.g12.mapv(|g| -sign * g),
    ];
    let e2 = [Array2::zeros(grid.shape()), Array2::from_elem(grid.shape(), sign)];
    Ok(ShapeOperatorField {
        lambda1: half.map(|h| -h),
        lambda2: half.map(|h| 3.0 * h),
        f,
        frame_sign: sign,
        e1,
        e2,
    })
}

/// `|K - c - det A|` relative to `max(1, |K|)`.
pub fn gauss_equation_check(
    profile: &CurvatureProfile,
    shape: &ShapeOperatorField,
    tolerance: f64,
) -> Result<Report> {
    let det = shape.det();
    let c = profile.c();
    let resid = Array2::from_shape_fn(det.grid.shape(), |(i, j)| {
        let k = profile.k()[i];
        (k - c - det.values[[i, j]]) / k.abs().max(1.0)
    });
    let field = ScalarField::new(det.grid, resid)?;
    // algebraic identity: no boundary exclusion
    let stats = ResidualStats::of_field(&field, 0);
    Ok(Report::from_stats(
        "gauss_equation",
        stats,
        Some((field.grid.meta(), &field.grid)),
        tolerance,
    ))
}

/// How frame derivatives of the eigenvalues are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodazziMode {
    /// Chain rule through `f' = -K'/√(3(c-K))`.
    Analytic,
    /// Second-order differences of the sampled eigenvalues.
    Differenced,
    /// Fourth-order differences along `u`.
    Differenced4,
}

fn diff_u_columns(f: &Array2<f64>, h: f64, order4: bool) -> Array2<f64> {
    let mut out = Array2::zeros(f.raw_dim());
    for (j, col) in f.columns().into_iter().enumerate() {
        let v = col.to_vec();
        let d = if order4 {
            stencil::diff_1d_order4(&v, h)
        } else {
            stencil::diff_1d(&v, h)
        };
        for (i, x) in d.into_iter().enumerate() {
            out[[i, j]] = x;
        }
    }
    out
}

/// Codazzi equation `(∇_{X̃1}A)X̃2 = (∇_{X̃2}A)X̃1` in tilded-frame components.
///
/// With `∇_{X̃1}X̃2 = 0` and `∇_{X̃2}X̃1 = -ω X̃2`, `ω = 3X̃1f/(4f)`, the
/// difference of the two sides is
/// `(-X̃2λ1) X̃1 + (X̃1λ2 - ω(λ2 - λ1)) X̃2`.
pub fn codazzi_residual(
    profile: &CurvatureProfile,
    metric: &MetricGrid,
    shape: &ShapeOperatorField,
    mode: CodazziMode,
) -> Result<[ScalarField; 2]> {
    check_grid(metric, profile)?;
    metric.grid.require_same(&shape.grid())?;
    let grid = metric.grid;
    let c = profile.c();
    let sign = shape.frame_sign;
    let (dl1_s, dl2_u) = match mode {
        CodazziMode::Analytic => {
            let mc = mean_curvature_from_k(profile)?;
            let fp = ScalarField::from_u_samples(grid, &mc.fprime)?;
            // λ2 - 3f/2 may carry a constant shift; its derivative does not
            (Array2::zeros(grid.shape()), fp.values.mapv(|d| 1.5 * d))
        }
        CodazziMode::Differenced | CodazziMode::Differenced4 => {
            let order4 = mode == CodazziMode::Differenced4;
            grid.require_samples(if order4 { 5 } else { 3 })?;
            (
                stencil::diff(&shape.lambda1.values, Dir::S, grid.s.step),
                diff_u_columns(&shape.lambda2.values, grid.u.step, order4),
            )
        }
    };
    let mut r1 = Array2::zeros(grid.shape());
    let mut r2 = Array2::zeros(grid.shape());
    for ((i, j), v) in r2.indexed_iter_mut() {
        let (k, kp) = (profile.k()[i], profile.kprime()[i]);
        if !(c - k > eps_dom(c, k)) {
            return Err(Error::domain(format!("c - K inside the exclusion margin at sample {i}")));
        }
        // tilded frame derivative of a function of u: X̃1 = sign (∂u - g12 ∂s)
        let x1_l2 = sign * dl2_u[[i, j]];
        let x2_l1 = sign * dl1_s[[i, j]];
        let omega = 3.0 * kp / (8.0 * (c - k));
        let (l1, l2) = (shape.lambda1.values[[i, j]], shape.lambda2.values[[i, j]]);
        *v = x1_l2 - omega * (l2 - l1);
        r1[[i, j]] = -x2_l1;
    }
    Ok([ScalarField::new(grid, r1)?, ScalarField::new(grid, r2)?])
}

pub fn codazzi_check(
    profile: &CurvatureProfile,
    metric: &MetricGrid,
    shape: &ShapeOperatorField,
    mode: CodazziMode,
    tolerance: f64,
) -> Result<Report> {
    let [r1, r2] = codazzi_residual(profile, metric, shape, mode)?;
    let norm = r1.zip_with(&r2, |a, b| a.hypot(b))?;
    let margin = match mode {
        CodazziMode::Analytic => 0,
        CodazziMode::Differenced | CodazziMode::Differenced4 => BOUNDARY_LAYER,
    };
    let stats = ResidualStats::of_field(&norm, margin);
    let name = match mode {
        CodazziMode::Analytic => "codazzi_analytic",
        CodazziMode::Differenced => "codazzi",
        CodazziMode::Differenced4 => "codazzi_order4",
    };
    Ok(Report::from_stats(name, stats, Some((norm.grid.meta(), &norm.grid)), tolerance)
        .with_detail("x1_component", ResidualStats::of_field(&r1, margin).max)
        .with_detail("x2_component", ResidualStats::of_field(&r2, margin).max))
}

/// `|A(v) + (f/2) v|` for `v` given by its tilded-frame components.
pub fn eigen_residual(shape: &ShapeOperatorField, v: [&Array2<f64>; 2]) -> ScalarField {
    let values = Array2::from_shape_fn(shape.grid().shape(), |(i, j)| {
        let h = 0.5 * shape.f.values[[i, j]];
        let a = (shape.lambda1.values[[i, j]] + h) * v[0][[i, j]];
        let b = (shape.lambda2.values[[i, j]] + h) * v[1][[i, j]];
        a.hypot(b)
    });
    ScalarField {
        grid: shape.grid(),
        values,
    }
}

/// Tilded-frame components of `∇f`: `(X̃1 f, X̃2 f)`.
pub fn grad_f_frame(
    profile: &CurvatureProfile,
    shape: &ShapeOperatorField,
) -> Result<[Array2<f64>; 2]> {
    let mc = mean_curvature_from_k(profile)?;
    let grid = shape.grid();
    let fp = ScalarField::from_u_samples(grid, &mc.fprime)?;
    // f depends on u only, so X2 f = 0
    Ok([
        fp.values.mapv(|d| shape.frame_sign * d),
        Array2::zeros(grid.shape()),
    ])
}

/// `A(∇f) = -(f/2)∇f`, measured as `|A(∇f) + (f/2)∇f|`.
pub fn biconservativity_check(
    profile: &CurvatureProfile,
    metric: &MetricGrid,
    shape: &ShapeOperatorField,
    tolerance: f64,
) -> Result<Report> {
    check_grid(metric, profile)?;
    let g = grad_f_frame(profile, shape)?;
    let r = eigen_residual(shape, [&g[0], &g[1]]);
    let stats = ResidualStats::of_field(&r, 0);
    Ok(Report::from_stats(
        "biconservativity",
        stats,
        Some((r.grid.meta(), &r.grid)),
        tolerance,
    ))
}

/// Checks `(X̃1 f)/f = -(X̃1 K)/(2(c-K))` and `3X1f/(4f) = -3X1K/(8(c-K))`
/// by the chain rule, and reports the gap between differenced and exact
/// `X1 f` as a detail.
pub fn frame_connection_tilded_check(
    profile: &CurvatureProfile,
    metric: &MetricGrid,
    tolerance: f64,
) -> Result<Report> {
    check_grid(metric, profile)?;
    let mc = mean_curvature_from_k(profile)?;
    let c = profile.c();
    let n = profile.len();
    let mut ident = vec![0.0; n];
    let mut coef = vec![0.0; n];
    for i in 0..n {
        let (k, kp) = (profile.k()[i], profile.kprime()[i]);
        let (f, fp) = (mc.f[i], mc.fprime[i]);
        // X̃1 = -X1 acting on functions of u
        let (xt_f, xt_k) = (-fp, -kp);
        ident[i] = xt_f / f + xt_k / (2.0 * (c - k));
        coef[i] = 3.0 * fp / (4.0 * f) + 3.0 * kp / (8.0 * (c - k));
    }
    let grid = metric.grid;
    let a = ScalarField::from_u_samples(grid, &ident)?;
    let b = ScalarField::from_u_samples(grid, &coef)?;
    let worst = a.zip_with(&b, |x, y| x.abs().max(y.abs()))?;
    let stats = ResidualStats::of_field(&worst, 0);
    let fd_gap = if n >= 3 {
        let d = stencil::diff_1d(&mc.f, profile.axis()?.step);
        let gaps: Vec<f64> = d.iter().zip(&mc.fprime).map(|(x, y)| x - y).collect();
        ResidualStats::of_slice(&gaps, BOUNDARY_LAYER).max
    } else {
        0.0
    };
    Ok(Report::from_stats(
        "frame_connection_tilded",
        stats,
        Some((grid.meta(), &grid)),
        tolerance,
    )
    .with_detail("identity", ResidualStats::of_field(&a, 0).max)
    .with_detail("coefficient", ResidualStats::of_field(&b, 0).max)
    .with_detail("fd_gap", fd_gap))
}
