//! Second-order finite differences on uniform grids.
//!
//! Interior points use central stencils, the two boundary rows use the
//! second-order one-sided formulas.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis as NdAxis};

/// Grid direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    U,
    S,
}

impl Dir {
    fn nd(self) -> NdAxis {
        match self {
            Dir::U => NdAxis(0),
            Dir::S => NdAxis(1),
        }
    }
}

fn diff_line(f: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, h: f64) {
    let n = f.len();
    if n < 3 {
        out.fill(0.0);
        if n == 2 {
            let d = (f[1] - f[0]) / h;
            out.fill(d);
        }
        return;
    }
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
}

fn second_line(f: ArrayView1<f64>, mut out: ArrayViewMut1<f64>, h: f64) {
    let n = f.len();
    if n < 4 {
        out.fill(0.0);
        return;
    }
    let h2 = h * h;
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
    }
    out[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
}

/// First derivative along `dir`.
pub fn diff(f: &Array2<f64>, dir: Dir, h: f64) -> Array2<f64> {
    let mut out = Array2::zeros(f.dim());
    for (line, o) in f.lanes(dir.nd()).into_iter().zip(out.lanes_mut(dir.nd())) {
        diff_line(line, o, h);
    }
    out
}

/// Second derivative along `dir` with the three-point stencil.
pub fn second_diff(f: &Array2<f64>, dir: Dir, h: f64) -> Array2<f64> {
    let mut out = Array2::zeros(f.dim());
    for (line, o) in f.lanes(dir.nd()).into_iter().zip(out.lanes_mut(dir.nd())) {
        second_line(line, o, h);
    }
    out
}

/// `d/dx (coef * d f/dx)` along one direction.
///
/// Interior points use the compact flux form with midpoint-averaged
/// coefficients; boundary rows fall back to differencing the flux.
pub fn div_coef_grad(coef: &Array2<f64>, f: &Array2<f64>, dir: Dir, h: f64) -> Array2<f64> {
    let flux = coef * &diff(f, dir, h);
    let mut out = diff(&flux, dir, h);
    let h2 = h * h;
    for ((c, v), mut o) in coef
        .lanes(dir.nd())
        .into_iter()
        .zip(f.lanes(dir.nd()))
        .zip(out.lanes_mut(dir.nd()))
    {
        let n = v.len();
        for i in 1..n.saturating_sub(1) {
            let cp = 0.5 * (c[i] + c[i + 1]);
            let cm = 0.5 * (c[i] + c[i - 1]);
            o[i] = (cp * (v[i + 1] - v[i]) - cm * (v[i] - v[i - 1])) / h2;
        }
    }
    out
}

/// 1-D first derivative, second order.
pub fn diff_1d(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = ndarray::Array1::zeros(f.len());
    diff_line(ArrayView1::from(f), out.view_mut(), h);
    out.to_vec()
}

/// 1-D first derivative with five-point (fourth-order) stencils, one-sided at
/// the ends. Falls back to [`diff_1d`] below five samples.
pub fn diff_1d_order4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    if n < 5 {
        return diff_1d(f, h);
    }
    let mut out = vec![0.0; n];
    let fwd = |f: &[f64], i: usize, sgn: f64| {
        // (-25 f0 + 48 f1 - 36 f2 + 16 f3 - 3 f4) / 12h, mirrored for the right end
        let g = |k: usize| {
            if sgn > 0.0 {
                f[i + k]
            } else {
                f[i - k]
            }
        };
        sgn * (-25.0 * g(0) + 48.0 * g(1) - 36.0 * g(2) + 16.0 * g(3) - 3.0 * g(4)) / (12.0 * h)
    };
    let skew = |f: &[f64], i: usize, sgn: f64| {
        // one point in from the edge: (-3 f_{-1} - 10 f0 + 18 f1 - 6 f2 + f3) / 12h
        let g = |k: isize| {
            let idx = if sgn > 0.0 {
                i as isize + k
            } else {
                i as isize - k
            };
            f[idx as usize]
        };
        sgn * (-3.0 * g(-1) - 10.0 * g(0) + 18.0 * g(1) - 6.0 * g(2) + g(3)) / (12.0 * h)
    };
    out[0] = fwd(f, 0, 1.0);
    out[1] = skew(f, 1, 1.0);
    for i in 2..n - 2 {
        out[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    }
    out[n - 2] = skew(f, n - 2, -1.0);
    out[n - 1] = fwd(f, n - 1, -1.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, m: usize, h: f64, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn((n, m), |(i, j)| f(i as f64 * h, j as f64 * h))
    }

    #[test]
    fn quadratics_are_differentiated_exactly() {
        let h = 0.1;
        let f = sample(7, 6, h, |u, s| 3.0 * u * u - 2.0 * u * s + s * s);
        let du = diff(&f, Dir::U, h);
        let dss = second_diff(&f, Dir::S, h);
        for ((i, j), v) in du.indexed_iter() {
            let (u, s) = (i as f64 * h, j as f64 * h);
            assert!((v - (6.0 * u - 2.0 * s)).abs() < 1e-12);
            assert!((dss[[i, j]] - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn compact_divergence_matches_product_rule_order_two() {
        let err = |n: usize| {
            let h = 1.0 / (n - 1) as f64;
            let c = sample(n, 3, h, |u, _| 1.0 + u * u);
            let f = sample(n, 3, h, |u, _| u.sin());
            let d = div_coef_grad(&c, &f, Dir::U, h);
            (1..n - 1)
                .map(|i| {
                    let u = i as f64 * h;
                    let exact = 2.0 * u * u.cos() - (1.0 + u * u) * u.sin();
                    (d[[i, 1]] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(41) / err(81);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn order4_derivative_converges_fast() {
        let err = |n: usize| {
            let h = 1.0 / (n - 1) as f64;
            let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).exp()).collect();
            diff_1d_order4(&f, h)
                .iter()
                .enumerate()
                .map(|(i, d)| (d - (i as f64 * h).exp()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(21) / err(41);
        assert!(ratio > 12.0, "ratio {ratio}");
        assert!(err(101) < 1e-8);
    }
}
