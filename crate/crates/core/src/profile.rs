//! The curvature ODE `24(c-K)K'' + 33K'^2 + 64K(c-K)^2 = 0` and its sampled solutions.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid2, ScalarField};
use crate::jet::Jet;
use crate::ode::{self, Dopri5Options, Termination};
use crate::report::BOUNDARY_LAYER;
use crate::stencil;

/// Exclusion margin around the singular sets `c - K = 0` and `K' = 0`.
pub fn eps_dom(c: f64, k: f64) -> f64 {
    1e-6 * 1f64.max(c.abs()).max(k.abs())
}

/// `K''` from the curvature ODE.
pub fn ode_rhs(c: f64, k: f64, kprime: f64) -> Result<f64> {
    let gap = c - k;
    if !(gap > eps_dom(c, k)) {
        return Err(Error::domain(format!(
            "c - K = {gap:e} is inside the exclusion margin (c = {c}, K = {k})"
        )));
    }
    Ok(-(33.0 * kprime * kprime + 64.0 * k * gap * gap) / (24.0 * gap))
}

/// The curvature ODE written as a residual, for externally supplied `K''`.
pub fn ode_residual(c: f64, k: f64, kprime: f64, ksecond: f64) -> f64 {
    24.0 * (c - k) * ksecond + 33.0 * kprime * kprime + 64.0 * k * (c - k) * (c - k)
}

/// Taylor jet of the ODE solution through `(K, K')`, derived by repeatedly
/// differentiating the right-hand side.
pub fn solution_jet<const N: usize>(c: f64, k: f64, kprime: f64) -> Result<Jet<N>> {
    ode_rhs(c, k, kprime)?;
    let mut jet = Jet::<N>::from_derivatives(&[k, kprime]);
    for m in 2..N {
        let kp = jet.derivative();
        let gap = c - jet;
        let rhs = -(kp * kp * 33.0 + jet * gap * gap * 64.0) / (gap * 24.0);
        // K'' = rhs, so the normalized coefficient of order m is rhs_{m-2} / (m (m-1))
        jet.0[m] = rhs.0[m - 2] / (m * (m - 1)) as f64;
    }
    Ok(jet)
}

/// Sampled solution `K(u)`, `K'(u)` of the curvature ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    c: f64,
    u: Vec<f64>,
    #[serde(rename = "K")]
    k: Vec<f64>,
    #[serde(rename = "Kprime")]
    kprime: Vec<f64>,
    truncated: bool,
    #[serde(skip)]
    truncation_note: Option<String>,
}

impl CurvatureProfile {
    /// Validated profile: increasing grid, `c - K` outside the exclusion
    /// margin and `K' > 0` at every sample.
    pub fn new(c: f64, u: Vec<f64>, k: Vec<f64>, kprime: Vec<f64>) -> Result<Self> {
        let p = Self::new_relaxed(c, u, k, kprime)?;
        if let Some((i, v)) = p.kprime.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::domain(format!("K' = {v} is not positive at sample {i}")));
        }
        Ok(p)
    }

    /// Like [`CurvatureProfile::new`] but allows `K' <= 0`; used for test
    /// fixtures and limiting rows.
    pub fn new_relaxed(c: f64, u: Vec<f64>, k: Vec<f64>, kprime: Vec<f64>) -> Result<Self> {
        if u.is_empty() || u.len() != k.len() || u.len() != kprime.len() {
            return Err(Error::mismatch(format!(
                "profile columns have lengths {}, {}, {}",
                u.len(),
                k.len(),
                kprime.len()
            )));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::mismatch("u grid must be strictly increasing"));
        }
        let p = CurvatureProfile {
            c,
            u,
            k,
            kprime,
            truncated: false,
            truncation_note: None,
        };
        p.check_domain()?;
        Ok(p)
    }

    fn check_domain(&self) -> Result<()> {
        for (i, &k) in self.k.iter().enumerate() {
            if !(self.c - k > eps_dom(self.c, k)) {
                return Err(Error::domain(format!(
                    "c - K = {:e} inside the exclusion margin at sample {i}",
                    self.c - k
                )));
            }
        }
        Ok(())
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn kprime(&self) -> &[f64] {
        &self.kprime
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn truncation_note(&self) -> Option<&str> {
        self.truncation_note.as_deref()
    }

    /// `K''` at every sample from the ODE.
    pub fn ksecond(&self) -> Result<Vec<f64>> {
        self.k
            .iter()
            .zip(&self.kprime)
            .map(|(&k, &kp)| ode_rhs(self.c, k, kp))
            .collect()
    }

    /// Taylor jet of `K` at sample `i`.
    pub fn jet<const N: usize>(&self, i: usize) -> Result<Jet<N>> {
        solution_jet(self.c, self.k[i], self.kprime[i])
    }

    /// The sample grid as a uniform axis; fails on non-uniform spacing.
    pub fn axis(&self) -> Result<Axis> {
        let n = self.u.len();
        let axis = Axis::uniform(self.u[0], self.u[n - 1], n)?;
        let tol = 1e-9 * axis.step.max(1e-300);
        if n > 1
            && self
                .u
                .iter()
                .enumerate()
                .any(|(i, &x)| (x - axis.value(i)).abs() > tol)
        {
            return Err(Error::mismatch("profile grid is not uniform"));
        }
        Ok(axis)
    }

    /// Cubic Hermite interpolation of `K` from the stored `(K, K')` pairs.
    pub fn interpolate_k(&self, u: f64) -> f64 {
        let n = self.u.len();
        if n == 1 {
            return self.k[0];
        }
        let i = match self.u.partition_point(|&x| x <= u) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (u0, u1) = (self.u[i], self.u[i + 1]);
        let h = u1 - u0;
        let t = ((u - u0) / h).clamp(0.0, 1.0);
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.k[i] + h10 * h * self.kprime[i] + h01 * self.k[i + 1] + h11 * h * self.kprime[i + 1]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["u", "K", "Kprime"])?;
        for i in 0..self.len() {
            wr.write_record(&[
                self.u[i].to_string(),
                self.k[i].to_string(),
                self.kprime[i].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `u,K,Kprime` rows; `c` is not part of the CSV layout.
    pub fn read_csv<R: Read>(r: R, c: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["u", "K", "Kprime"] {
            return Err(Error::mismatch(format!("unexpected profile header {headers:?}")));
        }
        let (mut u, mut k, mut kp) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::mismatch(format!("bad number in profile row {rec:?}")))
            };
            u.push(parse(0)?);
            k.push(parse(1)?);
            kp.push(parse(2)?);
        }
        Self::new_relaxed(c, u, k, kp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: CurvatureProfile = serde_json::from_str(s)?;
        let mut p = Self::new_relaxed(raw.c, raw.u, raw.k, raw.kprime)?;
        p.truncated = raw.truncated;
        Ok(p)
    }
}

/// Integrates the curvature ODE from `(k0, kprime0)` at `u_span.0`.
///
/// The integration halts before `c - K` or `K'` enters the exclusion margin;
/// in that case the span is shortened and the profile is flagged as
/// truncated. The result is resampled on `samples` uniform points (a single
/// point for an empty span).
pub fn integrate_profile(
    c: f64,
    k0: f64,
    kprime0: f64,
    u_span: (f64, f64),
    tol: f64,
    samples: usize,
) -> Result<CurvatureProfile> {
    let (a, b) = u_span;
    if !(c - k0 > eps_dom(c, k0)) {
        return Err(Error::domain(format!("initial data violates c - K > 0 (c - K0 = {})", c - k0)));
    }
    if !(kprime0 > eps_dom(c, k0)) {
        return Err(Error::domain(format!("initial data violates K' > 0 (K'0 = {kprime0})")));
    }
    if !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!("invalid u span [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if b == a {
        return CurvatureProfile::new(c, vec![a], vec![k0], vec![kprime0]);
    }
    if samples < 2 {
        return Err(Error::mismatch("a non-empty span needs at least two samples"));
    }
    let guard = |_: f64, y: &[f64; 2]| -> Option<String> {
        let eps = eps_dom(c, y[0]);
        if !(c - y[0] > eps) {
            Some("c - K reached the exclusion margin".to_string())
        } else if !(y[1] > eps) {
            Some("K' reached the exclusion margin".to_string())
        } else {
            None
        }
    };
    let rhs = |_: f64, y: &[f64; 2]| -> Result<[f64; 2]> { Ok([y[1], ode_rhs(c, y[0], y[1])?]) };
    let opts = Dopri5Options::with_tol(tol);
    let nodes = Axis::uniform(a, b, samples)?.values();
    let (mut sol, term) =
        ode::integrate_with_stops(rhs, guard, a, [k0, kprime0], b, &nodes, opts)?;
    if let Termination::Halted { at, .. } = &term {
        // rerun so the shortened uniform grid is hit by step endpoints
        if *at > a {
            let nodes = Axis::uniform(a, *at, samples)?.values();
            sol = ode::integrate_with_stops(rhs, guard, a, [k0, kprime0], *at, &nodes, opts)?.0;
        }
    }
    log::debug!(
        "profile integration: {} accepted, {} rejected steps",
        sol.accepted_steps(),
        sol.rejected_steps()
    );
    let (end, note) = match term {
        Termination::Completed => (b, None),
        Termination::Halted { at, reason } => {
            log::info!("profile truncated at u = {at}: {reason}");
            (at, Some(format!("span truncated at u = {at}: {reason}")))
        }
    };
    let mut p = if end <= a {
        CurvatureProfile::new(c, vec![a], vec![k0], vec![kprime0])?
    } else {
        let axis = Axis::uniform(a, end, samples)?;
        let (mut u, mut k, mut kp) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..samples {
            let x = if i + 1 == samples { end } else { axis.value(i) };
            let y = sol.eval(x);
            u.push(x);
            k.push(y[0]);
            kp.push(y[1]);
        }
        CurvatureProfile::new(c, u, k, kp)?
    };
    p.truncated = note.is_some();
    p.truncation_note = note;
    Ok(p)
}

/// A grid with the profile's `u` samples and a single `s = 0` column.
pub fn profile_grid(profile: &CurvatureProfile) -> Result<Grid2> {
    Ok(Grid2::new(profile.axis()?, Axis::uniform(0.0, 0.0, 1)?))
}

/// Frame Laplacian of a function of `u` alone:
/// `Δh = -h'' - 3K'/(8(c-K)) h'`.
pub fn frame_laplacian(c: f64, k: f64, kprime: f64, h1: f64, h2: f64) -> f64 {
    -h2 - 3.0 * kprime / (8.0 * (c - k)) * h1
}

/// `(c-K)ΔK - |∇K|^2 - (8/3)K(c-K)^2` along the profile, with `K''` taken by
/// fourth-order differencing of the stored `K'` samples.
pub fn pde_residual(profile: &CurvatureProfile) -> Result<ScalarField> {
    let ksecond = if profile.len() >= 3 {
        let axis = profile.axis()?;
        stencil::diff_1d_order4(profile.kprime(), axis.step)
    } else {
        profile.ksecond()?
    };
    pde_residual_with(profile, &ksecond)
}

/// [`pde_residual`] with caller-supplied `K''` samples.
pub fn pde_residual_with(profile: &CurvatureProfile, ksecond: &[f64]) -> Result<ScalarField> {
    if ksecond.len() != profile.len() {
        return Err(Error::mismatch("K'' samples do not match the profile"));
    }
    let c = profile.c();
    let mut out = Vec::with_capacity(profile.len());
    for i in 0..profile.len() {
        let (k, kp) = (profile.k()[i], profile.kprime()[i]);
        let gap = c - k;
        if !(gap > eps_dom(c, k)) {
            return Err(Error::domain(format!("c - K inside the exclusion margin at sample {i}")));
        }
        let lap_k = frame_laplacian(c, k, kp, kp, ksecond[i]);
        out.push(gap * lap_k - kp * kp - 8.0 / 3.0 * k * gap * gap);
    }
    let grid = if profile.len() > 1 {
        profile_grid(profile)?
    } else {
        Grid2::new(
            Axis::uniform(profile.u()[0], profile.u()[0], 1)?,
            Axis::uniform(0.0, 0.0, 1)?,
        )
    };
    ScalarField::from_u_samples(grid, &out)
}

/// Largest interior magnitude among the three terms of [`pde_residual`], the
/// natural scale for its tolerance since the expression is cubic in `K`.
pub fn pde_term_scale(profile: &CurvatureProfile) -> Result<f64> {
    let axis = profile.axis()?;
    let ksecond = stencil::diff_1d_order4(profile.kprime(), axis.step);
    let c = profile.c();
    let n = profile.len();
    let mut scale = 0.0f64;
    for i in BOUNDARY_LAYER.min(n / 2)..n - BOUNDARY_LAYER.min(n / 2) {
        let (k, kp) = (profile.k()[i], profile.kprime()[i]);
        let gap = c - k;
        let lap_k = frame_laplacian(c, k, kp, kp, ksecond[i]);
        scale = scale
            .max((gap * lap_k).abs())
            .max(kp * kp)
            .max((8.0 / 3.0 * k * gap * gap).abs());
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{ResidualStats, BOUNDARY_LAYER};

    /// Fixed-step classical RK4 used as an independent oracle.
    fn rk4(c: f64, k0: f64, kp0: f64, u_end: f64, h: f64) -> (f64, f64) {
        let f = |y: [f64; 2]| [y[1], -(33.0 * y[1] * y[1] + 64.0 * y[0] * (c - y[0]).powi(2)) / (24.0 * (c - y[0]))];
        let n = (u_end / h).round() as usize;
        let mut y = [k0, kp0];
        for _ in 0..n {
            let k1 = f(y);
            let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
            for j in 0..2 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        (y[0], y[1])
    }

    #[test]
    fn ode_rhs_examples() {
        assert!(ode_rhs(0.0, 0.0, 0.0).is_err()); // c - K = 0 is singular
        assert!((ode_rhs(0.0, -1.0, 1.0).unwrap() - 31.0 / 24.0).abs() < 1e-15);
        assert!((ode_rhs(1.0, 0.0, 1.0).unwrap() + 1.375).abs() < 1e-15);
        assert!(ode_rhs(1.0, 1.0 - 1e-9, 1.0).is_err());
    }

    #[test]
    fn ode_rhs_vanishes_when_every_term_does() {
        // K = 0, K' = 0 with c > 0: numerator 33*0 + 64*0 = 0
        assert_eq!(ode_rhs(1.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_span_gives_single_sample() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 0.0), 1e-10, 11).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.k(), &[-1.0]);
        assert_eq!(p.kprime(), &[1.0]);
        assert!(!p.truncated());
    }

    #[test]
    fn matches_fine_rk4_oracle() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 0.1), 1e-10, 11).unwrap();
        let (k_ref, kp_ref) = rk4(0.0, -1.0, 1.0, 0.1, 1e-6);
        let n = p.len() - 1;
        assert!((p.k()[n] - k_ref).abs() < 1e-8, "{} vs {k_ref}", p.k()[n]);
        assert!((p.kprime()[n] - kp_ref).abs() < 1e-8);
    }

    #[test]
    fn rk4_oracle_is_fourth_order() {
        let (k_ref, _) = rk4(0.0, -1.0, 1.0, 0.5, 1e-4);
        let (k1, _) = rk4(0.0, -1.0, 1.0, 0.5, 0.05);
        let (k2, _) = rk4(0.0, -1.0, 1.0, 0.5, 0.025);
        let ratio = (k1 - k_ref).abs() / (k2 - k_ref).abs();
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn truncates_before_singular_set() {
        let p = integrate_profile(1.0, -1.0, 2.0, (0.0, 5.0), 1e-10, 101).unwrap();
        assert!(p.truncated());
        assert!(p.truncation_note().is_some());
        assert!(*p.u().last().unwrap() < 5.0);
        for (&k, &kp) in p.k().iter().zip(p.kprime()) {
            assert!(1.0 - k > eps_dom(1.0, k));
            assert!(kp > 0.0);
        }
    }

    #[test]
    fn invalid_initial_data_is_rejected() {
        assert!(matches!(
            integrate_profile(1.0, 2.0, 1.0, (0.0, 1.0), 1e-8, 11),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            integrate_profile(0.0, -1.0, -1.0, (0.0, 1.0), 1e-8, 11),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pde_residual_small_for_tight_integration() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 1.0), 1e-12, 401).unwrap();
        let r = pde_residual(&p).unwrap();
        let st = ResidualStats::of_field(&r, BOUNDARY_LAYER);
        assert!(st.max < 1e-8, "{}", st.max);
    }

    #[test]
    fn pde_residual_converges_at_fourth_order() {
        let m = |n: usize| {
            let p = integrate_profile(1.0, -1.0, 1.0, (0.0, 0.5), 1e-12, n).unwrap();
            ResidualStats::of_field(&pde_residual(&p).unwrap(), BOUNDARY_LAYER).max
        };
        let ratio = m(51) / m(101);
        assert!(ratio > 10.0, "ratio {ratio}");
    }

    #[test]
    fn pde_residual_is_linear_in_ksecond() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 0.5), 1e-12, 51).unwrap();
        let mut ks = p.ksecond().unwrap();
        let base = pde_residual_with(&p, &ks).unwrap();
        let delta = 1e-3;
        ks[20] += delta;
        let pert = pde_residual_with(&p, &ks).unwrap();
        let change = pert.values[[20, 0]] - base.values[[20, 0]];
        let want = -(0.0 - p.k()[20]) * delta;
        assert!((change - want).abs() < 1e-14, "{change} vs {want}");
        assert_eq!(pert.values[[19, 0]], base.values[[19, 0]]);
    }

    #[test]
    fn pde_residual_of_zero_curvature_is_zero() {
        let p = CurvatureProfile::new_relaxed(0.5, vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![0.0; 5], vec![0.0; 5]).unwrap();
        let r = pde_residual(&p).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn ode_residual_vanishes_with_rhs() {
        let p = integrate_profile(-1.0, -2.0, 1.0, (0.0, 1.0), 1e-10, 101).unwrap();
        for i in 0..p.len() {
            let (k, kp) = (p.k()[i], p.kprime()[i]);
            let ks = ode_rhs(-1.0, k, kp).unwrap();
            let scale = 33.0 * kp * kp + (64.0 * k * (-1.0 - k).powi(2)).abs();
            assert!(ode_residual(-1.0, k, kp, ks).abs() <= 10.0 * 1e-10 * scale);
        }
    }

    #[test]
    fn jet_matches_differenced_ksecond() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 0.2), 1e-12, 3).unwrap();
        let j = p.jet::<5>(1).unwrap();
        assert!((j.derivative_at(2) - ode_rhs(0.0, p.k()[1], p.kprime()[1]).unwrap()).abs() < 1e-14);
        // third derivative by fourth-order differencing of K''
        let q = integrate_profile(0.0, -1.0, 1.0, (0.0, 0.04), 1e-13, 41).unwrap();
        let ks = q.ksecond().unwrap();
        let k3 = stencil::diff_1d_order4(&ks, 0.001);
        let j = q.jet::<5>(20).unwrap();
        assert!((j.derivative_at(3) - k3[20]).abs() < 1e-6, "{} vs {}", j.derivative_at(3), k3[20]);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 0.3), 1e-10, 7).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("u,K,Kprime\n"));
        let q = CurvatureProfile::read_csv(buf.as_slice(), 0.0).unwrap();
        assert_eq!(p.k(), q.k());
        let js = p.to_json().unwrap();
        assert!(js.contains("\"Kprime\"") && js.contains("\"truncated\":false"));
        assert_eq!(CurvatureProfile::from_json(&js).unwrap(), p);
    }

    #[test]
    fn hermite_interpolation_is_accurate() {
        let p = integrate_profile(0.0, -1.0, 1.0, (0.0, 1.0), 1e-12, 101).unwrap();
        let fine = integrate_profile(0.0, -1.0, 1.0, (0.0, 1.0), 1e-12, 201).unwrap();
        for i in (1..200).step_by(2) {
            assert!((p.interpolate_k(fine.u()[i]) - fine.k()[i]).abs() < 1e-9);
        }
    }
}
