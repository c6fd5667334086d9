//! Flattening exponent: a function `r(u)` for which
//! `(c-K_r)^{1/2}(c-K)^r g` is flat, i.e. `K + Δφ = 0` with
//! `φ = ¼log(c-K_r) + (r/2)log(c-K)`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, ScalarField};
use crate::jet::Jet;
use crate::metric::{gauss_curvature_fd, MetricGrid};
use crate::ode::{self, Dopri5Options, Termination};
use crate::profile::{eps_dom, profile_grid, solution_jet, CurvatureProfile};
use crate::report::{refinement_tolerance, Report, ResidualStats, BOUNDARY_LAYER};
use crate::stencil;

type J = Jet<5>;

pub const SHOOTING_TOL: f64 = 1e-8;
pub const COLLOCATION_TOL: f64 = 1e-6;

/// Shooting halts once `r` or a derivative grows past this.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// Upper bound on the collocation basis when it is enlarged after a stall.
pub const MAX_BASIS: usize = 48;

/// `r(u)` with its derivatives on a profile's `u` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentProfile {
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub rprime: Vec<f64>,
    pub rsecond: Vec<f64>,
    pub rthird: Vec<f64>,
    /// `r''''` when the producer knows it; otherwise it is differenced from `rthird`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rfourth: Option<Vec<f64>>,
    /// `c - K_r > eps` per sample; empty until evaluated against a profile.
    #[serde(default)]
    pub feasible: Vec<bool>,
}

impl ExponentProfile {
    pub fn new(
        u: Vec<f64>,
        r: Vec<f64>,
        rprime: Vec<f64>,
        rsecond: Vec<f64>,
        rthird: Vec<f64>,
    ) -> Result<Self> {
        let n = u.len();
        if [&r, &rprime, &rsecond, &rthird].iter().any(|v| v.len() != n) {
            return Err(Error::mismatch("exponent columns differ in length"));
        }
        Ok(ExponentProfile {
            u,
            r,
            rprime,
            rsecond,
            rthird,
            rfourth: None,
            feasible: Vec::new(),
        })
    }

    /// `r ≡ value` on the profile grid.
    pub fn constant(profile: &CurvatureProfile, value: f64) -> Self {
        let n = profile.len();
        ExponentProfile {
            u: profile.u().to_vec(),
            r: vec![value; n],
            rprime: vec![0.0; n],
            rsecond: vec![0.0; n],
            rthird: vec![0.0; n],
            rfourth: Some(vec![0.0; n]),
            feasible: Vec::new(),
        }
    }

    /// Samples a closure returning `[r, r', r'', r''', r'''']`.
    pub fn from_fn(profile: &CurvatureProfile, f: impl Fn(f64) -> [f64; 5]) -> Self {
        let vals: Vec<[f64; 5]> = profile.u().iter().map(|&u| f(u)).collect();
        let col = |k: usize| vals.iter().map(|v| v[k]).collect::<Vec<_>>();
        ExponentProfile {
            u: profile.u().to_vec(),
            r: col(0),
            rprime: col(1),
            rsecond: col(2),
            rthird: col(3),
            rfourth: Some(col(4)),
            feasible: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `r''''` at every sample, stored or by fourth-order differencing.
    pub fn fourth(&self) -> Result<Vec<f64>> {
        if let Some(f) = &self.rfourth {
            return Ok(f.clone());
        }
        if self.len() < 5 {
            return Err(Error::GridTooSmall {
                needed: 5,
                got: self.len(),
            });
        }
        let h = Axis::uniform(self.u[0], self.u[self.len() - 1], self.len())?.step;
        Ok(stencil::diff_1d_order4(&self.rthird, h))
    }

    fn jet(&self, i: usize, fourth: f64) -> J {
        J::from_derivatives(&[
            self.r[i],
            self.rprime[i],
            self.rsecond[i],
            self.rthird[i],
            fourth,
        ])
    }

    fn check(&self, profile: &CurvatureProfile) -> Result<()> {
        if self.len() != profile.len()
            || self
                .u
                .iter()
                .zip(profile.u())
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
        {
            return Err(Error::mismatch("exponent grid differs from the profile grid"));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["u", "r", "rprime", "rsecond", "rthird"];
        if self.rfourth.is_some() {
            head.push("rfourth");
        }
        wr.write_record(&head)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.u[i].to_string(),
                self.r[i].to_string(),
                self.rprime[i].to_string(),
                self.rsecond[i].to_string(),
                self.rthird[i].to_string(),
            ];
            if let Some(f) = &self.rfourth {
                row.push(f[i].to_string());
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        let has_fourth = headers.iter().any(|h| h == "rfourth");
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); if has_fourth { 6 } else { 5 }];
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != cols.len() {
                return Err(Error::mismatch(format!(
                    "expected {} columns, found {}",
                    cols.len(),
                    rec.len()
                )));
            }
            for (col, field) in cols.iter_mut().zip(rec.iter()) {
                col.push(field.trim().parse().map_err(|_| {
                    Error::mismatch(format!("not a number: {field:?}"))
                })?);
            }
        }
        let fourth = has_fourth.then(|| cols.pop().unwrap_or_default());
        let mut it = cols.into_iter();
        let mut next = || it.next().unwrap_or_default();
        let mut p = ExponentProfile::new(next(), next(), next(), next(), next())?;
        p.rfourth = fourth;
        Ok(p)
    }
}

/// `K_r` as a jet; coefficients are exact through second order.
fn kr_jet(c: f64, k: &J, r: &J) -> Result<J> {
    let w = c - *k;
    let log = w
        .ln()
        .ok_or_else(|| Error::domain(format!("c - K = {:e} is not positive", w.value())))?;
    let kp = k.derivative();
    let b = kp * (3.0 / 8.0) / w;
    let rp = r.derivative();
    let lap_r = -rp.derivative() - b * rp;
    let inner = *k * ((3.0 - *r * 4.0) * (1.0 / 3.0)) + log * lap_r * 0.5 + rp * kp / w;
    Ok((-(*r * log)).exp() * inner)
}

/// `K + Δφ` at one point; the value is the only exact coefficient.
fn residual_jet(c: f64, k: &J, r: &J) -> std::result::Result<f64, PointError> {
    if !(c - k.value() > eps_dom(c, k.value())) {
        return Err(PointError::Domain);
    }
    let kr = kr_jet(c, k, r).map_err(|_| PointError::Domain)?;
    let gap = c - kr;
    if !(gap.value() > eps_dom(c, kr.value())) {
        return Err(PointError::Infeasible(gap.value()));
    }
    let w = c - *k;
    let log = w.ln().ok_or(PointError::Domain)?;
    let phi = gap.ln().ok_or(PointError::Domain)? * 0.25 + *r * log * 0.5;
    let b = k.derivative() * (3.0 / 8.0) / w;
    let phip = phi.derivative();
    let lap = -phip.derivative() - b * phip;
    Ok(k.value() + lap.value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PointError {
    Domain,
    Infeasible(f64),
}

/// Curvature `K_r` of `(c-K)^r g` for a function `r(u)`.
pub fn kr_of_function_r(profile: &CurvatureProfile, rprof: &ExponentProfile) -> Result<ScalarField> {
    rprof.check(profile)?;
    let c = profile.c();
    let mut out = Vec::with_capacity(profile.len());
    for i in 0..profile.len() {
        let k = profile.jet::<5>(i)?;
        out.push(kr_jet(c, &k, &rprof.jet(i, 0.0))?.value());
    }
    ScalarField::from_u_samples(profile_grid(profile)?, &out)
}

/// Fills the per-sample feasibility flags `c - K_r > eps`.
pub fn mark_feasibility(profile: &CurvatureProfile, rprof: &mut ExponentProfile) -> Result<()> {
    let kr = kr_of_function_r(profile, rprof)?;
    let c = profile.c();
    rprof.feasible = kr.values.iter().map(|&x| c - x > eps_dom(c, x)).collect();
    Ok(())
}

/// Flatness residual `R = K + Δφ` along the profile.
pub fn flatten_residual(profile: &CurvatureProfile, rprof: &ExponentProfile) -> Result<ScalarField> {
    rprof.check(profile)?;
    let c = profile.c();
    let fourth = rprof.fourth()?;
    let mut out = Vec::with_capacity(profile.len());
    let mut bad = Vec::new();
    let mut margin = f64::INFINITY;
    for i in 0..profile.len() {
        let k = profile.jet::<5>(i)?;
        match residual_jet(c, &k, &rprof.jet(i, fourth[i])) {
            Ok(v) => out.push(v),
            Err(PointError::Infeasible(m)) => {
                bad.push(i);
                margin = margin.min(m);
                out.push(f64::NAN);
            }
            Err(PointError::Domain) => {
                return Err(Error::domain(format!("c - K not positive at sample {i}")))
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Infeasible { samples: bad, margin });
    }
    ScalarField::from_u_samples(profile_grid(profile)?, &out)
}

/// Samples at or next to a zero of `log(c-K)`, where the `r''''` coefficient vanishes.
pub fn log_zero_samples(profile: &CurvatureProfile) -> Vec<usize> {
    let c = profile.c();
    let logs: Vec<f64> = profile.k().iter().map(|&k| (c - k).ln()).collect();
    let mut out = Vec::new();
    for i in 0..logs.len() {
        let near = logs[i].abs() <= 1e-12
            || (i + 1 < logs.len() && logs[i].signum() != logs[i + 1].signum());
        if near {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// `c` minus the left side of the initial inequality.
    pub margin: f64,
}

/// Initial-data inequality `K_r(u0) < c`, written with `f = (2/√3)√(c-K)`.
pub fn feasibility_check(
    profile: &CurvatureProfile,
    r0: f64,
    r0p: f64,
    r0pp: f64,
) -> Result<Feasibility> {
    let c = profile.c();
    let (k, kp) = (profile.k()[0], profile.kprime()[0]);
    let w = c - k;
    if !(w > eps_dom(c, k)) {
        return Err(Error::domain(format!("c - K(0) = {w:e} inside the exclusion margin")));
    }
    let f = 2.0 / 3f64.sqrt() * w.sqrt();
    let fp = -kp / (3.0 * w).sqrt();
    let left = w.powf(-r0)
        * ((3.0 - 4.0 * r0) / 3.0 * k
            + 0.5 * w.ln() * (-r0pp + 3.0 * fp / (4.0 * f) * r0p)
            + r0p * kp / w);
    let margin = c - left;
    Ok(Feasibility {
        feasible: margin > 0.0,
        margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Shooting,
    Collocation,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shooting" => Ok(Method::Shooting),
            "collocation" => Ok(Method::Collocation),
            _ => Err(Error::mismatch(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub method: Method,
    /// Max-norm target for the flatness residual.
    pub tol: f64,
    pub max_iterations: usize,
    /// Initial number of Chebyshev modes in the collocation ansatz.
    pub basis_size: usize,
}

impl SolveOptions {
    pub fn shooting() -> Self {
        SolveOptions {
            method: Method::Shooting,
            tol: SHOOTING_TOL,
            max_iterations: 200,
            basis_size: 0,
        }
    }

    pub fn collocation() -> Self {
        SolveOptions {
            method: Method::Collocation,
            tol: COLLOCATION_TOL,
            max_iterations: 200,
            basis_size: 24,
        }
    }
}

/// One line of the solver trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub residual_max: f64,
    pub residual_l2: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub exponent: ExponentProfile,
    pub method: Method,
    pub iterations: usize,
    pub max_residual: f64,
    pub trace: Vec<TraceEntry>,
    /// Samples next to zeros of `log(c-K)`.
    pub degenerate: Vec<usize>,
}

impl Solution {
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.trace {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Solves `K + Δφ = 0` for `r` from `(r, r', r'', r''')` at the first sample.
pub fn solve_exponent(
    profile: &CurvatureProfile,
    init: [f64; 4],
    opts: SolveOptions,
) -> Result<Solution> {
    if profile.len() < 5 {
        return Err(Error::GridTooSmall {
            needed: 5,
            got: profile.len(),
        });
    }
    let feas = feasibility_check(profile, init[0], init[1], init[2])?;
    if !feas.feasible {
        return Err(Error::Infeasible {
            samples: vec![0],
            margin: feas.margin,
        });
    }
    let degenerate = log_zero_samples(profile);
    if !degenerate.is_empty() {
        log::warn!(
            "log(c - K) vanishes next to samples {degenerate:?}; the r'''' coefficient degenerates there"
        );
    }
    let mut sol = match opts.method {
        Method::Shooting => shoot(profile, init, &opts)?,
        Method::Collocation => collocate(profile, init, &opts)?,
    };
    sol.degenerate = degenerate;
    mark_feasibility(profile, &mut sol.exponent)?;
    Ok(sol)
}

/// `r''''` making the residual vanish. The residual is affine in `r''''`, so
/// the secant iteration from a bracketing pair terminates after one or two
/// steps; a vanishing slope returns `None`.
fn isolate_fourth(c: f64, k: &J, r: [f64; 4]) -> std::result::Result<Option<f64>, PointError> {
    let eval = |x: f64| residual_jet(c, k, &J::from_derivatives(&[r[0], r[1], r[2], r[3], x]));
    let (mut x0, mut x1) = (0.0, 1.0);
    let (mut f0, mut f1) = (eval(x0)?, eval(x1)?);
    let scale = f0.abs().max(k.value().abs()).max(1.0);
    // already a root to rounding: near log(c - K) = 0 the slope is tiny and
    // dividing rounding noise by it would kick r off the solution
    if f0.abs() <= 4.0 * f64::EPSILON * scale {
        return Ok(Some(0.0));
    }
    for _ in 0..8 {
        let slope = (f1 - f0) / (x1 - x0);
        if !(slope.abs() > 1e-14 * scale) {
            return Ok(None);
        }
        let x2 = x1 - f1 / slope;
        let f2 = eval(x2)?;
        if f2.abs() <= 4.0 * f64::EPSILON * scale || x2 == x1 {
            return Ok(Some(x2));
        }
        (x0, f0, x1, f1) = (x1, f1, x2, f2);
    }
    Ok(Some(x1))
}

fn shoot(profile: &CurvatureProfile, init: [f64; 4], opts: &SolveOptions) -> Result<Solution> {
    let c = profile.c();
    let u = profile.u();
    let (a, b) = (u[0], u[u.len() - 1]);
    let y0 = [profile.k()[0], profile.kprime()[0], init[0], init[1], init[2], init[3]];
    let mut degenerate_hits = 0usize;
    let mut rhs = |_: f64, y: &[f64; 6]| -> Result<[f64; 6]> {
        let k = solution_jet::<5>(c, y[0], y[1])?;
        let fourth = match isolate_fourth(c, &k, [y[2], y[3], y[4], y[5]]) {
            Ok(Some(x)) => x,
            // removable point: the residual does not see r''''
            Ok(None) => {
                degenerate_hits += 1;
                0.0
            }
            Err(PointError::Infeasible(m)) => {
                return Err(Error::Infeasible {
                    samples: Vec::new(),
                    margin: m,
                })
            }
            Err(PointError::Domain) => return Err(Error::domain("c - K left the domain")),
        };
        Ok([y[1], k.derivative_at(2), y[3], y[4], y[5], fourth])
    };
    let guard = |_: f64, y: &[f64; 6]| -> Option<String> {
        if !(c - y[0] > eps_dom(c, y[0])) {
            Some("c - K reached the exclusion margin".into())
        } else if y[2..].iter().any(|v| !(v.abs() < DIVERGENCE_BOUND)) {
            Some(format!("exponent data left |x| < {DIVERGENCE_BOUND:e}"))
        } else {
            None
        }
    };
    let mut dopts = Dopri5Options::with_tol(opts.tol);
    dopts.max_steps = 200_000;
    let (dense, term) = ode::integrate_with_stops(&mut rhs, guard, a, y0, b, u, dopts)?;
    if degenerate_hits > 0 {
        log::debug!("shooting met {degenerate_hits} degenerate r'''' evaluations");
    }
    let reached = match &term {
        Termination::Completed => u.len(),
        Termination::Halted { at, .. } => u.partition_point(|&x| x <= *at),
    };
    let mut cols = [(); 5].map(|_| Vec::with_capacity(u.len()));
    let mut trace = Vec::new();
    let mut resid = Vec::with_capacity(u.len());
    for (i, &x) in u.iter().enumerate().take(reached) {
        let y = dense.eval(x);
        let k = profile.jet::<5>(i)?;
        let r = [y[2], y[3], y[4], y[5]];
        let fourth = match isolate_fourth(c, &k, r) {
            Ok(v) => v.unwrap_or(0.0),
            Err(_) => break,
        };
        let rj = J::from_derivatives(&[r[0], r[1], r[2], r[3], fourth]);
        let res = residual_jet(c, &k, &rj).unwrap_or(f64::NAN);
        for (col, v) in cols.iter_mut().zip([r[0], r[1], r[2], r[3], fourth]) {
            col.push(v);
        }
        resid.push(res);
        let stats = ResidualStats::of_slice(&resid, 0);
        trace.push(TraceEntry {
            iteration: i,
            residual_max: stats.max,
            residual_l2: stats.l2,
            step: if i == 0 { 0.0 } else { x - u[i - 1] },
        });
    }
    let max = resid.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
    if cols[0].len() < u.len() {
        let reason = match term {
            Termination::Halted { reason, .. } => reason,
            Termination::Completed => "residual evaluation failed".into(),
        };
        log::warn!("shooting stopped after {} of {} samples: {reason}", cols[0].len(), u.len());
        let [r, ..] = cols;
        return Err(Error::NonConvergence {
            iterations: dense.accepted_steps(),
            best_residual: max,
            history: resid,
            best_iterate: r,
        });
    }
    let [r, rp, rpp, rppp, r4] = cols;
    let mut exponent = ExponentProfile::new(u.to_vec(), r, rp, rpp, rppp)?;
    exponent.rfourth = Some(r4);
    if !(max <= opts.tol) {
        return Err(Error::NonConvergence {
            iterations: dense.accepted_steps(),
            best_residual: max,
            history: resid,
            best_iterate: exponent.r,
        });
    }
    Ok(Solution {
        exponent,
        method: Method::Shooting,
        iterations: dense.accepted_steps(),
        max_residual: max,
        trace,
        degenerate: Vec::new(),
    })
}

/// Collocation ansatz: the pinned cubic Taylor polynomial at `u0` plus
/// `t^4 Σ a_k T_k(2t-1)`, `t = (u-u0)/(u1-u0)`. The `t^4` factor keeps the
/// four initial values fixed and every term is smooth through `r''''`.
struct Ansatz {
    u0: f64,
    span: f64,
    init: [f64; 4],
}

impl Ansatz {
    fn jet(&self, u: f64, coef: &[f64]) -> J {
        let d = J::variable(u) - self.u0;
        let t = d * (1.0 / self.span);
        let x = t * 2.0 - 1.0;
        let mut r = J::constant(self.init[0])
            + d * self.init[1]
            + d * d * (self.init[2] / 2.0)
            + d * d * d * (self.init[3] / 6.0);
        let t4 = t * t * t * t;
        let (mut tkm1, mut tk) = (J::constant(1.0), x);
        for (k, &a) in coef.iter().enumerate() {
            let basis = if k == 0 { J::constant(1.0) } else { tk };
            r = r + t4 * basis * a;
            if k >= 1 {
                let next = x * tk * 2.0 - tkm1;
                (tkm1, tk) = (tk, next);
            }
        }
        r
    }

    /// Largest derivative (through fourth order) of each basis term on the grid.
    fn basis_scale(&self, u: &[f64], m: usize) -> Vec<f64> {
        let zero = vec![0.0; m];
        (0..m)
            .map(|j| {
                let mut e = zero.clone();
                e[j] = 1.0;
                u.iter()
                    .map(|&x| {
                        let d = self.jet(x, &e) - self.jet(x, &zero);
                        (0..5).fold(0.0f64, |a, k| a.max(d.derivative_at(k).abs()))
                    })
                    .fold(0.0f64, f64::max)
                    .max(1.0)
            })
            .collect()
    }
}

fn collocation_residuals(
    profile: &CurvatureProfile,
    kj: &[J],
    ans: &Ansatz,
    coef: &[f64],
) -> std::result::Result<DVector<f64>, PointError> {
    let c = profile.c();
    let mut out = DVector::zeros(kj.len());
    for (i, k) in kj.iter().enumerate() {
        out[i] = residual_jet(c, k, &ans.jet(profile.u()[i], coef))?;
    }
    Ok(out)
}

fn collocate(profile: &CurvatureProfile, init: [f64; 4], opts: &SolveOptions) -> Result<Solution> {
    let u = profile.u();
    let n = u.len();
    let m = opts.basis_size.max(1);
    let ans = Ansatz {
        u0: u[0],
        span: u[n - 1] - u[0],
        init,
    };
    let kj = (0..n).map(|i| profile.jet::<5>(i)).collect::<Result<Vec<_>>>()?;
    let resid = |coef: &[f64]| collocation_residuals(profile, &kj, &ans, coef);
    let mut m = m;
    let mut coef = vec![0.0; m];
    let mut res = resid(&coef).map_err(|e| match e {
        PointError::Infeasible(margin) => Error::Infeasible {
            samples: Vec::new(),
            margin,
        },
        PointError::Domain => Error::domain("c - K not positive"),
    })?;
    let max_of = |r: &DVector<f64>| r.amax();
    let mut trace = vec![TraceEntry {
        iteration: 0,
        residual_max: max_of(&res),
        residual_l2: res.norm() / (n as f64).sqrt(),
        step: 0.0,
    }];
    let mut history = vec![max_of(&res)];
    let mut lambda: f64 = 1e-3;
    let mut bscale = Vec::new();
    let mut iterations = 0;
    while max_of(&res) > opts.tol {
        if lambda > 1e12 && m < MAX_BASIS {
            // stalled: enlarge the basis, warm-started from the current iterate
            m = (2 * m).min(MAX_BASIS);
            coef.resize(m, 0.0);
            lambda = 1e-3;
            log::debug!("collocation basis enlarged to {m} modes");
        }
        if iterations >= opts.max_iterations || lambda > 1e12 {
            return Err(Error::NonConvergence {
                iterations,
                best_residual: max_of(&res),
                history,
                best_iterate: u.iter().map(|&x| ans.jet(x, &coef).value()).collect(),
            });
        }
        iterations += 1;
        if bscale.len() != m {
            bscale = ans.basis_scale(u, m);
        }
        // central-difference Jacobian, steps sized so each perturbs r'''' by about 1e-6
        let mut jac = DMatrix::zeros(n, m);
        for j in 0..m {
            let h = 1e-6 * coef[j].abs().max(1.0 / bscale[j]);
            let mut cp = coef.clone();
            cp[j] += h;
            let mut cm = coef.clone();
            cm[j] -= h;
            match (resid(&cp), resid(&cm)) {
                (Ok(a), Ok(b)) => jac.set_column(j, &((a - b) / (2.0 * h))),
                _ => {
                    let a = resid(&cp).or_else(|_| resid(&cm)).map_err(|_| {
                        Error::domain("collocation iterate left the feasible set")
                    })?;
                    jac.set_column(j, &((a - &res) / h));
                }
            }
        }
        // column scaling, then the damped step from the augmented system
        // [J S; √λ I] δ = [-R; 0] so that J^T J is never formed
        let scale: Vec<f64> = (0..m)
            .map(|j| {
                let nrm = jac.column(j).norm();
                if nrm > 0.0 {
                    1.0 / nrm
                } else {
                    1.0
                }
            })
            .collect();
        for (j, sc) in scale.iter().enumerate() {
            jac.column_mut(j).scale_mut(*sc);
        }
        let mut accepted = false;
        while lambda <= 1e12 {
            let mut aug = DMatrix::zeros(n + m, m);
            aug.view_mut((0, 0), (n, m)).copy_from(&jac);
            for d in 0..m {
                aug[(n + d, d)] = lambda.sqrt();
            }
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(-&res));
            let Ok(scaled) = aug.svd(true, true).solve(&rhs, 1e-14) else {
                lambda *= 10.0;
                continue;
            };
            let step = DVector::from_iterator(m, scaled.iter().zip(&scale).map(|(x, s)| x * s));
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
            if let Ok(r) = resid(&trial) {
                if r.norm() < res.norm() {
                    coef = trial;
                    res = r;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    trace.push(TraceEntry {
                        iteration: iterations,
                        residual_max: max_of(&res),
                        residual_l2: res.norm() / (n as f64).sqrt(),
                        step: step.norm(),
                    });
                    history.push(max_of(&res));
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            log::debug!("collocation stalled at iteration {iterations}");
        }
    }
    let mut cols = [(); 5].map(|_| Vec::with_capacity(n));
    for &x in u {
        let j = ans.jet(x, &coef);
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(j.derivative_at(k));
        }
    }
    let [r, rp, rpp, rppp, r4] = cols;
    let mut exponent = ExponentProfile::new(u.to_vec(), r, rp, rpp, rppp)?;
    exponent.rfourth = Some(r4);
    Ok(Solution {
        exponent,
        method: Method::Collocation,
        iterations,
        max_residual: max_of(&res),
        trace,
        degenerate: Vec::new(),
    })
}

/// Conformal weight `(c-K_r)^{1/2}(c-K)^r` of the flattened metric.
pub fn flat_weight(profile: &CurvatureProfile, rprof: &ExponentProfile) -> Result<Vec<f64>> {
    let kr = kr_of_function_r(profile, rprof)?;
    let c = profile.c();
    let mut bad = Vec::new();
    let mut margin = f64::INFINITY;
    let w: Vec<f64> = kr
        .values
        .iter()
        .zip(profile.k())
        .zip(&rprof.r)
        .enumerate()
        .map(|(i, ((&kr, &k), &r))| {
            if !(c - kr > eps_dom(c, kr)) {
                bad.push(i);
                margin = margin.min(c - kr);
            }
            (c - kr).sqrt() * (c - k).powf(r)
        })
        .collect();
    if !bad.is_empty() {
        return Err(Error::Infeasible { samples: bad, margin });
    }
    Ok(w)
}

/// Default tolerance on `max|K̄|`: `1e-3 max|K|` at the reference spacing.
pub fn flat_tolerance(profile: &CurvatureProfile, h: f64) -> f64 {
    let kmax = profile.k().iter().fold(0.0f64, |m, k| m.max(k.abs()));
    refinement_tolerance(1e-3 * kmax, h)
}

/// Builds `ḡ` on the metric grid and reports `max|K̄|` from the
/// differenced Gauss curvature.
pub fn verify_flat(
    profile: &CurvatureProfile,
    metric: &MetricGrid,
    rprof: &ExponentProfile,
    tolerance: f64,
) -> Result<Report> {
    rprof.check(profile)?;
    if metric.grid.u.len != profile.len() {
        return Err(Error::mismatch("metric and profile grids differ"));
    }
    let w = flat_weight(profile, rprof)?;
    let weight = ScalarField::from_u_samples(metric.grid, &w)?;
    let flat = metric.scaled(&weight)?;
    let kbar = gauss_curvature_fd(&flat)?;
    let mut report = Report::from_field("flattener", &kbar.map(f64::abs), tolerance);
    // K̄ (c-K_r)^{1/2}(c-K)^r against K + Δφ
    if let Ok(res) = flatten_residual(profile, rprof) {
        let gap = kbar.zip_with(&weight, |a, b| a * b)?.zip_with(
            &ScalarField::from_u_samples(metric.grid, &res.values.column(0).to_vec())?,
            |a, b| a - b,
        )?;
        report = report.with_detail(
            "residual_consistency",
            ResidualStats::of_field(&gap, BOUNDARY_LAYER).max,
        );
    }
    let deg = log_zero_samples(profile);
    if !deg.is_empty() {
        report = report.with_note(format!("log(c - K) vanishes next to samples {deg:?}"));
    }
    Ok(report)
}
