//! Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The state is a fixed-size array so the inner loops stay allocation free.
//! A caller-supplied guard marks states that must not be entered; when a step
//! cannot be shortened enough to stay admissible the integration halts at the
//! last accepted point instead of failing.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest step, relative to the span, before the integrator halts.
    pub min_step_fraction: f64,
}

impl Dopri5Options {
    pub fn with_tol(tol: f64) -> Self {
        Dopri5Options {
            rtol: tol,
            atol: tol,
            max_steps: 1_000_000,
            min_step_fraction: 1e-12,
        }
    }
}

/// How an integration ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    Halted { at: f64, reason: String },
}

#[derive(Debug, Clone)]
struct Segment<const D: usize> {
    t: f64,
    h: f64,
    coeffs: [[f64; D]; 5],
}

/// Piecewise quartic interpolant over the accepted steps.
#[derive(Debug, Clone)]
pub struct DenseSolution<const D: usize> {
    t0: f64,
    y0: [f64; D],
    segments: Vec<Segment<D>>,
    accepted: usize,
    rejected: usize,
}

impl<const D: usize> DenseSolution<D> {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map_or(self.t0, |s| s.t + s.h)
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    /// Interpolated state; `t` is clamped into the covered interval.
    pub fn eval(&self, t: f64) -> [f64; D] {
        if self.segments.is_empty() {
            return self.y0;
        }
        let idx = match self
            .segments
            .binary_search_by(|s| s.t.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let seg = &self.segments[idx];
        let theta = ((t - seg.t) / seg.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let r = &seg.coeffs;
        let mut y = [0.0; D];
        for k in 0..D {
            y[k] = r[0][k]
                + theta * (r[1][k] + theta1 * (r[2][k] + theta * (r[3][k] + theta1 * r[4][k])));
        }
        y
    }
}

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for k in 0..D {
        let mut acc = 0.0;
        for (a, v) in terms {
            acc += a * v[k];
        }
        out[k] += h * acc;
    }
    out
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end >= t0`.
///
/// `guard` returns a reason string for any state that must not be entered;
/// the right-hand side may also fail with an error, which is treated the same
/// way. Failures at the initial point are reported as errors.
pub fn integrate<const D: usize, F, G>(
    rhs: F,
    guard: G,
    t0: f64,
    y0: [f64; D],
    t_end: f64,
    opts: Dopri5Options,
) -> Result<(DenseSolution<D>, Termination)>
where
    F: FnMut(f64, &[f64; D]) -> Result<[f64; D]>,
    G: Fn(f64, &[f64; D]) -> Option<String>,
{
    integrate_with_stops(rhs, guard, t0, y0, t_end, &[], opts)
}

/// As [`integrate`], but every time in `stops` (sorted) is hit exactly by a
/// step endpoint, so evaluating the solution there carries the full
/// one-step accuracy instead of the interpolant's.
pub fn integrate_with_stops<const D: usize, F, G>(
    mut rhs: F,
    guard: G,
    t0: f64,
    y0: [f64; D],
    t_end: f64,
    stops: &[f64],
    opts: Dopri5Options,
) -> Result<(DenseSolution<D>, Termination)>
where
    F: FnMut(f64, &[f64; D]) -> Result<[f64; D]>,
    G: Fn(f64, &[f64; D]) -> Option<String>,
{
    if t_end < t0 {
        return Err(Error::domain("integration span must be non-decreasing"));
    }
    if let Some(reason) = guard(t0, &y0) {
        return Err(Error::domain(format!("initial state rejected: {reason}")));
    }
    let mut sol = DenseSolution {
        t0,
        y0,
        segments: Vec::new(),
        accepted: 0,
        rejected: 0,
    };
    let span = t_end - t0;
    if span == 0.0 {
        return Ok((sol, Termination::Completed));
    }
    let h_min = opts.min_step_fraction * span.max(1e-300);

    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y)?;

    // initial step guess from the derivative scale
    let mut h = {
        let mut d0 = 0.0f64;
        let mut d1 = 0.0f64;
        for k in 0..D {
            let sc = opts.atol + opts.rtol * y[k].abs();
            d0 += (y[k] / sc).powi(2);
            d1 += (k1[k] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / D as f64).sqrt(), (d1 / D as f64).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0.min(span)
    };
    let mut last_reason = String::new();
    let mut next_stop = 0usize;

    loop {
        if t >= t_end {
            return Ok((sol, Termination::Completed));
        }
        while next_stop < stops.len() && stops[next_stop] <= t + 1e-14 * span {
            next_stop += 1;
        }
        let target = stops
            .get(next_stop)
            .copied()
            .filter(|&x| x < t_end)
            .unwrap_or(t_end);
        if sol.accepted + sol.rejected >= opts.max_steps {
            return Err(Error::NonConvergence {
                iterations: opts.max_steps,
                best_residual: f64::NAN,
                history: Vec::new(),
                best_iterate: Vec::new(),
            });
        }
        let landing = t + h >= target - 1e-14 * span;
        let h_step = if landing { target - t } else { h };
        match try_step(&mut rhs, &guard, t, &y, &k1, h_step, &opts) {
            Ok(step) => {
                if step.err <= 1.0 {
                    let coeffs = dense_coeffs(&y, &step, h_step);
                    sol.segments.push(Segment { t, h: h_step, coeffs });
                    sol.accepted += 1;
                    t = if landing { target } else { t + h_step };
                    y = step.y1;
                    k1 = step.k7;
                    let fac = (0.9 * step.err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                    h = if landing { h.max(h_step * fac) } else { h_step * fac };
                } else {
                    sol.rejected += 1;
                    let fac = (0.9 * step.err.powf(-0.2)).clamp(0.2, 1.0);
                    h = h_step * fac;
                }
            }
            Err(reason) => {
                sol.rejected += 1;
                last_reason = reason;
                h = h_step * 0.25;
            }
        }
        if h < h_min {
            if last_reason.is_empty() {
                last_reason = format!("step size fell below {h_min:e}");
            }
            return Ok((
                sol,
                Termination::Halted {
                    at: t,
                    reason: last_reason,
                },
            ));
        }
    }
}

struct Step<const D: usize> {
    y1: [f64; D],
    k: [[f64; D]; 6],
    k7: [f64; D],
    err: f64,
}

fn try_step<const D: usize, F, G>(
    rhs: &mut F,
    guard: &G,
    t: f64,
    y: &[f64; D],
    k1: &[f64; D],
    h: f64,
    opts: &Dopri5Options,
) -> std::result::Result<Step<D>, String>
where
    F: FnMut(f64, &[f64; D]) -> Result<[f64; D]>,
    G: Fn(f64, &[f64; D]) -> Option<String>,
{
    let mut eval = |tt: f64, yy: [f64; D]| -> std::result::Result<[f64; D], String> {
        if let Some(r) = guard(tt, &yy) {
            return Err(r);
        }
        rhs(tt, &yy).map_err(|e| e.to_string())
    };
    let k2 = eval(t + C2 * h, axpy(y, h, &[(A21, k1)]))?;
    let k3 = eval(t + C3 * h, axpy(y, h, &[(A31, k1), (A32, &k2)]))?;
    let k4 = eval(t + C4 * h, axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?;
    let k5 = eval(
        t + C5 * h,
        axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    )?;
    let k6 = eval(
        t + h,
        axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    )?;
    let y1 = axpy(
        y,
        h,
        &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
    );
    let k7 = eval(t + h, y1)?;
    let mut err = 0.0;
    for k in 0..D {
        let e = h
            * (E1 * k1[k] + E3 * k3[k] + E4 * k4[k] + E5 * k5[k] + E6 * k6[k] + E7 * k7[k]);
        let sc = opts.atol + opts.rtol * y[k].abs().max(y1[k].abs());
        err += (e / sc).powi(2);
    }
    Ok(Step {
        y1,
        k: [*k1, k2, k3, k4, k5, k6],
        k7,
        err: (err / D as f64).sqrt(),
    })
}

fn dense_coeffs<const D: usize>(y0: &[f64; D], step: &Step<D>, h: f64) -> [[f64; D]; 5] {
    let [k1, _k2, k3, k4, k5, k6] = &step.k;
    let k7 = &step.k7;
    let mut r = [[0.0; D]; 5];
    for k in 0..D {
        let ydiff = step.y1[k] - y0[k];
        let bspl = h * k1[k] - ydiff;
        r[0][k] = y0[k];
        r[1][k] = ydiff;
        r[2][k] = bspl;
        r[3][k] = ydiff - h * k7[k] - bspl;
        r[4][k] = h
            * (D1 * k1[k] + D3 * k3[k] + D4 * k4[k] + D5 * k5[k] + D6 * k6[k] + D7 * k7[k]);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(_t: f64, y: &[f64; 2]) -> Result<[f64; 2]> {
        Ok([y[1], -y[0]])
    }

    #[test]
    fn harmonic_oscillator_end_and_dense_values() {
        let (sol, term) = integrate(
            harmonic,
            |_, _| None,
            0.0,
            [0.0, 1.0],
            3.0,
            Dopri5Options::with_tol(1e-11),
        )
        .unwrap();
        assert_eq!(term, Termination::Completed);
        let end = sol.eval(3.0);
        assert!((end[0] - 3f64.sin()).abs() < 1e-9);
        for i in 0..=60 {
            let t = 0.05 * i as f64;
            let y = sol.eval(t);
            assert!((y[0] - t.sin()).abs() < 1e-9, "t = {t}");
            assert!((y[1] - t.cos()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn guard_halts_before_forbidden_region() {
        // y' = 1 from 0, forbidden once y > 0.5
        let (sol, term) = integrate(
            |_, _: &[f64; 1]| Ok([1.0]),
            |_, y| (y[0] > 0.5).then(|| "past barrier".to_string()),
            0.0,
            [0.0],
            1.0,
            Dopri5Options::with_tol(1e-10),
        )
        .unwrap();
        match term {
            Termination::Halted { at, reason } => {
                assert!(at <= 0.5 && at > 0.5 - 1e-9, "halted at {at}");
                assert_eq!(reason, "past barrier");
            }
            other => panic!("expected halt, got {other:?}"),
        }
        assert!(sol.t_end() <= 0.5);
    }

    #[test]
    fn empty_span_has_no_segments() {
        let (sol, term) = integrate(
            harmonic,
            |_, _| None,
            1.0,
            [2.0, 3.0],
            1.0,
            Dopri5Options::with_tol(1e-8),
        )
        .unwrap();
        assert_eq!(term, Termination::Completed);
        assert_eq!(sol.eval(1.0), [2.0, 3.0]);
    }
}
