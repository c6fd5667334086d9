//! Truncated Taylor arithmetic.
//!
//! [`Jet`] carries normalized Taylor coefficients `f^(k)(u) / k!` of a function of one
//! variable, and [`Dual2`] carries a value plus its two first partials for functions
//! of `(u, s)`. Both are used to differentiate closed-form expressions exactly instead
//! of expanding them by hand.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Univariate Taylor jet with `N` normalized coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet<const N: usize>(pub [f64; N]);

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = v;
        Jet(c)
    }

    /// The independent variable at `u`.
    pub fn variable(u: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = u;
        if N > 1 {
            c[1] = 1.0;
        }
        Jet(c)
    }

    /// Builds a jet from plain derivatives `[f, f', f'', ...]`.
    pub fn from_derivatives(d: &[f64]) -> Self {
        let mut c = [0.0; N];
        let mut fact = 1.0;
        for (k, slot) in c.iter_mut().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            if let Some(v) = d.get(k) {
                *slot = v / fact;
            }
        }
        Jet(c)
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// The `k`-th plain derivative.
    pub fn derivative_at(&self, k: usize) -> f64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        self.0[k] * fact
    }

    /// Jet of `f'`; the top coefficient is lost.
    pub fn derivative(&self) -> Self {
        let mut c = [0.0; N];
        for k in 0..N.saturating_sub(1) {
            c[k] = (k + 1) as f64 * self.0[k + 1];
        }
        Jet(c)
    }

    pub fn scale(&self, a: f64) -> Self {
        Jet(self.0.map(|x| a * x))
    }

    pub fn exp(&self) -> Self {
        let mut e = [0.0; N];
        e[0] = self.0[0].exp();
        for k in 1..N {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.0[j] * e[k - j];
            }
            e[k] = acc / k as f64;
        }
        Jet(e)
    }

    /// Natural logarithm; `None` when the value is not positive.
    pub fn ln(&self) -> Option<Self> {
        let a0 = self.0[0];
        if !(a0 > 0.0) {
            return None;
        }
        let mut l = [0.0; N];
        l[0] = a0.ln();
        for k in 1..N {
            let mut acc = 0.0;
            for j in 1..k {
                acc += j as f64 * l[j] * self.0[k - j];
            }
            l[k] = (self.0[k] - acc / k as f64) / a0;
        }
        Some(Jet(l))
    }

    /// `self^p` for positive base.
    pub fn powf(&self, p: f64) -> Option<Self> {
        Some(self.ln()?.scale(p).exp())
    }

    /// `self^p` with a jet exponent, positive base.
    pub fn powj(&self, p: &Self) -> Option<Self> {
        Some((*p * self.ln()?).exp())
    }

    pub fn sqrt(&self) -> Option<Self> {
        self.powf(0.5)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a += b;
        }
        Jet(c)
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a -= b;
        }
        Jet(c)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet(self.0.map(|x| -x))
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; N];
        for k in 0..N {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.0[j] * o.0[k - j];
            }
            c[k] = acc;
        }
        Jet(c)
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let mut q = [0.0; N];
        for k in 0..N {
            let mut acc = self.0[k];
            for j in 1..=k {
                acc -= o.0[j] * q[k - j];
            }
            q[k] = acc / o.0[0];
        }
        Jet(q)
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.0[0] += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.0[0] -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.scale(o)
    }
}

impl<const N: usize> Add<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn add(self, o: Jet<N>) -> Jet<N> {
        o + self
    }
}

impl<const N: usize> Sub<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn sub(self, o: Jet<N>) -> Jet<N> {
        -o + self
    }
}

impl<const N: usize> Mul<Jet<N>> for f64 {
    type Output = Jet<N>;
    fn mul(self, o: Jet<N>) -> Jet<N> {
        o.scale(self)
    }
}

/// A value with its partial derivatives along `u` and `s`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual2 {
    pub v: f64,
    pub du: f64,
    pub ds: f64,
}

impl Dual2 {
    pub fn new(v: f64, du: f64, ds: f64) -> Self {
        Dual2 { v, du, ds }
    }

    pub fn constant(v: f64) -> Self {
        Dual2 { v, du: 0.0, ds: 0.0 }
    }

    /// Partial derivative along axis 0 (`u`) or 1 (`s`).
    pub fn partial(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.du
        } else {
            self.ds
        }
    }
}

impl From<f64> for Dual2 {
    fn from(v: f64) -> Self {
        Dual2::constant(v)
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual2::new(self.v + o.v, self.du + o.du, self.ds + o.ds)
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual2::new(self.v - o.v, self.du - o.du, self.ds - o.ds)
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Dual2::new(-self.v, -self.du, -self.ds)
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual2::new(
            self.v * o.v,
            self.du * o.v + self.v * o.du,
            self.ds * o.v + self.v * o.ds,
        )
    }
}

impl Div for Dual2 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        Dual2::new(q, (self.du - q * o.du) * inv, (self.ds - q * o.ds) * inv)
    }
}
