//! Truncated Taylor-jet scalars.
//!
//! A `Jet<N>` carries the first `N` Taylor coefficients of a function of a
//! scalar path parameter t: `f(x + t v) = c[0] + c[1] t + ... + c[N-1] t^{N-1}`.
//! Propagating jets through arithmetic yields exact derivatives up to order
//! `N-1` along the seeded direction; one mechanism covers orders 1 through 4.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::polygamma::{digamma, polygamma2, polygamma3, trigamma};
use statrs::function::gamma::ln_gamma as lgamma_f64;

/// Scalar interface shared by `f64` and [`Jet`]: the elementary operations the
/// model log-densities are allowed to use. Order-0 evaluation goes through
/// plain `f64`, so it reproduces real arithmetic bit for bit.
pub trait AdScalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(c: f64) -> Self;
    /// Order-0 coefficient (the point value).
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    /// Standard logistic function 1 / (1 + exp(-x)).
    fn logistic(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn ln_gamma(self) -> Self;
}

impl AdScalar for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn logistic(self) -> Self {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        if self > 0.0 {
            lgamma_f64(self)
        } else {
            f64::NAN
        }
    }
}

/// Truncated Taylor series with `N` coefficients (derivative order `N - 1`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub c: [f64; N],
}

impl<const N: usize> Jet<N> {
    /// Seed a jet at `x` with unit direction weight `dot` on the path parameter.
    #[inline]
    pub fn variable(x: f64, dot: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = x;
        if N > 1 {
            c[1] = dot;
        }
        Jet { c }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    /// Compose the outer Taylor coefficients `d[r] = f^(r)(c0) / r!` with this
    /// series: Horner evaluation of `sum_r d[r] (u - c0)^r`, exact to order N-1.
    #[inline]
    fn compose(self, d: [f64; N]) -> Self {
        let mut w = self;
        w.c[0] = 0.0;
        let mut out = Jet::constant(d[N - 1]);
        for r in (0..N - 1).rev() {
            out = out * w + d[r];
        }
        out
    }
}

impl<const N: usize> AdScalar for Jet<N> {
    #[inline]
    fn constant(c0: f64) -> Self {
        let mut c = [0.0; N];
        c[0] = c0;
        Jet { c }
    }

    #[inline]
    fn value(&self) -> f64 {
        self.c[0]
    }

    fn exp(self) -> Self {
        let u = &self.c;
        let mut g = [0.0; N];
        g[0] = u[0].exp();
        for r in 1..N {
            let mut acc = 0.0;
            for j in 1..=r {
                acc += j as f64 * u[j] * g[r - j];
            }
            g[r] = acc / r as f64;
        }
        Jet { c: g }
    }

    fn ln(self) -> Self {
        let u = &self.c;
        let mut g = [0.0; N];
        g[0] = u[0].ln();
        for r in 1..N {
            let mut acc = 0.0;
            for j in 1..r {
                acc += j as f64 * g[j] * u[r - j];
            }
            g[r] = (u[r] - acc / r as f64) / u[0];
        }
        Jet { c: g }
    }

    fn ln_1p(self) -> Self {
        let u0 = self.c[0];
        let b = 1.0 + u0;
        let mut d = [0.0; N];
        d[0] = u0.ln_1p();
        let mut p = 1.0;
        for (r, item) in d.iter_mut().enumerate().skip(1) {
            p *= b;
            *item = if r % 2 == 1 { 1.0 } else { -1.0 } / (r as f64 * p);
        }
        self.compose(d)
    }

    fn sqrt(self) -> Self {
        let u = &self.c;
        let mut g = [0.0; N];
        g[0] = u[0].sqrt();
        for r in 1..N {
            let mut acc = 0.0;
            for j in 1..r {
                acc += g[j] * g[r - j];
            }
            g[r] = (u[r] - acc) / (2.0 * g[0]);
        }
        Jet { c: g }
    }

    fn tanh(self) -> Self {
        let t = self.c[0].tanh();
        let s = 1.0 - t * t; // sech^2
        let mut d = [0.0; N];
        d[0] = t;
        if N > 1 {
            d[1] = s;
        }
        if N > 2 {
            d[2] = -t * s;
        }
        if N > 3 {
            d[3] = s * (6.0 * t * t - 2.0) / 6.0;
        }
        if N > 4 {
            d[4] = s * t * (16.0 - 24.0 * t * t) / 24.0;
        }
        self.compose(d)
    }

    fn logistic(self) -> Self {
        let s = self.c[0].logistic();
        let s1 = s * (1.0 - s);
        let s2 = s1 * (1.0 - 2.0 * s);
        let s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
        let s4 = s3 * (1.0 - 2.0 * s) - 6.0 * s1 * s2;
        let mut d = [0.0; N];
        d[0] = s;
        if N > 1 {
            d[1] = s1;
        }
        if N > 2 {
            d[2] = s2 / 2.0;
        }
        if N > 3 {
            d[3] = s3 / 6.0;
        }
        if N > 4 {
            d[4] = s4 / 24.0;
        }
        self.compose(d)
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Jet::constant(1.0);
        }
        if n < 0 {
            return Jet::constant(1.0) / self.powi(-n);
        }
        let mut acc = self;
        for _ in 1..n {
            acc = acc * self;
        }
        acc
    }

    fn powf(self, p: f64) -> Self {
        let u0 = self.c[0];
        let mut d = [0.0; N];
        d[0] = u0.powf(p);
        let mut fall = 1.0;
        let mut fct = 1.0;
        for (r, item) in d.iter_mut().enumerate().skip(1) {
            fall *= p - (r as f64 - 1.0);
            fct *= r as f64;
            *item = fall / fct * u0.powf(p - r as f64);
        }
        self.compose(d)
    }

    fn ln_gamma(self) -> Self {
        let u0 = self.c[0];
        if u0 <= 0.0 {
            return Jet::constant(f64::NAN);
        }
        let mut d = [0.0; N];
        d[0] = lgamma_f64(u0);
        if N > 1 {
            d[1] = digamma(u0);
        }
        if N > 2 {
            d[2] = trigamma(u0) / 2.0;
        }
        if N > 3 {
            d[3] = polygamma2(u0) / 6.0;
        }
        if N > 4 {
            d[4] = polygamma3(u0) / 24.0;
        }
        self.compose(d)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        for i in 0..N {
            self.c[i] += rhs.c[i];
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        for i in 0..N {
            self.c[i] -= rhs.c[i];
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut c = [0.0; N];
        for i in 0..N {
            let ai = self.c[i];
            if ai != 0.0 {
                for j in 0..N - i {
                    c[i + j] += ai * rhs.c[j];
                }
            }
        }
        Jet { c }
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let mut g = [0.0; N];
        for r in 0..N {
            let mut acc = self.c[r];
            for j in 0..r {
                acc -= g[j] * rhs.c[r - j];
            }
            g[r] = acc / rhs.c[0];
        }
        Jet { c: g }
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for v in self.c.iter_mut() {
            *v = -*v;
        }
        self
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.c[0] += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.c[0] -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= rhs;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn div(mut self, rhs: f64) -> Self {
        for v in self.c.iter_mut() {
            *v /= rhs;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_series_at_zero() {
        let x = Jet::<5>::variable(0.0, 1.0);
        let g = x.exp();
        let expect = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0];
        for (a, b) in g.c.iter().zip(expect) {
            assert_relative_eq!(a, &b, epsilon = 1e-14);
        }
    }

    #[test]
    fn ln_inverts_exp() {
        let x = Jet::<5>::variable(0.7, 1.0);
        let g = x.exp().ln();
        assert_relative_eq!(g.c[0], 0.7, epsilon = 1e-13);
        assert_relative_eq!(g.c[1], 1.0, epsilon = 1e-13);
        for r in 2..5 {
            assert!(g.c[r].abs() < 1e-13);
        }
    }

    #[test]
    fn division_is_mul_inverse() {
        let a = Jet::<4> { c: [2.0, -1.0, 0.5, 3.0] };
        let b = Jet::<4> { c: [1.5, 2.0, -0.25, 0.1] };
        let q = (a * b) / b;
        for (x, y) in q.c.iter().zip(a.c) {
            assert_relative_eq!(x, &y, epsilon = 1e-13);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let x = Jet::<5>::variable(4.0, 1.0);
        let g = x.sqrt();
        let sq = g * g;
        for (a, b) in sq.c.iter().zip(x.c) {
            assert_relative_eq!(a, &b, epsilon = 1e-13);
        }
    }

    #[test]
    fn tanh_series_matches_known_expansion() {
        // tanh(t) = t - t^3/3 + 2 t^5/15 ...
        let x = Jet::<5>::variable(0.0, 1.0);
        let g = x.tanh();
        let expect = [0.0, 1.0, 0.0, -1.0 / 3.0, 0.0];
        for (a, b) in g.c.iter().zip(expect) {
            assert_relative_eq!(a, &b, epsilon = 1e-14);
        }
    }

    #[test]
    fn logistic_fourth_order_vs_finite_differences() {
        let x0 = 0.3;
        let g = Jet::<5>::variable(x0, 1.0).logistic();
        let h = 1e-2;
        let f = |x: f64| x.logistic();
        // central fourth derivative stencil
        let d4 = (f(x0 + 2.0 * h) - 4.0 * f(x0 + h) + 6.0 * f(x0) - 4.0 * f(x0 - h)
            + f(x0 - 2.0 * h))
            / h.powi(4);
        assert_relative_eq!(24.0 * g.c[4], d4, epsilon = 1e-4);
    }

    #[test]
    fn ln_gamma_derivative_is_digamma() {
        let g = Jet::<3>::variable(3.7, 1.0).ln_gamma();
        assert_relative_eq!(g.c[1], digamma(3.7), epsilon = 1e-13);
        assert_relative_eq!(2.0 * g.c[2], trigamma(3.7), epsilon = 1e-13);
    }

    #[test]
    fn powf_matches_exp_ln_route() {
        let x = Jet::<5>::variable(2.3, 1.0);
        let direct = x.powf(1.7);
        let via = (x.ln() * 1.7).exp();
        for (a, b) in direct.c.iter().zip(via.c) {
            assert_relative_eq!(a, &b, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_domains_produce_nan() {
        let x = Jet::<3>::variable(-1.0, 1.0);
        assert!(!x.ln().is_finite());
        assert!(!x.ln_gamma().is_finite());
    }
}
