use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

/// Forward-mode dual number `re + eps·ε` over any [`Real`] scalar.
///
/// Nesting is allowed: `Dual<Var>` records a directional derivative on a
/// tape so that it can itself be differentiated in reverse mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

/// Dual number over `f64` carrying a derivative with respect to time.
pub type DualScalar = Dual<f64>;

impl<S: Real> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Dual { re, eps }
    }

    /// Independent variable: tangent 1.
    pub fn variable(re: S) -> Self {
        Dual { re, eps: S::one() }
    }

    pub fn constant(re: S) -> Self {
        Dual { re, eps: S::zero() }
    }

    #[inline]
    fn chain(self, f: S, df: S) -> Self {
        Dual { re: f, eps: df * self.eps }
    }
}

impl<S: Real> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<S: Real> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<S: Real> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, eps: self.eps * o.re + self.re * o.eps }
    }
}

impl<S: Real> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = o.re.recip();
        let re = self.re * inv;
        Dual { re, eps: (self.eps - re * o.eps) * inv }
    }
}

impl<S: Real> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

impl<S: Real> Add<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual { re: self.re + c, eps: self.eps }
    }
}

impl<S: Real> Sub<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual { re: self.re - c, eps: self.eps }
    }
}

impl<S: Real> Mul<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Dual { re: self.re * c, eps: self.eps * c }
    }
}

impl<S: Real> Div<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Dual { re: self.re / c, eps: self.eps / c }
    }
}

impl<S: Real> Real for Dual<S> {
    fn cst(c: f64) -> Self {
        Dual { re: S::cst(c), eps: S::zero() }
    }

    fn value(&self) -> f64 {
        self.re.value()
    }

    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }

    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, S::one() - t * t)
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }

    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, (s * 2.0).recip())
    }

    fn powc(self, c: f64) -> Self {
        self.chain(self.re.powc(c), self.re.powc(c - 1.0) * c)
    }
}
