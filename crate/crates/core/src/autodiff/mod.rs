//! Minimal automatic differentiation.
//!
//! Three pieces work together:
//!
//! - [`Real`]: the scalar abstraction every model and loss function is written
//!   against, so the same code runs on `f64`, on forward-mode [`Dual`]
//!   numbers and on tape [`Var`]s.
//! - [`Dual`]: forward-mode dual numbers, used for time derivatives of network
//!   outputs and for Jacobians of model functions.
//! - [`Tape`]: a reverse-mode tape whose nodes carry a value *and* a time
//!   tangent. The backward sweep propagates adjoints through both components,
//!   which gives gradients of expressions that contain time derivatives
//!   (forward-over-reverse).

mod dual;
mod jacobian;
mod tape;

pub use dual::{Dual, DualScalar};
pub use jacobian::{jacobian, jacobian_dual};
pub use tape::{GradientStore, NodeId, OpKind, Tape, Var};

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type supported by the differentiable model and loss code.
///
/// The elementary operation set is fixed: `+ - * /`, negation, `sin`, `cos`,
/// `tanh`, `exp`, `ln`, power by a constant and `sqrt`.
pub trait Real:
    Copy
    + Debug
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
    /// A constant (zero derivative in every direction).
    fn cst(c: f64) -> Self;
    /// Primal value.
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powc(self, c: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn square(self) -> Self {
        self * self
    }

    fn recip(self) -> Self {
        Self::one() / self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
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
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powc(self, c: f64) -> Self {
        f64::powf(self, c)
    }
}

/// Euclidean norm with a zero subgradient at the origin.
pub fn norm2<S: Real>(v: &[S]) -> S {
    let sq = v.iter().fold(S::zero(), |acc, &x| acc + x * x);
    if sq.value() == 0.0 {
        S::zero()
    } else {
        sq.sqrt()
    }
}

/// Sum of squares.
pub fn sum_sq<S: Real>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |acc, &x| acc + x * x)
}
