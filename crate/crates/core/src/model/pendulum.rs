//! Planar double pendulum with point masses on massless rods.
//!
//! State `[φ1, φ̇1, φ2, φ̇2]`, parameters `θ = [l1, l2, M]` with
//! `M = m2 / (m1 + m2)`. The two equations of motion are coupled through the
//! accelerations; they are resolved with an exact 2×2 solve.

use serde::{Deserialize, Serialize};

use super::{MeasurementKind, ParamDomain, ParamMeta, StateSpaceModel};
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Standard gravity in m/s².
pub const GRAVITY: f64 = 9.81;

/// Damping used for the ground-truth system, in 1/s.
pub const TRUTH_DAMPING: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublePendulumParams {
    /// Upper rod length in m.
    pub l1: f64,
    /// Lower rod length in m.
    pub l2: f64,
    /// Mass ratio `m2 / (m1 + m2)`.
    pub mass_ratio: f64,
    pub gravity: f64,
    /// Viscous damping on both joints, in 1/s.
    pub damping: f64,
}

impl DoublePendulumParams {
    pub fn new(l1: f64, l2: f64, mass_ratio: f64) -> Self {
        DoublePendulumParams { l1, l2, mass_ratio, gravity: GRAVITY, damping: 0.0 }
    }

    pub fn from_masses(l1: f64, l2: f64, m1: f64, m2: f64) -> Self {
        Self::new(l1, l2, m2 / (m1 + m2))
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn theta(&self) -> [f64; 3] {
        [self.l1, self.l2, self.mass_ratio]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(Error::Config(format!("rod lengths must be positive (l1 = {}, l2 = {})", self.l1, self.l2)));
        }
        if !(self.mass_ratio > 0.0 && self.mass_ratio < 1.0) {
            return Err(Error::Config(format!("mass ratio must lie in (0, 1), got {}", self.mass_ratio)));
        }
        Ok(())
    }

    /// Total mechanical energy divided by `m1 + m2`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let (p1, w1, p2, w2) = (x[0], x[1], x[2], x[3]);
        let (l1, l2, m, g) = (self.l1, self.l2, self.mass_ratio, self.gravity);
        let kinetic = 0.5 * l1 * l1 * w1 * w1 + 0.5 * m * l2 * l2 * w2 * w2 + m * l1 * l2 * w1 * w2 * (p1 - p2).cos();
        let potential = -g * l1 * p1.cos() - m * g * l2 * p2.cos();
        kinetic + potential
    }

    /// Residual of both implicit equations of motion for given accelerations.
    pub fn implicit_residual(&self, x: &[f64], acc: [f64; 2]) -> [f64; 2] {
        let (p1, w1, p2, w2) = (x[0], x[1], x[2], x[3]);
        let (l1, l2, m, g, d) = (self.l1, self.l2, self.mass_ratio, self.gravity, self.damping);
        let c12 = (p1 - p2).cos();
        let s12 = (p1 - p2).sin();
        let r1 = acc[0] + m * l2 / l1 * (acc[1] * c12 + w2 * w2 * s12) + g / l1 * p1.sin() + d * w1;
        let r2 = acc[1] + l1 / l2 * (acc[0] * c12 - w1 * w1 * s12) + g / l2 * p2.sin() + d * w2;
        [r1, r2]
    }
}

/// State derivative of the (optionally damped) double pendulum.
pub fn dp_rhs(x: &[f64], p: &DoublePendulumParams) -> Result<[f64; 4]> {
    p.validate()?;
    let c12 = (x[0] - x[2]).cos();
    let det = 1.0 - p.mass_ratio * c12 * c12;
    if det.abs() < 1e-12 {
        return Err(Error::Singular("double pendulum mass matrix".into()));
    }
    let acc = accelerations(x, p.l1, p.l2, p.mass_ratio, p.gravity, p.damping);
    Ok([x[1], acc[0], x[3], acc[1]])
}

/// Closed-form solution of
/// `[[1, a], [b, 1]]·[φ̈1, φ̈2] = [r1, r2]` with
/// `a = M·l2/l1·c12`, `b = l1/l2·c12`.
fn accelerations<S: Real>(x: &[S], l1: S, l2: S, m: S, g: f64, damping: f64) -> [S; 2] {
    let (p1, w1, p2, w2) = (x[0], x[1], x[2], x[3]);
    let c12 = (p1 - p2).cos();
    let s12 = (p1 - p2).sin();
    let l2_l1 = l2 / l1;
    let l1_l2 = l1 / l2;
    let a = m * l2_l1 * c12;
    let b = l1_l2 * c12;
    let r1 = -(m * l2_l1 * w2 * w2 * s12) - p1.sin() * g / l1 - w1 * damping;
    let r2 = l1_l2 * w1 * w1 * s12 - p2.sin() * g / l2 - w2 * damping;
    let inv_det = (-(a * b) + 1.0).recip();
    [(r1 - a * r2) * inv_det, (r2 - b * r1) * inv_det]
}

/// Double pendulum as an identification model: `ẋ = f(x; θ) + w`, `y = x + v`.
#[derive(Clone, Debug)]
pub struct DoublePendulum {
    pub gravity: f64,
    pub damping: f64,
    meta: Vec<ParamMeta>,
}

impl DoublePendulum {
    /// The undamped model used for identification.
    pub fn undamped() -> Self {
        Self::with_damping(0.0)
    }

    /// The damped system used to generate ground-truth data.
    pub fn damped() -> Self {
        Self::with_damping(TRUTH_DAMPING)
    }

    pub fn with_damping(damping: f64) -> Self {
        DoublePendulum {
            gravity: GRAVITY,
            damping,
            meta: vec![
                ParamMeta::new("l1", "m", 0.0, 1.0, ParamDomain::Positive),
                ParamMeta::new("l2", "m", 0.0, 1.0, ParamDomain::Positive),
                ParamMeta::new("M", "-", 0.0, 1.0, ParamDomain::UnitInterval),
            ],
        }
    }

    pub fn params_for(&self, theta: &[f64]) -> DoublePendulumParams {
        DoublePendulumParams {
            l1: theta[0],
            l2: theta[1],
            mass_ratio: theta[2],
            gravity: self.gravity,
            damping: self.damping,
        }
    }
}

impl StateSpaceModel for DoublePendulum {
    fn state_dim(&self) -> usize {
        4
    }

    fn output_dim(&self) -> usize {
        4
    }

    fn params(&self) -> &[ParamMeta] {
        &self.meta
    }

    fn dynamics<S: Real>(&self, x: &[S], _u: &[S], w: &[S], _t: S, theta: &[S]) -> Vec<S> {
        let acc = accelerations(x, theta[0], theta[1], theta[2], self.gravity, self.damping);
        vec![x[1] + w[0], acc[0] + w[1], x[3] + w[2], acc[1] + w[3]]
    }

    fn output<S: Real>(&self, x: &[S], _u: &[S], v: &[S], _t: S) -> Vec<S> {
        x.iter().zip(v).map(|(&xi, &vi)| xi + vi).collect()
    }

    fn measurement(&self) -> MeasurementKind {
        MeasurementKind::LinearAdditive(Mat::identity(4))
    }

    fn additive_noise(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jacobian, DualScalar};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn showcase() -> DoublePendulumParams {
        DoublePendulumParams::from_masses(0.6, 0.9, 0.3, 0.4)
    }

    #[test]
    fn equilibria_are_stationary() {
        let p = showcase();
        assert_eq!(dp_rhs(&[0.0; 4], &p).unwrap(), [0.0; 4]);
        let inv = dp_rhs(&[PI, 0.0, PI, 0.0], &p).unwrap();
        for v in inv {
            assert!(v.abs() < 1e-14, "{inv:?}");
        }
    }

    #[test]
    fn accelerations_match_dense_solve() {
        let p = DoublePendulumParams::new(0.6, 0.9, 4.0 / 7.0);
        let x = [0.1, 0.0, -0.05, 0.0];
        let got = dp_rhs(&x, &p).unwrap();
        // Assemble the implicit system M·acc = rhs and solve it generically.
        let c12 = (x[0] - x[2]).cos();
        let s12 = (x[0] - x[2]).sin();
        let mass = nalgebra::Matrix2::new(1.0, p.mass_ratio * p.l2 / p.l1 * c12, p.l1 / p.l2 * c12, 1.0);
        let rhs = nalgebra::Vector2::new(
            -p.mass_ratio * p.l2 / p.l1 * x[3] * x[3] * s12 - p.gravity / p.l1 * x[0].sin(),
            p.l1 / p.l2 * x[1] * x[1] * s12 - p.gravity / p.l2 * x[2].sin(),
        );
        let acc = mass.lu().solve(&rhs).unwrap();
        assert!((got[1] - acc[0]).abs() < 1e-13);
        assert!((got[3] - acc[1]).abs() < 1e-13);
        assert_eq!(got[0], 0.0);
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn small_angle_normal_modes() {
        // Linearized about the origin the accelerations are -K·φ with
        // K = [[1, a],[b, 1]]^{-1}·diag(g/l1, g/l2); its eigenvalues are the
        // squared normal-mode frequencies from the characteristic polynomial.
        let p = DoublePendulumParams::new(0.6, 0.9, 4.0 / 7.0);
        let f = |x: &[DualScalar]| {
            let acc = accelerations(
                x,
                DualScalar::cst(p.l1),
                DualScalar::cst(p.l2),
                DualScalar::cst(p.mass_ratio),
                p.gravity,
                0.0,
            );
            vec![acc[0], acc[1]]
        };
        let j = jacobian(f, &[0.0; 4]).unwrap();
        let k = nalgebra::Matrix2::new(-j[(0, 0)], -j[(0, 2)], -j[(1, 0)], -j[(1, 2)]);
        let tr = k.trace();
        let det = k.determinant();
        let (g, l1, l2, m) = (p.gravity, p.l1, p.l2, p.mass_ratio);
        // Textbook: ω⁴(1-M) - ω² g (1/l1 + 1/l2) + g²/(l1 l2) = 0.
        let sum = g * (1.0 / l1 + 1.0 / l2) / (1.0 - m);
        let prod = g * g / (l1 * l2) / (1.0 - m);
        assert!((tr - sum).abs() < 1e-10);
        assert!((det - prod).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(dp_rhs(&[0.0; 4], &DoublePendulumParams::new(-0.1, 0.5, 0.5)).is_err());
        assert!(dp_rhs(&[0.0; 4], &DoublePendulumParams::new(0.1, 0.5, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn odd_symmetry(p1 in -3.0..3.0f64, w1 in -3.0..3.0f64, p2 in -3.0..3.0f64, w2 in -3.0..3.0f64) {
            let p = showcase();
            let a = dp_rhs(&[p1, w1, p2, w2], &p).unwrap();
            let b = dp_rhs(&[-p1, -w1, -p2, -w2], &p).unwrap();
            for k in 0..4 {
                prop_assert_eq!(a[k], -b[k]);
            }
        }

        #[test]
        fn implicit_equations_hold(p1 in -3.0..3.0f64, w1 in -3.0..3.0f64, p2 in -3.0..3.0f64, w2 in -3.0..3.0f64,
                                   l1 in 0.1..1.0f64, l2 in 0.1..1.0f64, m in 0.05..0.95f64, damping in 0.0..0.1f64) {
            let p = DoublePendulumParams::new(l1, l2, m).with_damping(damping);
            let x = [p1, w1, p2, w2];
            let d = dp_rhs(&x, &p).unwrap();
            let r = p.implicit_residual(&x, [d[1], d[3]]);
            prop_assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12, "{:?}", r);
        }
    }
}
