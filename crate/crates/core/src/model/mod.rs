//! State-space models, simulation and measurement data.

mod linear;
mod pendulum;
mod series;
mod sim;

pub use linear::ScalarLinear;
pub use pendulum::{dp_rhs, DoublePendulum, DoublePendulumParams, GRAVITY, TRUTH_DAMPING};
pub use series::{load_measurements, save_measurements, MeasurementSeries, SeriesMeta};
pub use sim::{aligned_dt, measure, sample_times, simulate, simulate_model, Trajectory};

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Admissible domain of a parameter, which decides its unconstrained
/// reparameterization during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamDomain {
    Real,
    Positive,
    UnitInterval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
    pub domain: ParamDomain,
}

impl ParamMeta {
    pub fn new(name: &str, unit: &str, lower: f64, upper: f64, domain: ParamDomain) -> Self {
        ParamMeta { name: name.into(), unit: unit.into(), lower, upper, domain }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// How the output map depends on the state.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementKind {
    /// `g = C·x + v`.
    LinearAdditive(Mat<f64>),
    /// Anything else; closed-form moments are not available.
    Nonlinear,
}

/// Continuous-time system `ẋ = f(x, u, w, t, θ)`, `y = g(x, u, v, t)`.
///
/// `f` and `g` are written against [`Real`] so they can be evaluated on plain
/// floats, dual numbers and tape variables alike.
pub trait StateSpaceModel: Sync {
    /// State rank `n`.
    fn state_dim(&self) -> usize;
    /// Output dimension `q`.
    fn output_dim(&self) -> usize;
    /// Input dimension `p`.
    fn input_dim(&self) -> usize {
        0
    }
    fn process_noise_dim(&self) -> usize {
        self.state_dim()
    }
    fn measurement_noise_dim(&self) -> usize {
        self.output_dim()
    }
    /// Parameter metadata; its length is `d`.
    fn params(&self) -> &[ParamMeta];

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Input signal `u(t)`; the zero signal unless overridden.
    fn input(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.input_dim()]
    }

    fn dynamics<S: Real>(&self, x: &[S], u: &[S], w: &[S], t: S, theta: &[S]) -> Vec<S>;

    fn output<S: Real>(&self, x: &[S], u: &[S], v: &[S], t: S) -> Vec<S>;

    fn measurement(&self) -> MeasurementKind;

    /// True when `∂f/∂w` and `∂g/∂v` do not depend on the state or `θ`, so
    /// they can be evaluated once on floats.
    fn additive_noise(&self) -> bool {
        false
    }

    /// Noise-free dynamics on floats.
    fn rhs(&self, x: &[f64], t: f64, theta: &[f64]) -> Vec<f64> {
        let u = self.input(t);
        let w = vec![0.0; self.process_noise_dim()];
        self.dynamics(x, &u, &w, t, theta)
    }

    /// Noise-free output on floats.
    fn clean_output(&self, x: &[f64], t: f64) -> Vec<f64> {
        let u = self.input(t);
        let v = vec![0.0; self.measurement_noise_dim()];
        self.output(x, &u, &v, t)
    }
}

/// Process and measurement noise covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub q: Mat<f64>,
    pub r: Mat<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn isotropic(n: usize, q0: f64, q_out: usize, r0: f64, seed: u64) -> Self {
        NoiseSpec { q: Mat::identity(n).scale(q0), r: Mat::identity(q_out).scale(r0), seed }
    }

    /// Checks symmetry and that `Q` is PSD. `R` must additionally be
    /// invertible when `need_invertible_r` is set (filtering); data
    /// generation accepts `R = 0`.
    pub fn validate(&self, need_invertible_r: bool) -> Result<()> {
        for (name, m) in [("Q", &self.q), ("R", &self.r)] {
            if m.rows() != m.cols() {
                return Err(Error::Config(format!("{name} must be square")));
            }
            if !m.is_finite() {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
            if m.max_abs_diff(&m.transpose()) > 1e-12 {
                return Err(Error::Config(format!("{name} must be symmetric")));
            }
            let min_eig = m.symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            if m.rows() > 0 && min_eig < -1e-12 {
                return Err(Error::Config(format!("{name} must be positive semidefinite")));
            }
        }
        if need_invertible_r {
            let min_eig = self.r.symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
            if min_eig <= 0.0 {
                return Err(Error::Config("R must be positive definite".into()));
            }
        }
        Ok(())
    }
}
