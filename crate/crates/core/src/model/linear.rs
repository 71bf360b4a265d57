use super::{MeasurementKind, ParamDomain, ParamMeta, StateSpaceModel};
use crate::autodiff::Real;
use crate::linalg::Mat;

/// First-order linear system `ẋ = a·x + w`, `y = c·x + v` with `θ = [a]`.
#[derive(Clone, Debug)]
pub struct ScalarLinear {
    pub c: f64,
    meta: Vec<ParamMeta>,
}

impl ScalarLinear {
    pub fn new(c: f64) -> Self {
        ScalarLinear { c, meta: vec![ParamMeta::new("a", "1/s", -2.0, 2.0, ParamDomain::Real)] }
    }
}

impl StateSpaceModel for ScalarLinear {
    fn state_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn params(&self) -> &[ParamMeta] {
        &self.meta
    }

    fn dynamics<S: Real>(&self, x: &[S], _u: &[S], w: &[S], _t: S, theta: &[S]) -> Vec<S> {
        vec![theta[0] * x[0] + w[0]]
    }

    fn output<S: Real>(&self, x: &[S], _u: &[S], v: &[S], _t: S) -> Vec<S> {
        vec![x[0] * self.c + v[0]]
    }

    fn measurement(&self) -> MeasurementKind {
        MeasurementKind::LinearAdditive(Mat::from_vec(1, 1, vec![self.c]))
    }

    fn additive_noise(&self) -> bool {
        true
    }
}
